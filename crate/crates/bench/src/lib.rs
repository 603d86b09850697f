//! Criterion benchmarks for raterlens; see `benches/`.
