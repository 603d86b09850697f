//! Correlation, variance partitioning and paired significance tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::array::{ensure_same_shape, LabelMap, ScalarMap};
use crate::error::{Error, Result};

/// Observation unit of a correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One observation per image: the map's mean over the region.
    #[default]
    PerImage,
    /// Every voxel of every image, pooled.
    PerVoxel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    /// Two-sided, from `t = r sqrt((n - 2) / (1 - r^2))` with `n - 2` dof.
    pub p_value: f64,
    pub n: usize,
    pub granularity: Granularity,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation with its two-sided p-value.
pub fn pearson(x: &[f64], y: &[f64], granularity: Granularity) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "pearson inputs have {} and {} observations",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "pearson needs at least 3 observations, got {n}"
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first pearson argument"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second pearson argument"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(CorrelationResult {
        r,
        p_value: correlation_p_value(r, n),
        n,
        granularity,
    })
}

fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

/// Which pixels enter a per-image mean.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    All,
    /// Non-background pixels of the paired label map (one per image).
    Foreground(&'a [LabelMap]),
}

/// Mean of each map over the selected region, in cohort order.
pub fn reduce_per_image(maps: &[ScalarMap], region: Region<'_>) -> Result<Vec<f64>> {
    if maps.is_empty() {
        return Err(Error::Empty("maps to reduce"));
    }
    match region {
        Region::All => Ok(maps.iter().map(ScalarMap::mean).collect()),
        Region::Foreground(labels) => {
            check_paired(maps, labels)?;
            maps.iter()
                .zip(labels)
                .map(|(m, l)| {
                    let (sum, count) = m
                        .values()
                        .iter()
                        .zip(l.labels())
                        .filter(|(_, &lab)| lab != 0)
                        .fold((0.0, 0usize), |(s, c), (&v, _)| (s + v as f64, c + 1));
                    if count == 0 {
                        Err(Error::Empty("foreground region"))
                    } else {
                        Ok(sum / count as f64)
                    }
                })
                .collect()
        }
    }
}

/// Every voxel value of every map in the region, pooled in cohort order.
pub fn pool_voxels(maps: &[ScalarMap], region: Region<'_>) -> Result<Vec<f64>> {
    if maps.is_empty() {
        return Err(Error::Empty("maps to pool"));
    }
    match region {
        Region::All => Ok(maps
            .iter()
            .flat_map(|m| m.values().iter().map(|&v| v as f64))
            .collect()),
        Region::Foreground(labels) => {
            check_paired(maps, labels)?;
            Ok(maps
                .iter()
                .zip(labels)
                .flat_map(|(m, l)| {
                    m.values()
                        .iter()
                        .zip(l.labels())
                        .filter(|(_, &lab)| lab != 0)
                        .map(|(&v, _)| v as f64)
                })
                .collect())
        }
    }
}

/// Per-image means or pooled voxels depending on `granularity`.
pub fn observations(maps: &[ScalarMap], region: Region<'_>, granularity: Granularity) -> Result<Vec<f64>> {
    match granularity {
        Granularity::PerImage => reduce_per_image(maps, region),
        Granularity::PerVoxel => pool_voxels(maps, region),
    }
}

fn check_paired(maps: &[ScalarMap], labels: &[LabelMap]) -> Result<()> {
    if maps.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} maps but {} region label maps",
            maps.len(),
            labels.len()
        )));
    }
    for (k, (m, l)) in maps.iter().zip(labels).enumerate() {
        ensure_same_shape(&format!("region map {k}"), m.shape(), l.shape())?;
    }
    Ok(())
}

/// Coefficient of determination of an OLS fit of `y` on `predictors` with
/// an intercept.
pub fn r_squared(y: &[f64], predictors: &[&[f64]]) -> Result<f64> {
    let n = y.len();
    if predictors.iter().any(|p| p.len() != n) {
        return Err(Error::ShapeMismatch("regression columns differ in length".into()));
    }
    let k = predictors.len();
    if n <= k + 1 {
        return Err(Error::InvalidParameter(format!(
            "{n} observations are too few for {k} predictors plus intercept"
        )));
    }
    let my = mean(y);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - my));
    let sst = yc.norm_squared();
    if sst == 0.0 {
        return Err(Error::ZeroVariance("regression response"));
    }
    // centering the columns absorbs the intercept
    let mut x = DMatrix::<f64>::zeros(n, k);
    for (j, col) in predictors.iter().enumerate() {
        let m = mean(col);
        for (i, v) in col.iter().enumerate() {
            x[(i, j)] = v - m;
        }
    }
    let scale = (0..k).map(|j| x.column(j).norm()).fold(0.0, f64::max);
    let qr = x.qr();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient);
        }
    }
    let qty = qr.q().transpose() * &yc;
    // explained sum of squares is |Q^T y|^2 over the column space
    let ssr = qty.norm_squared();
    Ok((ssr / sst).clamp(0.0, 1.0))
}

/// Commonality decomposition of the variance of GT entropy explained by
/// epistemic and aleatoric uncertainty. All fields are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePartition {
    pub r2_epistemic_alone: f64,
    pub r2_aleatoric_alone: f64,
    pub r2_joint: f64,
    pub unique_epistemic: f64,
    pub unique_aleatoric: f64,
    pub common: f64,
    pub n: usize,
}

pub fn variance_partition(gt_entropy: &[f64], epistemic: &[f64], aleatoric: &[f64]) -> Result<VariancePartition> {
    let n = gt_entropy.len();
    if epistemic.len() != n || aleatoric.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "variance partition inputs have {n}, {} and {} observations",
            epistemic.len(),
            aleatoric.len()
        )));
    }
    if n < 4 {
        return Err(Error::InvalidParameter(format!(
            "variance partitioning needs at least 4 observations, got {n}"
        )));
    }
    let e = r_squared(gt_entropy, &[epistemic])? * 100.0;
    let a = r_squared(gt_entropy, &[aleatoric])? * 100.0;
    let j = r_squared(gt_entropy, &[epistemic, aleatoric])? * 100.0;
    Ok(VariancePartition {
        r2_epistemic_alone: e,
        r2_aleatoric_alone: a,
        r2_joint: j,
        unique_epistemic: j - a,
        unique_aleatoric: j - e,
        common: e + a - j,
        n,
    })
}

/// Two-sided Wilcoxon signed-rank p-value for paired samples.
///
/// Zero differences are dropped. With at most 25 nonzero differences the
/// p-value is exact, enumerating the null distribution of the signed-rank
/// sum (tied magnitudes keep their average ranks). Above that a normal
/// approximation with the tie-corrected variance is used. All-zero
/// differences give 1.0.
pub fn paired_test(scores_a: &[f64], scores_b: &[f64]) -> Result<f64> {
    check_pairs(scores_a, scores_b)?;
    let diffs: Vec<f64> = scores_a
        .iter()
        .zip(scores_b)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(1.0);
    }
    let (ranks, tie_sizes) = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    if n <= 25 {
        // doubled ranks are integers even with half-integer average ranks
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0f64; total + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let obs = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=obs].iter().sum::<f64>() / all;
        let upper: f64 = counts[obs..].iter().sum::<f64>() / all;
        Ok((2.0 * lower.min(upper)).min(1.0))
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        if var <= 0.0 {
            return Ok(1.0);
        }
        let z = (w_plus - mu) / var.sqrt();
        let normal = Normal::standard();
        Ok((2.0 * normal.sf(z.abs())).min(1.0))
    }
}

/// Two-sided paired t-test p-value.
pub fn paired_t_test(scores_a: &[f64], scores_b: &[f64]) -> Result<f64> {
    check_pairs(scores_a, scores_b)?;
    let d: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if m == 0.0 { 1.0 } else { 0.0 });
    }
    let t = m / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 6");
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

fn check_pairs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "paired samples have {} and {} values",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 6 {
        return Err(Error::InvalidParameter(format!(
            "paired tests need at least 6 pairs, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// 1-based average ranks and the sizes of tied groups.
fn average_ranks(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}
