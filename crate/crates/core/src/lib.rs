//! Inter-rater variability and aleatoric/epistemic uncertainty analysis for
//! multi-class 2D segmentation.
//!
//! The crate covers the full measurement path: label fusion across raters,
//! entropy and Brier metrics, Monte-Carlo aggregation of test-time
//! augmentation / dropout / ensemble samples, uncertainty quality (AUC-PR),
//! Dice, correlation and variance partitioning, plus a synthetic cohort
//! simulator that produces data with a known epistemic/aleatoric structure.


pub mod analysis;
pub mod array;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod manifest;
pub mod npy;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod uncertainty;
pub mod variability;

pub use analysis::{analyze, AnalysisConfig, AnalysisReport, CorrelationRegion, FusionMethod};
pub use array::{argmax_labels, one_hot, LabelMap, ProbMap, SampleStack, ScalarMap};
pub use error::{Error, Result};
pub use eval::{dice, misclassification_map, uncertainty_pr_curve, DiceReport, PrCurve, Thresholds};
pub use fusion::{average_gt, majority_vote, random_schedule, RaterSchedule};
pub use manifest::{load_manifest, CohortManifest, ImageRecord};
pub use npy::{read_array, write_array, AnyArray, ArrayKind};
pub use stats::{paired_test, pearson, reduce_per_image, variance_partition, CorrelationResult, Granularity, Region, VariancePartition};
pub use uncertainty::{
    aggregate, apply_transform, invert_prediction, sample_transforms, SampleSource, TransformLimits, TransformParams,
    UncertaintyResult,
};
pub use simulator::{build_cohort, CohortSpec, PhantomSpec, RaterStyle, SurrogateSpec};
pub use variability::{brier_score, entropy_map, gt_entropy, prediction_entropy, BrierRegion, BrierReport};
