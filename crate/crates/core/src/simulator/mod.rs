//! Synthetic cohorts with a known split between rater disagreement,
//! epistemic and aleatoric noise.

mod cohort;
pub mod field;
mod phantom;
mod rater;
mod surrogate;

pub use cohort::{build_cohort, default_raters, CohortSpec, SimulationRecord, SubjectRecord, MANIFEST_FILE, SIMULATION_FILE};
pub use phantom::{generate_phantom, template, Ellipse, Phantom, PhantomSpec};
pub use rater::{simulate_rater, simulate_rater_with, RaterStyle, DEFAULT_FIELD_SIGMA};
pub use surrogate::{
    calibrated_surrogate, overconfident_surrogate, simulate_samples, SubjectContext, SurrogateSpec, PROB_FLOOR,
    REFERENCE_NOISE,
};
