//! Whole-cohort generation: phantoms, raters, surrogate stacks, manifest.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{class_distances, smooth_field};
use super::phantom::{generate_phantom, PhantomSpec};
use super::rater::{rater_from_distances, RaterStyle, FIELD_CLIP};
use super::surrogate::{samples_from_distances, SubjectContext, SurrogateSpec, REFERENCE_NOISE};
use crate::error::{Error, Result};
use crate::fusion::majority_vote;
use crate::manifest::{CohortManifest, ImageRecord};
use crate::npy;
use crate::rng;
use crate::uncertainty::{aggregate, sample_transforms, SampleSource, TransformLimits, TransformParams};

const TAG_SUBJECT: u64 = 0x5b;
const TAG_PHANTOM: u64 = 0x9a;
const TAG_RATER: u64 = 0x7a;
const TAG_LINK: u64 = 0x11;
const TAG_TTA: u64 = 0x77;
const TAG_SURROGATE: u64 = 0x5e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    /// Anatomy template. `atypicality` and `noise_level` are redrawn per
    /// subject.
    pub phantom: PhantomSpec,
    pub raters: Vec<RaterStyle>,
    pub surrogate: SurrogateSpec,
    pub num_samples: usize,
    pub tta_limits: TransformLimits,
    /// Subject atypicality is uniform on `[0, max_atypicality]`.
    pub max_atypicality: f64,
    /// Subject image noise is uniform on this range.
    pub noise_range: [f64; 2],
    /// Drive rater variance and epistemic displacement with one shared
    /// smooth field and scale rater variance with atypicality.
    pub linkage: bool,
    pub linkage_gain: f64,
    /// Log-amplitude of the shared field.
    pub linkage_contrast: f64,
    /// Exponent on `noise_level / REFERENCE_NOISE` applied to rater
    /// variance. Zero disables the coupling.
    pub noise_coupling: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            raters: default_raters(3),
            surrogate: SurrogateSpec::default(),
            num_samples: crate::uncertainty::DEFAULT_NUM_SAMPLES,
            tta_limits: TransformLimits::default(),
            max_atypicality: 1.0,
            noise_range: [0.02, 0.10],
            linkage: true,
            linkage_gain: 2.0,
            linkage_contrast: 0.3,
            noise_coupling: 0.0,
        }
    }
}

/// `n` rater styles cycling through a neutral, an over- and an
/// under-segmenting annotator.
pub fn default_raters(n: usize) -> Vec<RaterStyle> {
    const STYLES: [(f64, f64); 3] = [(0.0, 0.75), (0.5, 0.75), (-0.5, 0.75)];
    (0..n)
        .map(|i| {
            let (bias, variance) = STYLES[i % STYLES.len()];
            RaterStyle {
                bias,
                variance,
                seed: i as u64 + 1,
            }
        })
        .collect()
}

impl CohortSpec {
    pub fn check(&self) -> Result<()> {
        self.phantom.check()?;
        self.surrogate.check()?;
        if self.raters.is_empty() {
            return Err(Error::InvalidParameter("need at least one rater style".into()));
        }
        self.raters.iter().try_for_each(RaterStyle::check)?;
        if self.num_samples == 0 {
            return Err(Error::InvalidParameter("num_samples must be >= 1".into()));
        }
        let [lo, hi] = self.noise_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad noise range [{lo}, {hi}]")));
        }
        for (name, v) in [
            ("max_atypicality", self.max_atypicality),
            ("linkage_gain", self.linkage_gain),
            ("linkage_contrast", self.linkage_contrast),
            ("noise_coupling", self.noise_coupling),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub atypicality: f64,
    pub noise_level: f64,
    pub tta_transforms: Vec<TransformParams>,
}

/// Everything needed to regenerate a cohort, written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub seed: u64,
    pub spec: CohortSpec,
    pub subjects: Vec<SubjectRecord>,
}

pub const SIMULATION_FILE: &str = "simulation.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn class_names(k: usize) -> Vec<String> {
    let mut names = vec!["background".to_string()];
    if k == 4 {
        names.extend(["right_mf", "left_mf", "right_es", "left_es"].map(String::from));
    } else {
        names.extend((1..=k).map(|c| format!("class_{c}")));
    }
    names
}

/// Generates `num_subjects` subjects under `out_dir` and writes the
/// manifest and simulation record. Output is a pure function of
/// `(spec, num_subjects, seed)` regardless of thread count.
pub fn build_cohort(spec: &CohortSpec, num_subjects: usize, seed: u64, out_dir: &Path) -> Result<CohortManifest> {
    spec.check()?;
    if num_subjects == 0 {
        return Err(Error::InvalidParameter("need at least one subject".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let width = (num_subjects - 1).to_string().len().max(3);
    let results: Vec<(ImageRecord, SubjectRecord)> = (0..num_subjects)
        .into_par_iter()
        .map(|i| build_subject(spec, seed, i, &format!("subject_{i:0width$}"), out_dir))
        .collect::<Result<_>>()?;
    let (images, subjects): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let record = SimulationRecord {
        seed,
        spec: spec.clone(),
        subjects,
    };
    let sim_path = out_dir.join(SIMULATION_FILE);
    let text = serde_json::to_string_pretty(&record).expect("simulation record serializes");
    fs::write(&sim_path, text + "\n").map_err(|e| Error::io(&sim_path, e))?;

    let k = spec.phantom.num_foreground_classes;
    let manifest = CohortManifest::new(k + 1, class_names(k), images, out_dir);
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn build_subject(
    spec: &CohortSpec,
    seed: u64,
    index: usize,
    id: &str,
    out_dir: &Path,
) -> Result<(ImageRecord, SubjectRecord)> {
    let subject_seed = rng::stream(rng::derive(seed, TAG_SUBJECT), index as u64).random::<u64>();
    let mut draws = rng::seeded(subject_seed);
    let atypicality = if spec.max_atypicality > 0.0 {
        draws.random_range(0.0..=spec.max_atypicality)
    } else {
        0.0
    };
    let [lo, hi] = spec.noise_range;
    let noise_level = if hi > lo { draws.random_range(lo..=hi) } else { lo };

    let phantom_spec = PhantomSpec {
        atypicality,
        noise_level,
        ..spec.phantom.clone()
    };
    let phantom = generate_phantom(&phantom_spec, rng::derive(subject_seed, TAG_PHANTOM))?;
    let truth = &phantom.labels;
    let (h, w) = truth.shape();
    let sd = class_distances(truth);

    let modulation = spec.linkage.then(|| {
        let mut g = rng::seeded(rng::derive(subject_seed, TAG_LINK));
        smooth_field(h, w, spec.surrogate.field_sigma, &mut g)
            .into_iter()
            .map(|v| (spec.linkage_contrast * v.clamp(-FIELD_CLIP, FIELD_CLIP)).exp())
            .collect::<Vec<f64>>()
    });
    let mut rater_scale = (noise_level / REFERENCE_NOISE).powf(spec.noise_coupling);
    if spec.linkage {
        rater_scale *= 1.0 + spec.linkage_gain * atypicality;
    }
    let scale: Vec<f64> = match &modulation {
        Some(m) => m.iter().map(|v| v * rater_scale).collect(),
        None => vec![rater_scale; h * w],
    };

    let dir = out_dir.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |name: &str| format!("{id}/{name}");

    npy::write_scalar(&phantom.image, &dir.join("image.npy"))?;
    let mut raters = Vec::with_capacity(spec.raters.len());
    let mut rater_paths = Vec::with_capacity(spec.raters.len());
    for (r, style) in spec.raters.iter().enumerate() {
        let style = RaterStyle {
            seed: rng::derive(rng::derive(subject_seed, TAG_RATER), style.seed),
            ..*style
        };
        let map = rater_from_distances(&sd, truth, &style, spec.surrogate.field_sigma, Some(&scale));
        let name = format!("rater_{r}.npy");
        npy::write_label(&map, &dir.join(&name))?;
        rater_paths.push(rel(&name));
        raters.push(map);
    }
    npy::write_label(&majority_vote(&raters)?, &dir.join("majority.npy"))?;

    let surrogate = SurrogateSpec {
        seed: rng::derive(subject_seed, rng::derive(TAG_SURROGATE, spec.surrogate.seed)),
        ..spec.surrogate.clone()
    };
    let ctx = SubjectContext {
        atypicality,
        noise_level,
        modulation,
    };
    let n = spec.num_samples;
    let transforms = sample_transforms(n, &spec.tta_limits, rng::derive(subject_seed, TAG_TTA))?;
    let mut stacks = std::collections::BTreeMap::new();
    for source in SampleSource::ALL {
        let ts = (source == SampleSource::Tta).then_some(transforms.as_slice());
        let stack = samples_from_distances(&sd, h, w, &surrogate, source, n, ts, &ctx)?;
        let name = format!("{source}.npy");
        npy::write_stack(&stack, &dir.join(&name))?;
        if source == SampleSource::Ttd {
            let mean = aggregate(&stack, source)?.mean_prediction;
            npy::write_prob(&mean, &dir.join("prediction.npy"))?;
        }
        stacks.insert(source, rel(&name));
    }

    Ok((
        ImageRecord {
            id: id.to_string(),
            rater_mask_paths: rater_paths,
            fused_gt_path: Some(rel("majority.npy")),
            sample_stack_paths: stacks,
            prediction_path: Some(rel("prediction.npy")),
        },
        SubjectRecord {
            id: id.to_string(),
            atypicality,
            noise_level,
            tta_transforms: transforms,
        },
    ))
}
