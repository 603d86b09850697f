//! Stochastic surrogate predictor. Each sample is a softmax over negated,
//! scaled signed distances whose boundaries are displaced by a smooth
//! "epistemic" field and by per-pixel "aleatoric" noise.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::field::{class_distances, smooth_field, FAR};
use super::rater::{DEFAULT_FIELD_SIGMA, FIELD_CLIP};
use crate::array::{LabelMap, ProbMap, SampleStack};
use crate::error::{Error, Result};
use crate::fusion::{average_gt, majority_vote};
use crate::rng;
use crate::uncertainty::{invert_prediction, warp_planes, SampleSource, TransformParams, Warp};

/// Image noise level at which the aleatoric amplitude applies unscaled.
pub const REFERENCE_NOISE: f64 = 0.05;

/// Probabilities below this are flushed to zero after the softmax.
pub const PROB_FLOOR: f64 = 1e-7;

const TAG_TTD: u64 = 0x7dd;
const TAG_ENSEMBLE: u64 = 0xe75;
const TAG_TTA: u64 = 0x77a;
const TAG_NOISE: u64 = 0x401;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSpec {
    /// Logit units per pixel of signed distance.
    pub sharpness: f64,
    /// Boundary displacement in pixels per unit atypicality.
    pub epistemic_amp: f64,
    /// Per-pixel boundary noise in pixels at the reference noise level.
    pub aleatoric_amp: f64,
    pub field_sigma: f64,
    pub seed: u64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            sharpness: 20.0,
            epistemic_amp: 1.0,
            aleatoric_amp: 0.5,
            field_sigma: DEFAULT_FIELD_SIGMA,
            seed: 0,
        }
    }
}

impl SurrogateSpec {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("sharpness", self.sharpness),
            ("epistemic_amp", self.epistemic_amp),
            ("aleatoric_amp", self.aleatoric_amp),
            ("field_sigma", self.field_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.sharpness == 0.0 {
            return Err(Error::InvalidParameter("sharpness must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-subject quantities the surrogate responds to.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectContext {
    pub atypicality: f64,
    pub noise_level: f64,
    /// Per-pixel multiplier on the epistemic displacement.
    pub modulation: Option<Vec<f64>>,
}

impl Default for SubjectContext {
    fn default() -> Self {
        Self {
            atypicality: 1.0,
            noise_level: REFERENCE_NOISE,
            modulation: None,
        }
    }
}

pub fn simulate_samples(
    true_labels: &LabelMap,
    surrogate: &SurrogateSpec,
    source: SampleSource,
    n: usize,
    transforms: Option<&[TransformParams]>,
    ctx: &SubjectContext,
) -> Result<SampleStack> {
    surrogate.check()?;
    let (h, w) = true_labels.shape();
    if let Some(m) = &ctx.modulation {
        if m.len() != h * w {
            return Err(Error::ShapeMismatch(format!("modulation has {} values for a {h}x{w} map", m.len())));
        }
    }
    if n == 0 {
        return Err(Error::Empty("sample stack"));
    }
    let sd = class_distances(true_labels);
    samples_from_distances(&sd, h, w, surrogate, source, n, transforms, ctx)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn samples_from_distances(
    sd: &[Vec<f64>],
    h: usize,
    w: usize,
    spec: &SurrogateSpec,
    source: SampleSource,
    n: usize,
    transforms: Option<&[TransformParams]>,
    ctx: &SubjectContext,
) -> Result<SampleStack> {
    let plane = h * w;
    let epi_scale = spec.epistemic_amp * ctx.atypicality;
    let displacement = |g: &mut rng::Rng| -> Vec<f64> {
        if epi_scale == 0.0 {
            return vec![0.0; plane];
        }
        let mut f = smooth_field(h, w, spec.field_sigma, g);
        for (i, v) in f.iter_mut().enumerate() {
            let m = ctx.modulation.as_ref().map_or(1.0, |m| m[i]);
            *v = epi_scale * m * v.clamp(-FIELD_CLIP, FIELD_CLIP);
        }
        f
    };
    let noise_seed = rng::derive(spec.seed, TAG_NOISE ^ source_tag(source));

    match source {
        SampleSource::Ttd | SampleSource::Ensemble => {
            let seed = rng::derive(spec.seed, source_tag(source));
            let samples = (0..n)
                .map(|k| {
                    let d = displacement(&mut rng::stream(seed, k as u64));
                    let shifted = shift(sd, &d);
                    let sigma = spec.aleatoric_amp * ctx.noise_level / REFERENCE_NOISE;
                    softmax(shifted, h, w, spec.sharpness, sigma, &mut rng::stream(noise_seed, k as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            SampleStack::new(samples)
        }
        SampleSource::Tta => {
            let ts = transforms.ok_or_else(|| Error::InvalidParameter("tta sampling needs transforms".into()))?;
            if ts.len() != n {
                return Err(Error::ShapeMismatch(format!("{} transforms for {n} tta samples", ts.len())));
            }
            let d = displacement(&mut rng::seeded(rng::derive(spec.seed, TAG_TTA)));
            let shifted = shift(sd, &d);
            let classes = sd.len();
            let flat: Vec<f64> = shifted.concat();
            let mut fill = vec![FAR; classes];
            fill[0] = -FAR;
            let mut samples = Vec::with_capacity(n);
            let mut valid = Vec::with_capacity(n);
            for (k, t) in ts.iter().enumerate() {
                let warped = if t.is_spatial_identity() {
                    shifted.clone()
                } else {
                    let (out, _) = warp_planes(&flat, classes, h, w, t, Warp::Forward, &fill);
                    out.chunks(plane).map(<[f64]>::to_vec).collect()
                };
                let sigma = spec.aleatoric_amp * (ctx.noise_level + t.noise_sigma) / REFERENCE_NOISE;
                let aug = softmax(warped, h, w, spec.sharpness, sigma, &mut rng::stream(noise_seed, k as u64))?;
                let (p, ok) = invert_prediction(&aug, t);
                samples.push(p);
                valid.push(ok);
            }
            SampleStack::with_validity(samples, valid)
        }
    }
}

fn source_tag(source: SampleSource) -> u64 {
    match source {
        SampleSource::Tta => TAG_TTA,
        SampleSource::Ttd => TAG_TTD,
        SampleSource::Ensemble => TAG_ENSEMBLE,
    }
}

/// Moves every foreground boundary outwards by `d` (inwards where negative).
fn shift(sd: &[Vec<f64>], d: &[f64]) -> Vec<Vec<f64>> {
    sd.iter()
        .enumerate()
        .map(|(c, s)| {
            let sign = if c == 0 { 1.0 } else { -1.0 };
            s.iter().zip(d).map(|(v, dv)| v + sign * dv).collect()
        })
        .collect()
}

fn softmax(
    mut dist: Vec<Vec<f64>>,
    h: usize,
    w: usize,
    sharpness: f64,
    noise: f64,
    g: &mut rng::Rng,
) -> Result<ProbMap> {
    let classes = dist.len();
    let plane = h * w;
    if noise > 0.0 {
        for ch in dist.iter_mut() {
            for v in ch.iter_mut() {
                let z: f64 = StandardNormal.sample(g);
                *v += noise * z;
            }
        }
    }
    let mut weights = vec![0f64; classes * plane];
    let mut logits = vec![0f64; classes];
    for i in 0..plane {
        for (c, l) in logits.iter_mut().enumerate() {
            *l = -sharpness * dist[c][i];
        }
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        for (c, l) in logits.iter().enumerate() {
            let p = (l - top).exp() / total;
            weights[c * plane + i] = if p < PROB_FLOOR { 0.0 } else { p };
        }
    }
    ProbMap::from_weights(h, w, classes, &weights)
}

/// Prediction that reproduces the rater distribution, lightly smoothed
/// towards uniform so no class has probability exactly zero.
pub fn calibrated_surrogate(raters: &[LabelMap], smoothing: f64) -> Result<ProbMap> {
    if !(0.0..=1.0).contains(&smoothing) {
        return Err(Error::InvalidParameter(format!("smoothing must be in [0, 1], got {smoothing}")));
    }
    let avg = average_gt(raters)?;
    let c = avg.num_classes() as f64;
    let weights: Vec<f64> = avg
        .as_slice()
        .iter()
        .map(|&p| (1.0 - smoothing) * p as f64 + smoothing / c)
        .collect();
    ProbMap::from_weights(avg.height(), avg.width(), avg.num_classes(), &weights)
}

/// One-hot prediction of the majority vote.
pub fn overconfident_surrogate(raters: &[LabelMap]) -> Result<ProbMap> {
    Ok(majority_vote(raters)?.one_hot())
}
