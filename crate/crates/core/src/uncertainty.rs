//! Monte-Carlo aggregation of sample stacks (test-time augmentation,
//! test-time dropout, deep ensembles) and the spatial geometry that
//! re-aligns augmented predictions before averaging.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{ProbMap, SampleStack, ScalarMap};
use crate::error::{Error, Result};
use crate::rng;
use crate::variability::entropy_map;

/// Default number of Monte-Carlo samples per image.
pub const DEFAULT_NUM_SAMPLES: usize = 10;

/// Origin of a sample stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Tta,
    Ttd,
    Ensemble,
}

impl SampleSource {
    pub const ALL: [SampleSource; 3] = [SampleSource::Tta, SampleSource::Ttd, SampleSource::Ensemble];

    pub fn as_str(self) -> &'static str {
        match self {
            SampleSource::Tta => "tta",
            SampleSource::Ttd => "ttd",
            SampleSource::Ensemble => "ensemble",
        }
    }

    /// Whether the source estimates epistemic (model) uncertainty.
    pub fn is_epistemic(self) -> bool {
        !matches!(self, SampleSource::Tta)
    }
}

impl fmt::Display for SampleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SampleSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tta" => Ok(SampleSource::Tta),
            "ttd" => Ok(SampleSource::Ttd),
            "ensemble" => Ok(SampleSource::Ensemble),
            other => Err(Error::InvalidParameter(format!(
                "unknown sample source '{other}' (expected tta, ttd or ensemble)"
            ))),
        }
    }
}

/// One test-time augmentation: rigid rotation about the image center,
/// translation, additive intensity shift and Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub rotation_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub intensity_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl TransformParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
            intensity_shift: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            translate_x: dx,
            translate_y: dy,
            ..Self::identity()
        }
    }

    pub fn rotation(deg: f64) -> Self {
        Self {
            rotation_deg: deg,
            ..Self::identity()
        }
    }

    pub fn is_spatial_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.translate_x == 0.0 && self.translate_y == 0.0
    }

    pub fn is_identity(&self) -> bool {
        self.is_spatial_identity() && self.intensity_shift == 0.0 && self.noise_sigma == 0.0
    }

    pub fn check(&self, limits: &TransformLimits) -> Result<()> {
        let ok = self.rotation_deg.abs() <= limits.max_rotation_deg
            && self.translate_x.abs() <= limits.max_translation
            && self.translate_y.abs() <= limits.max_translation
            && self.intensity_shift.abs() <= limits.max_intensity_shift
            && self.noise_sigma >= 0.0
            && self.noise_sigma <= limits.max_noise_sigma;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "transform {self:?} exceeds limits {limits:?}"
            )))
        }
    }
}

/// Sampling bounds for test-time augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformLimits {
    pub max_rotation_deg: f64,
    /// Pixels, applied independently to x and y.
    pub max_translation: f64,
    /// In normalized image-intensity units.
    pub max_intensity_shift: f64,
    pub max_noise_sigma: f64,
}

impl Default for TransformLimits {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_translation: 10.0,
            max_intensity_shift: 0.1,
            max_noise_sigma: 0.05,
        }
    }
}

impl TransformLimits {
    /// Intensity perturbations only; no geometry to invert.
    pub fn intensity_only(self) -> Self {
        Self {
            max_rotation_deg: 0.0,
            max_translation: 0.0,
            ..self
        }
    }

    pub fn none() -> Self {
        Self {
            max_rotation_deg: 0.0,
            max_translation: 0.0,
            max_intensity_shift: 0.0,
            max_noise_sigma: 0.0,
        }
    }
}

fn symmetric(g: &mut rng::Rng, max: f64) -> f64 {
    if max > 0.0 {
        g.random_range(-max..=max)
    } else {
        0.0
    }
}

/// `n` independent uniform draws within `limits`, deterministic per seed.
pub fn sample_transforms(n: usize, limits: &TransformLimits, seed: u64) -> Result<Vec<TransformParams>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one transform".into()));
    }
    let mut g = rng::seeded(seed);
    Ok((0..n)
        .map(|_| TransformParams {
            rotation_deg: symmetric(&mut g, limits.max_rotation_deg),
            translate_x: symmetric(&mut g, limits.max_translation),
            translate_y: symmetric(&mut g, limits.max_translation),
            intensity_shift: symmetric(&mut g, limits.max_intensity_shift),
            noise_sigma: if limits.max_noise_sigma > 0.0 {
                g.random_range(0.0..=limits.max_noise_sigma)
            } else {
                0.0
            },
            seed: g.random(),
        })
        .collect())
}

pub fn transforms_to_json(transforms: &[TransformParams]) -> String {
    serde_json::to_string_pretty(transforms).expect("transform params always serialize")
}

pub fn transforms_from_json(text: &str) -> std::result::Result<Vec<TransformParams>, serde_json::Error> {
    serde_json::from_str(text)
}

/// Direction of a spatial warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Warp {
    /// Original grid to augmented grid.
    Forward,
    /// Augmented grid back to the original grid.
    Inverse,
}

/// Resamples `channels` planes of `(height, width)` data through the
/// rigid part of `t` with bilinear interpolation.
///
/// Returns the resampled planes and a per-pixel flag telling whether the
/// source location fell inside the input grid. Out-of-grid pixels take
/// `fill[channel]`.
pub fn warp_planes(
    data: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    t: &TransformParams,
    direction: Warp,
    fill: &[f64],
) -> (Vec<f64>, Vec<bool>) {
    let plane = height * width;
    debug_assert_eq!(data.len(), plane * channels);
    let theta = t.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (dx, dy) = (t.translate_x, t.translate_y);

    let mut out = vec![0f64; data.len()];
    let mut inside = vec![false; plane];
    const EPS: f64 = 1e-9;
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64, y as f64);
            // Forward map: q = R(p - c) + c + d. Resampling the forward
            // warp evaluates the input at R^-1(q - c - d) + c; the inverse
            // warp evaluates the augmented prediction at R(p - c) + c + d.
            let (sx, sy) = match direction {
                Warp::Forward => {
                    let (ux, uy) = (px - cx - dx, py - cy - dy);
                    (cos * ux + sin * uy + cx, -sin * ux + cos * uy + cy)
                }
                Warp::Inverse => {
                    let (ux, uy) = (px - cx, py - cy);
                    (cos * ux - sin * uy + cx + dx, sin * ux + cos * uy + cy + dy)
                }
            };
            let i = y * width + x;
            let in_grid = sx >= -EPS
                && sy >= -EPS
                && sx <= width as f64 - 1.0 + EPS
                && sy <= height as f64 - 1.0 + EPS;
            if !in_grid {
                for c in 0..channels {
                    out[c * plane + i] = fill[c];
                }
                continue;
            }
            inside[i] = true;
            let sx = sx.clamp(0.0, width as f64 - 1.0);
            let sy = sy.clamp(0.0, height as f64 - 1.0);
            let x0 = (sx.floor() as usize).min(width.saturating_sub(2));
            let y0 = (sy.floor() as usize).min(height.saturating_sub(2));
            let x1 = (x0 + 1).min(width - 1);
            let y1 = (y0 + 1).min(height - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w01 = fx * (1.0 - fy);
            let w10 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            for c in 0..channels {
                let d = &data[c * plane..(c + 1) * plane];
                out[c * plane + i] = w00 * d[y0 * width + x0]
                    + w01 * d[y0 * width + x1]
                    + w10 * d[y1 * width + x0]
                    + w11 * d[y1 * width + x1];
            }
        }
    }
    (out, inside)
}

/// Applies an augmentation to an intensity image.
///
/// Rotation about the image center and translation use bilinear
/// interpolation with out-of-view pixels set to 0; then the intensity
/// shift and seeded zero-mean Gaussian noise are added. Intensities are
/// clamped at 0. Identity parameters return the input untouched.
pub fn apply_transform(image: &ScalarMap, t: &TransformParams) -> ScalarMap {
    if t.is_identity() {
        return image.clone();
    }
    let (h, w) = image.shape();
    let mut values: Vec<f64> = if t.is_spatial_identity() {
        image.values().iter().map(|&v| v as f64).collect()
    } else {
        let data: Vec<f64> = image.values().iter().map(|&v| v as f64).collect();
        warp_planes(&data, 1, h, w, t, Warp::Forward, &[0.0]).0
    };
    if t.intensity_shift != 0.0 {
        values.iter_mut().for_each(|v| *v += t.intensity_shift);
    }
    if t.noise_sigma > 0.0 {
        let mut g = rng::seeded(t.seed);
        for v in values.iter_mut() {
            let z: f64 = g.sample(StandardNormal);
            *v += t.noise_sigma * z;
        }
    }
    let values = values.into_iter().map(|v| v.max(0.0) as f32).collect();
    ScalarMap::new(h, w, values).expect("clamped finite intensities")
}

/// Maps a prediction made on the augmented grid back onto the original
/// grid, renormalizing each pixel. Pixels whose pre-image lies outside the
/// augmented grid are invalid and hold the uniform distribution.
pub fn invert_prediction(p: &ProbMap, t: &TransformParams) -> (ProbMap, Vec<bool>) {
    if t.is_spatial_identity() {
        return (p.clone(), vec![true; p.num_pixels()]);
    }
    let (h, w) = p.shape();
    let c = p.num_classes();
    let data: Vec<f64> = p.as_slice().iter().map(|&v| v as f64).collect();
    let (out, valid) = warp_planes(&data, c, h, w, t, Warp::Inverse, &vec![0.0; c]);
    let plane = h * w;
    let uniform = (1.0 / c as f64) as f32;
    let mut probs: Vec<f32> = out.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    for (i, ok) in valid.iter().enumerate() {
        if !ok {
            for k in 0..c {
                probs[k * plane + i] = uniform;
            }
        }
    }
    let map = ProbMap::new_renormalized(h, w, c, probs).expect("interpolated simplex weights");
    (map, valid)
}

/// Inverse-maps every sample of a raw augmented stack.
pub fn invert_stack(raw: &SampleStack, transforms: &[TransformParams]) -> Result<SampleStack> {
    if transforms.len() != raw.num_samples() {
        return Err(Error::ShapeMismatch(format!(
            "{} transforms for {} samples",
            transforms.len(),
            raw.num_samples()
        )));
    }
    let (samples, valid): (Vec<_>, Vec<_>) = raw
        .samples()
        .iter()
        .zip(raw.validity())
        .zip(transforms)
        .map(|((s, prior), t)| {
            let (p, v) = invert_prediction(s, t);
            let v = if prior.iter().all(|&b| b) {
                v
            } else {
                // invalid augmented pixels stay invalid after inversion
                let (vals, _) = warp_planes(
                    &prior.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>(),
                    1,
                    s.height(),
                    s.width(),
                    t,
                    Warp::Inverse,
                    &[0.0],
                );
                v.iter().zip(vals).map(|(&a, b)| a && b > 1.0 - 1e-9).collect()
            };
            (p, v)
        })
        .unzip();
    SampleStack::with_validity(samples, valid)
}

/// Averaged prediction and its entropy for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyResult {
    pub mean_prediction: ProbMap,
    /// Entropy (nats) of `mean_prediction`.
    pub uncertainty: ScalarMap,
    pub source: SampleSource,
    pub num_samples: usize,
}

/// Per-pixel mean over valid samples, renormalized, and its entropy.
/// Pixels without any valid sample receive the uniform distribution.
pub fn aggregate(stack: &SampleStack, source: SampleSource) -> Result<UncertaintyResult> {
    if stack.num_samples() == 0 {
        return Err(Error::Empty("sample stack"));
    }
    let (h, w) = stack.shape();
    let c = stack.num_classes();
    let plane = h * w;
    let mut sums = vec![0f64; c * plane];
    for (s, valid) in stack.samples().iter().zip(stack.validity()) {
        let probs = s.as_slice();
        for k in 0..c {
            let dst = &mut sums[k * plane..(k + 1) * plane];
            let src = &probs[k * plane..(k + 1) * plane];
            for ((acc, &v), &ok) in dst.iter_mut().zip(src).zip(valid) {
                if ok {
                    *acc += v as f64;
                }
            }
        }
    }
    let mean_prediction = ProbMap::from_weights(h, w, c, &sums)?;
    let uncertainty = entropy_map(&mean_prediction, false);
    Ok(UncertaintyResult {
        mean_prediction,
        uncertainty,
        source,
        num_samples: stack.num_samples(),
    })
}
