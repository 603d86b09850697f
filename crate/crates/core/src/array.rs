//! Typed 2D maps shared by every analysis stage.
//!
//! All maps are row-major single slices. Probability maps are stored
//! channel-major, `(C, H, W)`, which is also their on-disk layout.

use crate::error::{Error, Result};

/// Maximum per-pixel deviation of a probability sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-5;

/// Slack allowed above `ln C` for entropy-typed scalar maps.
pub const ENTROPY_SLACK: f64 = 1e-6;

/// Per-pixel class assignments from one rater or one fusion result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if !(2..=256).contains(&num_classes) {
            return Err(Error::InvalidParameter(format!(
                "num_classes must be in [2, 256], got {num_classes}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= num_classes) {
            return Err(Error::LabelOutOfRange {
                y: i / width,
                x: i % width,
                value: labels[i],
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    /// Map with every pixel set to `label`.
    pub fn filled(height: usize, width: usize, num_classes: usize, label: u8) -> Result<Self> {
        Self::new(height, width, num_classes, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Number of pixels carrying `class`.
    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Boolean mask of the pixels carrying `class`.
    pub fn mask(&self, class: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }

    pub fn one_hot(&self) -> ProbMap {
        one_hot(self)
    }
}

/// Per-pixel class-probability simplex, stored as `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f32>,
}

impl ProbMap {
    /// Validates a channel-major probability buffer without modifying it.
    pub fn new(height: usize, width: usize, num_classes: usize, probs: Vec<f32>) -> Result<Self> {
        check_shape(height, width, num_classes, probs.len())?;
        let map = Self {
            height,
            width,
            num_classes,
            probs,
        };
        map.validate()?;
        Ok(map)
    }

    /// Validates a buffer and renormalizes pixels whose sum is off by more
    /// than float rounding but still within [`SIMPLEX_TOLERANCE`].
    ///
    /// Pixels already at rounding level are left bit-identical so that
    /// maps written by this crate round-trip exactly.
    pub fn new_renormalized(
        height: usize,
        width: usize,
        num_classes: usize,
        probs: Vec<f32>,
    ) -> Result<Self> {
        let mut map = Self::new(height, width, num_classes, probs)?;
        let rounding = num_classes as f64 * f32::EPSILON as f64;
        let plane = height * width;
        for i in 0..plane {
            let sum: f64 = (0..num_classes)
                .map(|c| map.probs[c * plane + i] as f64)
                .sum();
            if (sum - 1.0).abs() > rounding {
                for c in 0..num_classes {
                    let v = map.probs[c * plane + i] as f64 / sum;
                    map.probs[c * plane + i] = v.min(1.0) as f32;
                }
            }
        }
        Ok(map)
    }

    /// Builds a map from unnormalized nonnegative per-pixel weights laid out
    /// as `(C, H, W)`. Pixels with zero total weight become uniform.
    pub fn from_weights(
        height: usize,
        width: usize,
        num_classes: usize,
        weights: &[f64],
    ) -> Result<Self> {
        check_shape(height, width, num_classes, weights.len())?;
        let plane = height * width;
        let mut probs = vec![0f32; weights.len()];
        let uniform = (1.0 / num_classes as f64) as f32;
        for i in 0..plane {
            let sum: f64 = (0..num_classes).map(|c| weights[c * plane + i]).sum();
            if sum > 0.0 && sum.is_finite() {
                for c in 0..num_classes {
                    probs[c * plane + i] = (weights[c * plane + i] / sum) as f32;
                }
            } else {
                for c in 0..num_classes {
                    probs[c * plane + i] = uniform;
                }
            }
        }
        Self::new(height, width, num_classes, probs)
    }

    pub fn uniform(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        let v = (1.0 / num_classes as f64) as f32;
        Self::new(height, width, num_classes, vec![v; height * width * num_classes])
    }

    fn validate(&self) -> Result<()> {
        let plane = self.height * self.width;
        for i in 0..plane {
            let mut sum = 0f64;
            for c in 0..self.num_classes {
                let v = self.probs[c * plane + i];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidProbability {
                        class: c,
                        y: i / self.width,
                        x: i % self.width,
                        value: v,
                    });
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::SimplexViolation {
                    y: i / self.width,
                    x: i % self.width,
                    sum,
                });
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Raw `(C, H, W)` buffer.
    pub fn as_slice(&self) -> &[f32] {
        &self.probs
    }

    pub fn channel(&self, class: usize) -> &[f32] {
        let plane = self.num_pixels();
        &self.probs[class * plane..(class + 1) * plane]
    }

    /// Probability of `class` at flat pixel index `i`.
    pub fn at(&self, class: usize, i: usize) -> f32 {
        self.probs[class * self.num_pixels() + i]
    }

    pub fn get(&self, class: usize, y: usize, x: usize) -> f32 {
        self.at(class, y * self.width + x)
    }

    /// Probability vector of the pixel at flat index `i`.
    pub fn pixel(&self, i: usize) -> Vec<f32> {
        (0..self.num_classes).map(|c| self.at(c, i)).collect()
    }

    pub fn argmax_labels(&self) -> LabelMap {
        argmax_labels(self)
    }
}

/// Monte-Carlo draws of one image's prediction with per-sample validity.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStack {
    samples: Vec<ProbMap>,
    valid: Vec<Vec<bool>>,
}

impl SampleStack {
    /// Stack with every pixel of every sample valid.
    pub fn new(samples: Vec<ProbMap>) -> Result<Self> {
        let valid = samples.iter().map(|s| vec![true; s.num_pixels()]).collect();
        Self::with_validity(samples, valid)
    }

    pub fn with_validity(samples: Vec<ProbMap>, valid: Vec<Vec<bool>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("sample stack"))?;
        let key = (first.height, first.width, first.num_classes);
        for (k, s) in samples.iter().enumerate() {
            if (s.height, s.width, s.num_classes) != key {
                return Err(Error::ShapeMismatch(format!(
                    "sample {k} has shape {:?}, sample 0 has {:?}",
                    (s.height, s.width, s.num_classes),
                    key
                )));
            }
        }
        if valid.len() != samples.len() || valid.iter().any(|v| v.len() != first.num_pixels()) {
            return Err(Error::ShapeMismatch(
                "validity masks do not match the samples".into(),
            ));
        }
        Ok(Self { samples, valid })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[ProbMap] {
        &self.samples
    }

    pub fn validity(&self) -> &[Vec<bool>] {
        &self.valid
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|m| m.iter().all(|&v| v))
    }

    pub fn height(&self) -> usize {
        self.samples[0].height
    }

    pub fn width(&self) -> usize {
        self.samples[0].width
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples[0].shape()
    }

    pub fn num_classes(&self) -> usize {
        self.samples[0].num_classes
    }
}

/// Nonnegative per-pixel scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidScalar {
                y: i / width,
                x: i % width,
                value: values[i],
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Constructor for entropy-typed maps: additionally enforces `v <= ln C`.
    pub fn entropy_bounded(
        height: usize,
        width: usize,
        values: Vec<f32>,
        num_classes: usize,
    ) -> Result<Self> {
        Self::bounded(height, width, values, (num_classes as f64).ln())
    }

    /// Constructor enforcing `v <= bound` (plus [`ENTROPY_SLACK`]).
    pub fn bounded(height: usize, width: usize, values: Vec<f32>, bound: f64) -> Result<Self> {
        let bound = bound + ENTROPY_SLACK;
        if let Some(i) = values.iter().position(|&v| v as f64 > bound) {
            return Err(Error::InvalidScalar {
                y: i / width.max(1),
                x: i % width.max(1),
                value: values[i],
            });
        }
        Self::new(height, width, values)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_pixels(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}

/// One-hot encoding of a label map.
pub fn one_hot(map: &LabelMap) -> ProbMap {
    let plane = map.num_pixels();
    let mut probs = vec![0f32; plane * map.num_classes];
    for (i, &l) in map.labels.iter().enumerate() {
        probs[l as usize * plane + i] = 1.0;
    }
    ProbMap {
        height: map.height,
        width: map.width,
        num_classes: map.num_classes,
        probs,
    }
}

/// Per-pixel index of the maximal probability; ties go to the lowest class.
pub fn argmax_labels(p: &ProbMap) -> LabelMap {
    let plane = p.num_pixels();
    let labels = (0..plane)
        .map(|i| {
            let mut best = 0usize;
            let mut best_v = p.probs[i];
            for c in 1..p.num_classes {
                let v = p.probs[c * plane + i];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            best as u8
        })
        .collect();
    LabelMap {
        height: p.height,
        width: p.width,
        num_classes: p.num_classes,
        labels,
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!(
            "map dimensions must be >= 1, got {height}x{width}"
        )));
    }
    Ok(())
}

fn check_shape(height: usize, width: usize, num_classes: usize, len: usize) -> Result<()> {
    check_dims(height, width)?;
    if num_classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    if len != height * width * num_classes {
        return Err(Error::ShapeMismatch(format!(
            "{len} values for a {num_classes}x{height}x{width} probability map"
        )));
    }
    Ok(())
}

/// Errors unless every map has the same `(height, width)`.
pub(crate) fn ensure_same_shape(
    what: &str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected {}x{}, found {}x{}",
            expected.0, expected.1, found.0, found.1
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_hot_places_unit_mass() {
        let m = LabelMap::new(1, 1, 5, vec![2]).unwrap();
        assert_eq!(m.one_hot().pixel(0), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn all_background_one_hot() {
        let m = LabelMap::filled(3, 4, 5, 0).unwrap();
        let p = one_hot(&m);
        assert!(p.channel(0).iter().all(|&v| v == 1.0));
        assert!(p.channel(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_picks_max_and_breaks_ties_low() {
        let p = ProbMap::new(1, 2, 3, vec![0.2, 0.5, 0.5, 0.5, 0.3, 0.0]).unwrap();
        assert_eq!(argmax_labels(&p).labels(), &[1, 0]);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let err = LabelMap::new(2, 2, 3, vec![0, 1, 3, 0]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { y: 1, x: 0, .. }));
    }

    #[test]
    fn rejects_simplex_violation_with_coordinates() {
        let err = ProbMap::new(1, 2, 2, vec![0.5, 0.4, 0.5, 0.4]).unwrap_err();
        assert_eq!(err.to_string(), "simplex violation at (0,1): probabilities sum to 0.800000011920929");
    }

    #[test]
    fn rejects_nan_probability() {
        assert!(ProbMap::new(1, 1, 2, vec![f32::NAN, 1.0]).is_err());
    }

    #[test]
    fn renormalizes_only_beyond_rounding() {
        let p = ProbMap::new_renormalized(1, 2, 2, vec![0.5, 0.3, 0.499_996, 0.7]).unwrap();
        let s0 = p.at(0, 0) as f64 + p.at(1, 0) as f64;
        assert!((s0 - 1.0).abs() < 1e-6);
        assert_eq!(p.at(0, 1), 0.3);
        assert_eq!(p.at(1, 1), 0.7);
    }

    #[test]
    fn entropy_bound_enforced() {
        assert!(ScalarMap::entropy_bounded(1, 1, vec![0.7], 2).is_err());
        assert!(ScalarMap::entropy_bounded(1, 1, vec![0.69], 2).is_ok());
    }

    #[test]
    fn zero_weight_pixels_become_uniform() {
        let p = ProbMap::from_weights(1, 1, 4, &[0.0; 4]).unwrap();
        assert_eq!(p.pixel(0), vec![0.25; 4]);
    }

    proptest! {
        #[test]
        fn argmax_inverts_one_hot(h in 1usize..6, w in 1usize..6, c in 2usize..8, seed in any::<u64>()) {
            let mut s = seed;
            let labels: Vec<u8> = (0..h * w).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) % c as u64) as u8
            }).collect();
            let m = LabelMap::new(h, w, c, labels).unwrap();
            let p = one_hot(&m);
            // brute-force argmax over the pixel vectors
            let brute: Vec<u8> = (0..h * w).map(|i| {
                let v = p.pixel(i);
                let mut best = 0;
                for k in 0..c { if v[k] > v[best] { best = k; } }
                best as u8
            }).collect();
            prop_assert_eq!(brute.as_slice(), m.labels());
            prop_assert_eq!(argmax_labels(&p), m);
        }
    }
}
