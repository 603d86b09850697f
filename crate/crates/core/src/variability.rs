//! Inter-rater variability: pixel-wise Shannon entropy maps and the
//! class-wise Brier score measuring how well predictions preserve the
//! soft (rater-averaged) ground truth.

use serde::{Deserialize, Serialize};

use crate::array::{ensure_same_shape, LabelMap, ProbMap, ScalarMap};
use crate::error::{Error, Result};
use crate::fusion::average_gt;

/// Shannon entropy of one probability vector in nats, with `0 ln 0 = 0`.
pub fn pixel_entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    let h: f64 = p
        .into_iter()
        .filter(|&v| v > 0.0)
        .map(|v| -v * v.ln())
        .sum();
    h.max(0.0)
}

/// Per-pixel entropy `-sum_c p_c ln p_c`; divided by `ln C` when
/// `normalized`.
pub fn entropy_map(p: &ProbMap, normalized: bool) -> ScalarMap {
    let c = p.num_classes();
    let plane = p.num_pixels();
    let probs = p.as_slice();
    let ln_c = (c as f64).ln();
    let values = (0..plane)
        .map(|i| {
            let h = pixel_entropy((0..c).map(|k| probs[k * plane + i] as f64));
            // sums off by up to the simplex tolerance can overshoot ln C
            let h = h.min(ln_c);
            (if normalized { h / ln_c } else { h }) as f32
        })
        .collect();
    let bound = if normalized { 1.0 } else { ln_c };
    ScalarMap::bounded(p.height(), p.width(), values, bound)
        .expect("entropy of a valid simplex is bounded by ln C")
}

/// Inter-rater variability map: entropy of the averaged one-hot rater masks.
pub fn gt_entropy(raters: &[LabelMap], normalized: bool) -> Result<ScalarMap> {
    Ok(entropy_map(&average_gt(raters)?, normalized))
}

/// Entropy of a model's softmax output before binarization. Identical to
/// [`entropy_map`]; kept separate so reports can label it as the
/// prediction-side variability.
pub fn prediction_entropy(p: &ProbMap, normalized: bool) -> ScalarMap {
    entropy_map(p, normalized)
}

/// Which voxels enter the per-image Brier mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrierRegion {
    /// Every voxel of the image.
    #[default]
    All,
    /// Voxels where at least one rater marked a non-background class
    /// (soft GT background probability below 1).
    Foreground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrierReport {
    /// Mean Brier value per class channel.
    pub per_class: Vec<f64>,
    pub num_images: usize,
    /// Voxels per image (for the foreground region, the per-image counts
    /// differ and this is their mean).
    pub num_voxels_per_image: f64,
    pub region: BrierRegion,
}

impl BrierReport {
    /// Mean over the non-background classes (classes `1..C`).
    pub fn foreground_mean(&self) -> f64 {
        let fg = &self.per_class[1..];
        fg.iter().sum::<f64>() / fg.len() as f64
    }

    /// CSV with columns `class_index,class_name,brier`.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class_index,class_name,brier\n");
        for (c, v) in self.per_class.iter().enumerate() {
            let name = class_names.get(c).map(String::as_str).unwrap_or("");
            out.push_str(&format!("{c},{name},{v}\n"));
        }
        out
    }
}

/// Class-wise Brier score over a cohort of (soft GT, prediction) pairs:
/// for each class, the image-mean of per-image voxel-means of the squared
/// probability difference.
pub fn brier_score(cohort: &[(ProbMap, ProbMap)], region: BrierRegion) -> Result<BrierReport> {
    let (gt0, _) = cohort.first().ok_or(Error::Empty("brier cohort"))?;
    let c = gt0.num_classes();
    let n_voxel = gt0.num_pixels();
    let mut totals = vec![0f64; c];
    let mut voxel_count_sum = 0usize;
    for (k, (gt, pred)) in cohort.iter().enumerate() {
        ensure_same_shape(&format!("brier image {k} prediction"), gt.shape(), pred.shape())?;
        if gt.num_classes() != c || pred.num_classes() != c {
            return Err(Error::ShapeMismatch(format!(
                "brier image {k}: class counts differ from {c}"
            )));
        }
        if gt.num_pixels() != n_voxel {
            return Err(Error::ShapeMismatch(format!(
                "brier image {k} has {} voxels, image 0 has {n_voxel}",
                gt.num_pixels()
            )));
        }
        let selected: Vec<usize> = match region {
            BrierRegion::All => (0..n_voxel).collect(),
            BrierRegion::Foreground => (0..n_voxel).filter(|&i| gt.at(0, i) < 1.0).collect(),
        };
        if selected.is_empty() {
            return Err(Error::Empty("foreground region of a brier image"));
        }
        voxel_count_sum += selected.len();
        for (class, total) in totals.iter_mut().enumerate() {
            let y = gt.channel(class);
            let yhat = pred.channel(class);
            let sq: f64 = selected
                .iter()
                .map(|&i| {
                    let d = y[i] as f64 - yhat[i] as f64;
                    d * d
                })
                .sum();
            *total += sq / selected.len() as f64;
        }
    }
    let n_image = cohort.len() as f64;
    Ok(BrierReport {
        per_class: totals.into_iter().map(|t| t / n_image).collect(),
        num_images: cohort.len(),
        num_voxels_per_image: voxel_count_sum as f64 / n_image,
        region,
    })
}
