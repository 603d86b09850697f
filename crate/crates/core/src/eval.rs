//! Segmentation accuracy (Dice) and uncertainty quality.
//!
//! Uncertainty quality follows a confusion framework in which a voxel is
//! "positive" when its uncertainty reaches a threshold and the event being
//! detected is a misclassification. A true positive is an uncertain wrong
//! voxel; a false positive is an uncertain correct voxel.

use serde::{Deserialize, Serialize};

use crate::array::{ensure_same_shape, LabelMap, ScalarMap};
use crate::error::{Error, Result};

/// Dice overlap `2|P ∩ G| / (|P| + |G|)` of one class; 1.0 when the class
/// is absent from both maps.
pub fn dice(pred: &LabelMap, gt: &LabelMap, class_index: u8) -> Result<f64> {
    ensure_same_shape("dice prediction vs ground truth", gt.shape(), pred.shape())?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        let (ia, ib) = (a == class_index, b == class_index);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// 1.0 where the prediction disagrees with the ground truth, else 0.0.
pub fn misclassification_map(pred: &LabelMap, gt: &LabelMap) -> Result<ScalarMap> {
    ensure_same_shape("misclassification map", gt.shape(), pred.shape())?;
    let values = pred
        .labels()
        .iter()
        .zip(gt.labels())
        .map(|(a, b)| if a != b { 1.0 } else { 0.0 })
        .collect();
    ScalarMap::new(pred.height(), pred.width(), values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    /// `per_image_per_class[image][class]`.
    pub per_image_per_class: Vec<Vec<f64>>,
    pub per_class_mean: Vec<f64>,
    /// Sample standard deviation (n - 1); 0 for a single image.
    pub per_class_std: Vec<f64>,
}

impl DiceReport {
    /// Dice of every class for every (prediction, ground truth) pair.
    pub fn compute(pairs: &[(LabelMap, LabelMap)]) -> Result<Self> {
        let (p0, _) = pairs.first().ok_or(Error::Empty("dice cohort"))?;
        let c = p0.num_classes();
        let table = pairs
            .iter()
            .map(|(pred, gt)| {
                (0..c)
                    .map(|k| dice(pred, gt, k as u8))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_table(table))
    }

    pub fn from_table(per_image_per_class: Vec<Vec<f64>>) -> Self {
        let n = per_image_per_class.len();
        let c = per_image_per_class.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for k in 0..c {
            let col: Vec<f64> = per_image_per_class.iter().map(|r| r[k]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            mean[k] = m;
            if n > 1 {
                let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
                std[k] = (ss / (n - 1) as f64).sqrt();
            }
        }
        Self {
            per_image_per_class,
            per_class_mean: mean,
            per_class_std: std,
        }
    }

    /// Column of one class across images.
    pub fn class_column(&self, class: usize) -> Vec<f64> {
        self.per_image_per_class.iter().map(|r| r[class]).collect()
    }

    /// CSV: `class_index,class_name,mean,std,mean_percent,std_percent`.
    pub fn summary_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class_index,class_name,mean,std,mean_percent,std_percent\n");
        for (k, (m, s)) in self.per_class_mean.iter().zip(&self.per_class_std).enumerate() {
            let name = class_names.get(k).map(String::as_str).unwrap_or("");
            out.push_str(&format!("{k},{name},{m},{s},{},{}\n", m * 100.0, s * 100.0));
        }
        out
    }
}

/// How the uncertainty thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholds {
    /// `K` thresholds evenly spaced on `[0, max observed uncertainty]`.
    Even(usize),
    /// Every distinct observed uncertainty value.
    Exact,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::Even(100)
    }
}

/// Precision-recall curve of uncertainty as a misclassification detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Descending. The final point (threshold `+inf`, nothing flagged) is
    /// the `(recall 0, precision 1)` anchor.
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub auc: f64,
    pub num_voxels: usize,
    pub num_misclassified: usize,
}

impl PrCurve {
    pub fn misclassification_rate(&self) -> f64 {
        self.num_misclassified as f64 / self.num_voxels as f64
    }

    /// CSV: `threshold,precision,recall`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for ((t, p), r) in self.thresholds.iter().zip(&self.precision).zip(&self.recall) {
            out.push_str(&format!("{t},{p},{r}\n"));
        }
        out
    }
}

/// Pools voxels across images, sweeps uncertainty thresholds (a voxel is
/// flagged when `u >= t`) and integrates precision over recall with the
/// trapezoid rule.
///
/// Precision with nothing flagged is 1.0. Points are ordered by recall,
/// ties broken by descending threshold, which is the order a sweep from
/// high to low threshold visits them.
pub fn uncertainty_pr_curve(
    uncertainty: &[ScalarMap],
    misclassified: &[ScalarMap],
    thresholds: Thresholds,
) -> Result<PrCurve> {
    if uncertainty.is_empty() {
        return Err(Error::Empty("uncertainty maps"));
    }
    if uncertainty.len() != misclassified.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} uncertainty maps but {} misclassification maps",
            uncertainty.len(),
            misclassified.len()
        )));
    }
    let mut pooled: Vec<(f32, bool)> = Vec::new();
    for (k, (u, m)) in uncertainty.iter().zip(misclassified).enumerate() {
        ensure_same_shape(&format!("pr image {k}"), u.shape(), m.shape())?;
        pooled.extend(u.values().iter().zip(m.values()).map(|(&a, &b)| (a, b > 0.5)));
    }
    pr_curve_from_pooled(pooled, thresholds)
}

/// Same as [`uncertainty_pr_curve`] over already pooled `(u, wrong)` voxels.
pub fn pr_curve_from_pooled(mut pooled: Vec<(f32, bool)>, thresholds: Thresholds) -> Result<PrCurve> {
    let total_pos = pooled.iter().filter(|v| v.1).count();
    if total_pos == 0 {
        return Err(Error::NoMisclassified);
    }
    let n = pooled.len();
    // descending uncertainty; a threshold t flags the prefix with u >= t
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));

    let cuts: Vec<f64> = match thresholds {
        Thresholds::Exact => {
            let mut v: Vec<f64> = pooled.iter().map(|p| p.0 as f64).collect();
            v.dedup();
            v
        }
        Thresholds::Even(k) => {
            if k == 0 {
                return Err(Error::InvalidParameter("need at least one threshold".into()));
            }
            let max = pooled[0].0 as f64;
            if k == 1 {
                vec![0.0]
            } else {
                (0..k)
                    .rev()
                    .map(|j| if j == k - 1 { max } else { max * j as f64 / (k - 1) as f64 })
                    .collect()
            }
        }
    };

    let mut ts = vec![f64::INFINITY];
    let mut precision = vec![1.0];
    let mut recall = vec![0.0];
    let (mut idx, mut tp, mut fp) = (0usize, 0usize, 0usize);
    for &t in &cuts {
        while idx < n && pooled[idx].0 as f64 >= t {
            if pooled[idx].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        ts.push(t);
        precision.push(if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 });
        recall.push(tp as f64 / total_pos as f64);
    }

    let auc = trapezoid(&recall, &precision);
    Ok(PrCurve {
        thresholds: ts,
        precision,
        recall,
        auc,
        num_voxels: n,
        num_misclassified: total_pos,
    })
}

/// Trapezoid integral of `y` over nondecreasing `x`.
fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}
