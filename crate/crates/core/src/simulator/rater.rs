//! Style-parameterized raters: boundaries moved by a constant offset plus a
//! smooth random perturbation.

use serde::{Deserialize, Serialize};

use super::field::{class_distances, smooth_field};
use crate::array::LabelMap;
use crate::error::{Error, Result};
use crate::rng;

/// Default Gaussian width of the smooth perturbation fields, in pixels.
pub const DEFAULT_FIELD_SIGMA: f64 = 8.0;

/// Perturbation fields are clipped to this many standard deviations.
pub const FIELD_CLIP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterStyle {
    /// Boundary offset in pixels; positive grows every foreground class.
    pub bias: f64,
    /// Amplitude in pixels of the smooth boundary perturbation.
    pub variance: f64,
    pub seed: u64,
}

impl RaterStyle {
    pub fn identity(seed: u64) -> Self {
        Self {
            bias: 0.0,
            variance: 0.0,
            seed,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !self.bias.is_finite() || !(self.variance.is_finite() && self.variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rater style needs finite bias and variance >= 0, got bias {} variance {}",
                self.bias, self.variance
            )));
        }
        Ok(())
    }
}

pub fn simulate_rater(true_labels: &LabelMap, style: &RaterStyle) -> Result<LabelMap> {
    simulate_rater_with(true_labels, style, DEFAULT_FIELD_SIGMA, None)
}

/// Rater with a per-pixel multiplier on the perturbation amplitude.
///
/// A pixel is claimed by foreground class `c` when its signed distance to
/// `c` is below the local offset `bias + variance * scale * field`; among
/// several claims the nearest class wins, otherwise it is background.
pub fn simulate_rater_with(
    true_labels: &LabelMap,
    style: &RaterStyle,
    field_sigma: f64,
    scale: Option<&[f64]>,
) -> Result<LabelMap> {
    style.check()?;
    let (h, w) = true_labels.shape();
    if let Some(s) = scale {
        if s.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "rater scale has {} values for a {h}x{w} map",
                s.len()
            )));
        }
    }
    let sd = class_distances(true_labels);
    Ok(rater_from_distances(&sd, true_labels, style, field_sigma, scale))
}

pub(crate) fn rater_from_distances(
    sd: &[Vec<f64>],
    true_labels: &LabelMap,
    style: &RaterStyle,
    field_sigma: f64,
    scale: Option<&[f64]>,
) -> LabelMap {
    let (h, w) = true_labels.shape();
    let field = if style.variance > 0.0 {
        smooth_field(h, w, field_sigma, &mut rng::seeded(style.seed))
    } else {
        vec![0.0; h * w]
    };
    let labels: Vec<u8> = (0..h * w)
        .map(|i| {
            let s = scale.map_or(1.0, |s| s[i]);
            let offset = style.bias + style.variance * s * field[i].clamp(-FIELD_CLIP, FIELD_CLIP);
            let mut best = (0u8, f64::INFINITY);
            for (c, d) in sd.iter().enumerate().skip(1) {
                if d[i] < offset && d[i] < best.1 {
                    best = (c as u8, d[i]);
                }
            }
            best.0
        })
        .collect();
    LabelMap::new(h, w, true_labels.num_classes(), labels).expect("labels come from the class range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::field::distance_to;
    use crate::simulator::phantom::{generate_phantom, PhantomSpec};
    use crate::variability::gt_entropy;

    fn truth() -> LabelMap {
        generate_phantom(&PhantomSpec::default(), 0).unwrap().labels
    }

    #[test]
    fn identity_style_copies_truth() {
        let t = truth();
        assert_eq!(simulate_rater(&t, &RaterStyle::identity(3)).unwrap(), t);
    }

    #[test]
    fn positive_bias_grows_every_class() {
        let t = truth();
        let r = simulate_rater(
            &t,
            &RaterStyle {
                bias: 2.0,
                variance: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        for c in 1..=4u8 {
            assert!(r.count(c) > t.count(c), "class {c}");
        }
        let r = simulate_rater(
            &t,
            &RaterStyle {
                bias: -2.0,
                variance: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        for c in 1..=4u8 {
            assert!(r.count(c) < t.count(c), "class {c}");
        }
    }

    #[test]
    fn disagreement_stays_near_boundaries() {
        let t = truth();
        let (h, w) = t.shape();
        let style = |seed| RaterStyle {
            bias: 0.5,
            variance: 1.5,
            seed,
        };
        let raters = vec![
            simulate_rater(&t, &style(1)).unwrap(),
            simulate_rater(&t, &style(2)).unwrap(),
        ];
        let ent = gt_entropy(&raters, false).unwrap();
        assert!(ent.max() > 0.0);
        // pixels whose 4-neighbourhood holds another label
        let boundary: Vec<bool> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let l = t.labels()[i];
                [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dy, dx)| {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && t.get(yy as usize, xx as usize) != l
                })
            })
            .collect();
        let dist = distance_to(&boundary, h, w);
        let limit = 2.0 * (0.5 + 3.0 * 1.5);
        for (i, &e) in ent.values().iter().enumerate() {
            if e > 0.0 {
                assert!(dist[i] <= limit, "pixel {i} at {}", dist[i]);
            }
        }
    }

    #[test]
    fn scale_must_match_shape() {
        let t = truth();
        assert!(simulate_rater_with(&t, &RaterStyle::identity(0), 8.0, Some(&[1.0])).is_err());
    }

    #[test]
    fn rejects_negative_variance() {
        let t = truth();
        let s = RaterStyle {
            bias: 0.0,
            variance: -1.0,
            seed: 0,
        };
        assert!(simulate_rater(&t, &s).is_err());
    }
}
