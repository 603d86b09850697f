//! Label fusion across raters: majority vote, the soft average GT, and the
//! per-epoch random rater schedule used for random-sampling training.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::array::{ensure_same_shape, LabelMap, ProbMap};
use crate::error::{Error, Result};
use crate::rng;

fn check_raters(raters: &[LabelMap]) -> Result<&LabelMap> {
    let first = raters.first().ok_or(Error::Empty("rater set"))?;
    for (r, m) in raters.iter().enumerate().skip(1) {
        ensure_same_shape(&format!("rater {r}"), first.shape(), m.shape())?;
        if m.num_classes() != first.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "rater {r} has {} classes, rater 0 has {}",
                m.num_classes(),
                first.num_classes()
            )));
        }
    }
    Ok(first)
}

/// Per-pixel plurality label; ties go to the lowest class index.
pub fn majority_vote(raters: &[LabelMap]) -> Result<LabelMap> {
    let first = check_raters(raters)?;
    let c = first.num_classes();
    let mut votes = vec![0u32; c];
    let labels = (0..first.num_pixels())
        .map(|i| {
            votes.iter_mut().for_each(|v| *v = 0);
            for m in raters {
                votes[m.labels()[i] as usize] += 1;
            }
            let mut best = 0;
            for k in 1..c {
                if votes[k] > votes[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(first.height(), first.width(), c, labels)
}

/// Per-pixel class frequencies across raters (the averaged one-hot masks).
pub fn average_gt(raters: &[LabelMap]) -> Result<ProbMap> {
    let first = check_raters(raters)?;
    let c = first.num_classes();
    let plane = first.num_pixels();
    let mut counts = vec![0u32; c * plane];
    for m in raters {
        for (i, &l) in m.labels().iter().enumerate() {
            counts[l as usize * plane + i] += 1;
        }
    }
    let r = raters.len() as f64;
    let probs = counts.iter().map(|&k| (k as f64 / r) as f32).collect();
    ProbMap::new(first.height(), first.width(), c, probs)
}

/// Rater index to train on for every (epoch, image) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterSchedule {
    pub num_epochs: usize,
    pub num_images: usize,
    pub num_raters: usize,
    pub seed: u64,
    /// Row-major by epoch: `assignments[epoch * num_images + image]`.
    pub assignments: Vec<usize>,
}

impl RaterSchedule {
    pub fn get(&self, epoch: usize, image: usize) -> usize {
        self.assignments[epoch * self.num_images + image]
    }

    /// CSV with a `# seed=<n>` comment line followed by
    /// `epoch,image_id,rater_index` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.assignments.len() * 12 + 64);
        let _ = writeln!(out, "# seed={}", self.seed);
        out.push_str("epoch,image_id,rater_index\n");
        for epoch in 0..self.num_epochs {
            for image in 0..self.num_images {
                let _ = writeln!(out, "{epoch},{image},{}", self.get(epoch, image));
            }
        }
        out
    }
}

/// Independent uniform rater draws per (epoch, image).
///
/// Epoch `e` draws from ChaCha8 stream `e` of `seed`, so any epoch's row can
/// be regenerated on its own.
pub fn random_schedule(
    num_images: usize,
    num_raters: usize,
    num_epochs: usize,
    seed: u64,
) -> Result<RaterSchedule> {
    if num_images == 0 || num_raters == 0 || num_epochs == 0 {
        return Err(Error::InvalidParameter(
            "schedule counts must all be >= 1".into(),
        ));
    }
    let mut assignments = Vec::with_capacity(num_images * num_epochs);
    for epoch in 0..num_epochs {
        let mut g = rng::stream(seed, epoch as u64);
        assignments.extend((0..num_images).map(|_| g.random_range(0..num_raters)));
    }
    Ok(RaterSchedule {
        num_epochs,
        num_images,
        num_raters,
        seed,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn px(labels: &[u8], c: usize) -> Vec<LabelMap> {
        labels
            .iter()
            .map(|&l| LabelMap::new(1, 1, c, vec![l]).unwrap())
            .collect()
    }

    #[test]
    fn strict_majority() {
        assert_eq!(majority_vote(&px(&[1, 1, 2], 5)).unwrap().labels(), &[1]);
    }

    #[test]
    fn three_way_tie_goes_low() {
        assert_eq!(majority_vote(&px(&[3, 2, 1], 5)).unwrap().labels(), &[1]);
    }

    #[test]
    fn single_rater_is_identity() {
        let m = LabelMap::new(2, 2, 3, vec![0, 2, 1, 2]).unwrap();
        assert_eq!(majority_vote(std::slice::from_ref(&m)).unwrap(), m);
    }

    #[test]
    fn average_counts_frequencies() {
        let p = average_gt(&px(&[1, 1, 2], 3)).unwrap();
        // direct frequency count: class 1 twice, class 2 once out of 3
        assert_eq!(p.pixel(0), vec![0.0, (2.0f64 / 3.0) as f32, (1.0f64 / 3.0) as f32]);
    }

    #[test]
    fn unanimous_average_is_one_hot() {
        let m = LabelMap::new(2, 3, 4, vec![0, 1, 2, 3, 3, 0]).unwrap();
        assert_eq!(average_gt(&[m.clone(), m.clone(), m.clone()]).unwrap(), m.one_hot());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = LabelMap::filled(2, 2, 3, 0).unwrap();
        let b = LabelMap::filled(2, 3, 3, 0).unwrap();
        assert!(matches!(majority_vote(&[a.clone(), b.clone()]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(average_gt(&[a, b]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn single_rater_schedule_is_all_zero() {
        let s = random_schedule(5, 1, 7, 3).unwrap();
        assert!(s.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn schedule_is_deterministic() {
        assert_eq!(random_schedule(20, 3, 5, 11).unwrap(), random_schedule(20, 3, 5, 11).unwrap());
        assert_ne!(random_schedule(20, 3, 5, 11).unwrap(), random_schedule(20, 3, 5, 12).unwrap());
    }

    #[test]
    fn schedule_frequencies_within_binomial_bound() {
        let s = random_schedule(100, 3, 100, 2024).unwrap();
        let n = s.assignments.len() as f64;
        let sigma = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for r in 0..3 {
            let k = s.assignments.iter().filter(|&&a| a == r).count() as f64;
            assert!((k - n / 3.0).abs() <= 3.0 * sigma, "rater {r}: {k}");
        }
    }

    #[test]
    fn schedule_csv_layout() {
        let s = random_schedule(2, 3, 2, 9).unwrap();
        let csv = s.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "# seed=9");
        assert_eq!(lines[1], "epoch,image_id,rater_index");
        assert_eq!(lines.len(), 2 + 4);
        assert!(lines[5].starts_with("1,1,"));
    }

    fn rater_set() -> impl Strategy<Value = Vec<LabelMap>> {
        (1usize..6, 2usize..6, 1usize..5, 1usize..5).prop_flat_map(|(r, c, h, w)| {
            proptest::collection::vec(proptest::collection::vec(0..c as u8, h * w), r).prop_map(
                move |maps| {
                    maps.into_iter()
                        .map(|l| LabelMap::new(h, w, c, l).unwrap())
                        .collect()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn argmax_of_average_is_majority(raters in rater_set()) {
            let avg = average_gt(&raters).unwrap();
            prop_assert_eq!(avg.argmax_labels(), majority_vote(&raters).unwrap());
            // values are multiples of 1/R
            let r = raters.len() as f64;
            for &v in avg.as_slice() {
                let k = (v as f64 * r).round();
                prop_assert!((v as f64 - k / r).abs() < 1e-6);
            }
        }

        #[test]
        fn majority_is_permutation_invariant(raters in rater_set(), rot in 0usize..6) {
            let mut perm = raters.clone();
            perm.rotate_left(rot % raters.len());
            perm.reverse();
            prop_assert_eq!(majority_vote(&perm).unwrap(), majority_vote(&raters).unwrap());
        }

        #[test]
        fn odd_binary_majority_never_ties(
            maps in (0usize..3).prop_flat_map(|k| proptest::collection::vec(proptest::collection::vec(0u8..2, 9), 2 * k + 1))
        ) {
            let raters: Vec<_> = maps.into_iter().map(|l| LabelMap::new(3, 3, 2, l).unwrap()).collect();
            let avg = average_gt(&raters).unwrap();
            for i in 0..9 {
                prop_assert_ne!(avg.at(0, i), avg.at(1, i));
            }
            prop_assert_eq!(avg.argmax_labels(), majority_vote(&raters).unwrap());
        }
    }
}
