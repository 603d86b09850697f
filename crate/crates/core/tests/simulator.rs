use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use raterlens_core::simulator::{generate_phantom, simulate_samples, SubjectContext};
use raterlens_core::uncertainty::sample_transforms;
use raterlens_core::{
    aggregate, build_cohort, gt_entropy, CohortSpec, LabelMap, PhantomSpec, RaterStyle, SampleSource, SurrogateSpec,
    TransformLimits,
};

fn small_spec() -> CohortSpec {
    CohortSpec {
        phantom: PhantomSpec {
            height: 48,
            width: 48,
            ..PhantomSpec::default()
        },
        num_samples: 4,
        ..CohortSpec::default()
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn mean_entropy(labels: &LabelMap, amp: f64, seed: u64) -> f64 {
    let spec = SurrogateSpec {
        epistemic_amp: amp,
        aleatoric_amp: 0.0,
        seed,
        ..SurrogateSpec::default()
    };
    let stack = simulate_samples(labels, &spec, SampleSource::Ttd, 8, None, &SubjectContext::default()).unwrap();
    let u = aggregate(&stack, SampleSource::Ttd).unwrap().uncertainty;
    u.values().iter().map(|&v| v as f64).sum::<f64>() / u.values().len() as f64
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_cohort(&small_spec(), 3, 11, a.path()).unwrap();
    build_cohort(&small_spec(), 3, 11, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 10);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    build_cohort(&small_spec(), 3, 12, c.path()).unwrap();
    assert_ne!(ta, tree(c.path()));
}

#[test]
fn every_written_array_reloads_valid() {
    let dir = tempfile::tempdir().unwrap();
    build_cohort(&small_spec(), 4, 3, dir.path()).unwrap();
    let m = raterlens_core::load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.images.len(), 4);
    for i in 0..m.images.len() {
        assert_eq!(m.load_raters(i).unwrap().len(), 3);
        assert!(m.load_fused_gt(i).unwrap().is_some());
        assert!(m.load_prediction(i).unwrap().is_some());
        for source in [SampleSource::Tta, SampleSource::Ttd, SampleSource::Ensemble] {
            let s = m.load_stack(i, source).unwrap().unwrap();
            assert_eq!(s.num_samples(), 4);
            if source != SampleSource::Tta {
                assert!(s.validity().iter().flatten().all(|&v| v));
            }
        }
    }
}

#[test]
fn single_identity_rater_has_no_disagreement() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        raters: vec![RaterStyle::identity(1)],
        ..small_spec()
    };
    let m = build_cohort(&spec, 1, 5, dir.path()).unwrap();
    let raters = m.load_raters(0).unwrap();
    assert!(gt_entropy(&raters, false).unwrap().values().iter().all(|&v| v == 0.0));
}

#[test]
fn epistemic_entropy_grows_with_amplitude() {
    let spec = PhantomSpec {
        height: 64,
        width: 64,
        atypicality: 0.5,
        ..PhantomSpec::default()
    };
    let mut totals = [0.0; 3];
    for seed in 0..20 {
        let labels = generate_phantom(&spec, seed).unwrap().labels;
        let e: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&a| mean_entropy(&labels, a, seed)).collect();
        assert_eq!(e[0], 0.0);
        for k in 0..3 {
            totals[k] += e[k];
        }
    }
    assert!(totals[0] < totals[1] && totals[1] < totals[2], "{totals:?}");
}

#[test]
fn aleatoric_entropy_sits_on_boundaries() {
    let spec = PhantomSpec {
        height: 64,
        width: 64,
        ..PhantomSpec::default()
    };
    let surrogate = SurrogateSpec {
        epistemic_amp: 0.0,
        ..SurrogateSpec::default()
    };
    let (mut near, mut total) = (0.0, 0.0);
    for seed in 0..5 {
        let labels = generate_phantom(&spec, seed).unwrap().labels;
        let ts = sample_transforms(8, &TransformLimits::default(), seed).unwrap();
        let stack =
            simulate_samples(&labels, &surrogate, SampleSource::Tta, 8, Some(&ts), &SubjectContext::default()).unwrap();
        let u = aggregate(&stack, SampleSource::Tta).unwrap().uncertainty;
        let l = labels.labels();
        for y in 0..64i64 {
            for x in 0..64i64 {
                let v = u.values()[(y * 64 + x) as usize] as f64;
                let here = l[(y * 64 + x) as usize];
                let mut edge = false;
                for yy in (y - 4).max(0)..=(y + 4).min(63) {
                    for xx in (x - 4).max(0)..=(x + 4).min(63) {
                        edge |= l[(yy * 64 + xx) as usize] != here;
                    }
                }
                total += v;
                if edge {
                    near += v;
                }
            }
        }
    }
    assert!(total > 0.0);
    assert!(near / total >= 0.9, "{}", near / total);
}
