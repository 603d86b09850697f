use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raterlens_core::manifest::transforms_path;
use raterlens_core::npy::{validity_path, write_label, write_prob, write_stack};
use raterlens_core::uncertainty::{transforms_to_json, warp_planes, Warp};
use raterlens_core::{load_manifest, Error, LabelMap, ProbMap, SampleSource, SampleStack, TransformParams};

const H: usize = 8;
const W: usize = 9;
const C: usize = 3;

fn labels(g: &mut ChaCha8Rng) -> LabelMap {
    LabelMap::new(H, W, C, (0..H * W).map(|_| g.random_range(0..C as u8)).collect()).unwrap()
}

fn prob(g: &mut ChaCha8Rng) -> ProbMap {
    let w: Vec<f64> = (0..C * H * W).map(|_| g.random::<f64>()).collect();
    ProbMap::from_weights(H, W, C, &w).unwrap()
}

/// Two images, two raters each, with a prediction and a ttd stack.
fn write_cohort(dir: &Path) -> serde_json::Value {
    let mut g = ChaCha8Rng::seed_from_u64(0);
    let mut images = Vec::new();
    for id in ["a", "b"] {
        let sub = dir.join(id);
        fs::create_dir_all(&sub).unwrap();
        for r in 0..2 {
            write_label(&labels(&mut g), &sub.join(format!("r{r}.npy"))).unwrap();
        }
        write_prob(&prob(&mut g), &sub.join("pred.npy")).unwrap();
        let stack = SampleStack::new((0..3).map(|_| prob(&mut g)).collect()).unwrap();
        write_stack(&stack, &sub.join("ttd.npy")).unwrap();
        images.push(serde_json::json!({
            "id": id,
            "rater_mask_paths": [format!("{id}/r0.npy"), format!("{id}/r1.npy")],
            "prediction_path": format!("{id}/pred.npy"),
            "sample_stack_paths": {"ttd": format!("{id}/ttd.npy")},
        }));
    }
    serde_json::json!({
        "num_classes": C,
        "class_names": ["background", "one", "two"],
        "images": images,
    })
}

fn load(dir: &Path, m: &serde_json::Value) -> raterlens_core::Result<raterlens_core::CohortManifest> {
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(m).unwrap()).unwrap();
    load_manifest(&path)
}

#[test]
fn loads_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let m = load(dir.path(), &write_cohort(dir.path())).unwrap();
    assert_eq!(m.num_raters(), 2);
    assert!(m.has_source(SampleSource::Ttd));
    assert!(!m.has_source(SampleSource::Tta));
    assert_eq!(m.load_raters(1).unwrap().len(), 2);
    assert_eq!(m.load_stack(0, SampleSource::Ttd).unwrap().unwrap().num_samples(), 3);
    assert!(m.load_stack(0, SampleSource::Ensemble).unwrap().is_none());
}

#[test]
fn rejects_rater_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = write_cohort(dir.path());
    m["images"][1]["rater_mask_paths"].as_array_mut().unwrap().pop();
    match load(dir.path(), &m) {
        Err(Error::RaterCountMismatch { image, expected: 2, found: 1 }) => assert_eq!(image, "b"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rejects_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_cohort(dir.path());
    fs::remove_file(dir.path().join("a/pred.npy")).unwrap();
    match load(dir.path(), &m) {
        Err(Error::MissingFile(p)) => assert!(p.ends_with("a/pred.npy")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rejects_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_cohort(dir.path());
    let small = LabelMap::new(H - 1, W, C, vec![0; (H - 1) * W]).unwrap();
    write_label(&small, &dir.path().join("b/r1.npy")).unwrap();
    assert!(matches!(load(dir.path(), &m), Err(Error::ShapeMismatch(_))));
}

#[test]
fn rejects_wrong_dtype_and_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = write_cohort(dir.path());
    m["images"][0]["rater_mask_paths"][0] = "a/pred.npy".into();
    assert!(matches!(load(dir.path(), &m), Err(Error::Manifest(_))));

    let mut m = write_cohort(dir.path());
    m["images"][0]["extra"] = 1.into();
    assert!(matches!(load(dir.path(), &m), Err(Error::Json { .. })));
}

#[test]
fn raw_augmented_stack_is_inverted_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = write_cohort(dir.path());
    let mut g = ChaCha8Rng::seed_from_u64(1);
    let truth = prob(&mut g);
    let data: Vec<f64> = truth.as_slice().iter().map(|&v| v as f64).collect();
    let transforms = vec![
        TransformParams::identity(),
        TransformParams::translation(2.0, 0.0),
        TransformParams::translation(-1.0, 3.0),
    ];
    let raw: Vec<ProbMap> = transforms
        .iter()
        .map(|t| {
            let (fwd, _) = warp_planes(&data, C, H, W, t, Warp::Forward, &[1.0, 0.0, 0.0]);
            ProbMap::new(H, W, C, fwd.iter().map(|&v| v as f32).collect()).unwrap()
        })
        .collect();
    let stack_path = dir.path().join("a/tta.npy");
    write_stack(&SampleStack::new(raw).unwrap(), &stack_path).unwrap();
    fs::write(transforms_path(&stack_path), transforms_to_json(&transforms)).unwrap();
    assert!(!validity_path(&stack_path).exists());
    m["images"][0]["sample_stack_paths"]["tta"] = "a/tta.npy".into();

    let loaded = load(dir.path(), &m).unwrap().load_stack(0, SampleSource::Tta).unwrap().unwrap();
    for (s, t) in transforms.iter().enumerate() {
        let (dx, dy) = (t.translate_x as i64, t.translate_y as i64);
        for i in 0..H * W {
            let (y, x) = ((i / W) as i64, (i % W) as i64);
            let inside = (0..H as i64).contains(&(y + dy)) && (0..W as i64).contains(&(x + dx));
            assert_eq!(loaded.validity()[s][i], inside, "sample {s} pixel {i}");
            if inside {
                assert_eq!(loaded.samples()[s].pixel(i), truth.pixel(i));
            }
        }
    }
}
