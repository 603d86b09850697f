use raterlens_core::eval::pr_curve_from_pooled;
use raterlens_core::{
    aggregate, analyze, build_cohort, majority_vote, AnalysisConfig, CohortSpec, Error, PhantomSpec, SampleSource,
    Thresholds,
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

#[test]
fn report_sections_match_independent_pooling() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_cohort(&small_spec(), 6, 2, dir.path()).unwrap();
    let config = AnalysisConfig {
        thresholds: Thresholds::Exact,
        ..AnalysisConfig::default()
    };
    let report = analyze(&m, &config).unwrap();
    assert_eq!(report.num_images, 6);
    assert_eq!(report.per_image.len(), 6);
    assert_eq!(report.num_raters, 3);
    let names: Vec<&str> = report.brier.iter().map(|b| b.source.as_str()).collect();
    assert_eq!(names, ["prediction", "tta", "ttd", "ensemble"]);

    let (mut all, mut fg) = (Vec::new(), Vec::new());
    for i in 0..6 {
        let fused = majority_vote(&m.load_raters(i).unwrap()).unwrap();
        let result = aggregate(&m.load_stack(i, SampleSource::Ttd).unwrap().unwrap(), SampleSource::Ttd).unwrap();
        let pred = result.mean_prediction.argmax_labels();
        for p in 0..fused.num_pixels() {
            let v = (result.uncertainty.values()[p], pred.labels()[p] != fused.labels()[p]);
            all.push(v);
            if pred.labels()[p] != 0 || fused.labels()[p] != 0 {
                fg.push(v);
            }
        }
    }
    let entry = report.aucpr.iter().find(|e| e.source == "ttd").unwrap();
    assert_eq!(entry.num_voxels, all.len());
    assert_eq!(entry.foreground_voxels, fg.len());
    assert!(fg.len() < all.len());
    let want_all = pr_curve_from_pooled(all, Thresholds::Exact).unwrap().auc;
    let want_fg = pr_curve_from_pooled(fg, Thresholds::Exact).unwrap().auc;
    assert!((entry.auc.unwrap() - want_all).abs() < 1e-12);
    assert!((entry.auc_foreground.unwrap() - want_fg).abs() < 1e-12);

    let partition = report.variance_partition.as_ref().unwrap();
    let p = &partition.partition;
    assert!((p.unique_epistemic + p.unique_aleatoric + p.common - p.r2_joint).abs() < 1e-9);
}

#[test]
fn missing_required_source_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = build_cohort(&small_spec(), 2, 4, dir.path()).unwrap();
    m.images[1].sample_stack_paths.remove(&SampleSource::Ensemble);
    let config = AnalysisConfig {
        require: vec![SampleSource::Ensemble],
        ..AnalysisConfig::default()
    };
    match analyze(&m, &config) {
        Err(e @ Error::Manifest(_)) => assert!(e.to_string().contains("ensemble"), "{e}"),
        other => panic!("{other:?}"),
    }
}
