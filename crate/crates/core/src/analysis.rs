//! End-to-end cohort analysis: every metric family computed over one
//! manifest in a single pass, collected into a serializable report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{LabelMap, ProbMap, ScalarMap};
use crate::error::{Error, Result};
use crate::eval::{misclassification_map, pr_curve_from_pooled, uncertainty_pr_curve, DiceReport, Thresholds};
use crate::fusion::{average_gt, majority_vote};
use crate::manifest::CohortManifest;
use crate::stats::{self, observations, pearson, Granularity, Region, VariancePartition};
use crate::uncertainty::{aggregate, SampleSource};
use crate::variability::{brier_score, entropy_map, BrierRegion, BrierReport};

/// Name used for the manifest's standalone predictions.
pub const PREDICTION: &str = "prediction";

/// Label map the Dice and misclassification analyses compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    /// Majority vote of the rater masks, computed on load.
    #[default]
    Majority,
    /// The manifest's `fused_gt_path` of every image.
    Stored,
}

/// Voxels entering the correlation and variance-partition observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationRegion {
    #[default]
    All,
    /// Non-background voxels of the fused label map.
    Foreground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub normalized_entropy: bool,
    pub brier_region: BrierRegion,
    pub thresholds: Thresholds,
    pub granularity: Granularity,
    pub correlation_region: CorrelationRegion,
    pub fusion: FusionMethod,
    /// Sample source standing for epistemic uncertainty in the variance
    /// partition. Aleatoric uncertainty always comes from TTA.
    pub epistemic_source: SampleSource,
    /// Sources every image must provide.
    pub require: Vec<SampleSource>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            normalized_entropy: false,
            brier_region: BrierRegion::All,
            thresholds: Thresholds::default(),
            granularity: Granularity::PerImage,
            correlation_region: CorrelationRegion::All,
            fusion: FusionMethod::Majority,
            epistemic_source: SampleSource::Ttd,
            require: Vec::new(),
        }
    }
}

impl AnalysisConfig {
    pub fn check(&self) -> Result<()> {
        if let Thresholds::Even(k) = self.thresholds {
            if k == 0 {
                return Err(Error::InvalidParameter("threshold count must be >= 1".into()));
            }
        }
        if self.epistemic_source == SampleSource::Tta {
            return Err(Error::InvalidParameter("the epistemic source must be ttd or ensemble".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrierEntry {
    pub source: String,
    pub report: BrierReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucEntry {
    pub source: String,
    /// `None` when the predictions make no mistakes.
    pub auc: Option<f64>,
    pub misclassification_rate: f64,
    pub num_voxels: usize,
    /// Same, pooled only over voxels labeled foreground by the prediction
    /// or the fused GT.
    pub auc_foreground: Option<f64>,
    pub foreground_misclassification_rate: Option<f64>,
    pub foreground_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    /// Uncertainty measure correlated against GT entropy.
    pub measure: String,
    /// `None` when either side has zero variance.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceEntry {
    pub source: String,
    pub per_class_mean: Vec<f64>,
    pub per_class_std: Vec<f64>,
    pub per_image: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTestEntry {
    pub source_a: String,
    pub source_b: String,
    pub class_index: usize,
    pub mean_difference: f64,
    /// Wilcoxon signed-rank.
    pub p_value: f64,
    pub t_test_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub epistemic_source: SampleSource,
    pub aleatoric_source: SampleSource,
    #[serde(flatten)]
    pub partition: VariancePartition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub id: String,
    pub gt_entropy: f64,
    /// Mean entropy over the image per measure.
    pub uncertainty: BTreeMap<String, f64>,
}

/// Per-image means of one measure against GT entropy, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSeries {
    pub measure: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub num_images: usize,
    pub num_raters: usize,
    pub class_names: Vec<String>,
    pub config: AnalysisConfig,
    pub brier: Vec<BrierEntry>,
    pub aucpr: Vec<AucEntry>,
    pub correlations: Vec<CorrelationEntry>,
    pub dice: Vec<DiceEntry>,
    pub paired_tests: Vec<PairedTestEntry>,
    pub variance_partition: Option<PartitionEntry>,
    pub per_image: Vec<ImageRow>,
    /// Sections left out and why.
    pub notes: Vec<String>,
}

/// Everything one image contributes.
struct ImageData {
    soft_gt: ProbMap,
    fused: LabelMap,
    gt_entropy: ScalarMap,
    /// Named mean predictions with their entropy maps, in report order.
    measures: Vec<(String, ProbMap, ScalarMap)>,
}

fn measure_names(manifest: &CohortManifest) -> Vec<String> {
    let mut names = Vec::new();
    if manifest.has_predictions() {
        names.push(PREDICTION.to_string());
    }
    names.extend(
        SampleSource::ALL
            .iter()
            .filter(|s| manifest.has_source(**s))
            .map(|s| s.to_string()),
    );
    names
}

fn load_image(manifest: &CohortManifest, i: usize, config: &AnalysisConfig) -> Result<ImageData> {
    let raters = manifest.load_raters(i)?;
    let soft_gt = average_gt(&raters)?;
    let fused = match config.fusion {
        FusionMethod::Majority => majority_vote(&raters)?,
        FusionMethod::Stored => manifest.load_fused_gt(i)?.ok_or_else(|| {
            Error::Manifest(format!("image '{}' has no fused_gt_path", manifest.images[i].id))
        })?,
    };
    let gt_entropy = entropy_map(&soft_gt, config.normalized_entropy);
    let mut measures = Vec::new();
    if manifest.has_predictions() {
        let p = manifest.load_prediction(i)?.expect("checked by has_predictions");
        let e = entropy_map(&p, config.normalized_entropy);
        measures.push((PREDICTION.to_string(), p, e));
    }
    for source in SampleSource::ALL {
        if !manifest.has_source(source) {
            continue;
        }
        let stack = manifest.load_stack(i, source)?.expect("checked by has_source");
        if stack.shape() != soft_gt.shape() || stack.num_classes() != soft_gt.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "image '{}': {source} stack does not match the rater masks",
                manifest.images[i].id
            )));
        }
        let mean = aggregate(&stack, source)?.mean_prediction;
        let e = entropy_map(&mean, config.normalized_entropy);
        measures.push((source.to_string(), mean, e));
    }
    Ok(ImageData {
        soft_gt,
        fused,
        gt_entropy,
        measures,
    })
}

/// Missing required sources, named per image.
fn check_required(manifest: &CohortManifest, require: &[SampleSource]) -> Result<()> {
    let mut missing = Vec::new();
    for source in require {
        let lacking: Vec<&str> = manifest
            .images
            .iter()
            .filter(|r| !r.sample_stack_paths.contains_key(source))
            .map(|r| r.id.as_str())
            .collect();
        if !lacking.is_empty() {
            missing.push(format!("{source} stacks missing for {}", lacking.join(", ")));
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Manifest(format!("manifest lacks required data: {}", missing.join("; "))))
    }
}

/// Treats degenerate statistics as absent instead of failing the run.
fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroVariance(_) | Error::NoMisclassified | Error::RankDeficient) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn analyze(manifest: &CohortManifest, config: &AnalysisConfig) -> Result<AnalysisReport> {
    config.check()?;
    check_required(manifest, &config.require)?;
    let names = measure_names(manifest);
    if names.is_empty() {
        return Err(Error::Manifest(
            "manifest lists neither predictions nor sample stacks for every image".into(),
        ));
    }
    let images: Vec<ImageData> = (0..manifest.images.len())
        .into_par_iter()
        .map(|i| load_image(manifest, i, config))
        .collect::<Result<_>>()?;
    let n = images.len();
    let mut notes = Vec::new();

    let brier = names
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let pairs: Vec<(ProbMap, ProbMap)> = images
                .iter()
                .map(|d| (d.soft_gt.clone(), d.measures[m].1.clone()))
                .collect();
            Ok(BrierEntry {
                source: name.clone(),
                report: brier_score(&pairs, config.brier_region)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut aucpr = Vec::new();
    for (m, name) in names.iter().enumerate() {
        let unc: Vec<ScalarMap> = images.iter().map(|d| d.measures[m].2.clone()).collect();
        let mis: Vec<ScalarMap> = images
            .iter()
            .map(|d| misclassification_map(&d.measures[m].1.argmax_labels(), &d.fused))
            .collect::<Result<_>>()?;
        let wrong: f64 = mis.iter().map(|s| s.values().iter().map(|&v| v as f64).sum::<f64>()).sum();
        let voxels: usize = mis.iter().map(ScalarMap::num_pixels).sum();
        let curve = optional(uncertainty_pr_curve(&unc, &mis, config.thresholds))?;
        if curve.is_none() {
            notes.push(format!("aucpr for {name}: no misclassified voxels"));
        }
        // foreground: voxels either the prediction or the fused GT labels non-background
        let mut pooled = Vec::new();
        for (d, (u, w)) in images.iter().zip(unc.iter().zip(&mis)) {
            let pred = d.measures[m].1.argmax_labels();
            for i in 0..u.num_pixels() {
                if pred.labels()[i] != 0 || d.fused.labels()[i] != 0 {
                    pooled.push((u.values()[i], w.values()[i] > 0.5));
                }
            }
        }
        let fg_voxels = pooled.len();
        let fg_wrong = pooled.iter().filter(|p| p.1).count();
        let fg_curve = optional(pr_curve_from_pooled(pooled, config.thresholds))?;
        aucpr.push(AucEntry {
            source: name.clone(),
            auc: curve.map(|c| c.auc),
            misclassification_rate: wrong / voxels as f64,
            num_voxels: voxels,
            auc_foreground: fg_curve.map(|c| c.auc),
            foreground_misclassification_rate: (fg_voxels > 0).then(|| fg_wrong as f64 / fg_voxels as f64),
            foreground_voxels: fg_voxels,
        });
    }

    let fused: Vec<LabelMap> = images.iter().map(|d| d.fused.clone()).collect();
    let region = match config.correlation_region {
        CorrelationRegion::All => Region::All,
        CorrelationRegion::Foreground => Region::Foreground(&fused),
    };
    let gt_maps: Vec<ScalarMap> = images.iter().map(|d| d.gt_entropy.clone()).collect();
    let gt_obs = observations(&gt_maps, region, config.granularity)?;
    let mut measure_obs = Vec::new();
    let mut correlations = Vec::new();
    for (m, name) in names.iter().enumerate() {
        let maps: Vec<ScalarMap> = images.iter().map(|d| d.measures[m].2.clone()).collect();
        let obs = observations(&maps, region, config.granularity)?;
        let c = if gt_obs.len() >= 3 {
            optional(pearson(&obs, &gt_obs, config.granularity))?
        } else {
            None
        };
        if c.is_none() {
            notes.push(format!("correlation for {name}: undefined (too few observations or zero variance)"));
        }
        correlations.push(CorrelationEntry {
            measure: name.clone(),
            r: c.map(|c| c.r),
            p_value: c.map(|c| c.p_value),
            n: obs.len(),
        });
        measure_obs.push(obs);
    }

    let mut dice = Vec::new();
    for (m, name) in names.iter().enumerate() {
        let pairs: Vec<(LabelMap, LabelMap)> = images
            .iter()
            .map(|d| (d.measures[m].1.argmax_labels(), d.fused.clone()))
            .collect();
        let r = DiceReport::compute(&pairs)?;
        dice.push(DiceEntry {
            source: name.clone(),
            per_class_mean: r.per_class_mean,
            per_class_std: r.per_class_std,
            per_image: r.per_image_per_class,
        });
    }

    let mut paired_tests = Vec::new();
    if n >= 6 {
        for a in 0..dice.len() {
            for b in a + 1..dice.len() {
                for class in 1..manifest.num_classes {
                    let xa: Vec<f64> = dice[a].per_image.iter().map(|row| row[class]).collect();
                    let xb: Vec<f64> = dice[b].per_image.iter().map(|row| row[class]).collect();
                    let diff = xa.iter().zip(&xb).map(|(p, q)| p - q).sum::<f64>() / n as f64;
                    paired_tests.push(PairedTestEntry {
                        source_a: dice[a].source.clone(),
                        source_b: dice[b].source.clone(),
                        class_index: class,
                        mean_difference: diff,
                        p_value: stats::paired_test(&xa, &xb)?,
                        t_test_p_value: stats::paired_t_test(&xa, &xb)?,
                    });
                }
            }
        }
    } else if dice.len() > 1 {
        notes.push(format!("paired tests skipped: {n} images, need at least 6"));
    }

    let find = |s: SampleSource| names.iter().position(|x| *x == s.to_string());
    let variance_partition = match (find(config.epistemic_source), find(SampleSource::Tta)) {
        (Some(e), Some(a)) if gt_obs.len() >= 4 => {
            let p = optional(stats::variance_partition(&gt_obs, &measure_obs[e], &measure_obs[a]))?;
            if p.is_none() {
                notes.push("variance partition: degenerate regression".into());
            }
            p.map(|partition| PartitionEntry {
                epistemic_source: config.epistemic_source,
                aleatoric_source: SampleSource::Tta,
                partition,
            })
        }
        (Some(_), Some(_)) => {
            notes.push(format!("variance partition skipped: {} observations, need at least 4", gt_obs.len()));
            None
        }
        _ => {
            notes.push(format!(
                "variance partition skipped: needs {} and tta stacks",
                config.epistemic_source
            ));
            None
        }
    };

    let per_image = images
        .iter()
        .zip(&manifest.images)
        .map(|(d, rec)| ImageRow {
            id: rec.id.clone(),
            gt_entropy: d.gt_entropy.mean(),
            uncertainty: d.measures.iter().map(|(name, _, e)| (name.clone(), e.mean())).collect(),
        })
        .collect();

    Ok(AnalysisReport {
        num_images: n,
        num_raters: manifest.num_raters(),
        class_names: manifest.class_names.clone(),
        config: config.clone(),
        brier,
        aucpr,
        correlations,
        dice,
        paired_tests,
        variance_partition,
        per_image,
        notes,
    })
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Per-image GT entropy against one measure, with the per-image
    /// correlation of exactly the plotted points.
    pub fn scatter(&self, measure: &str) -> Option<ScatterSeries> {
        let x: Vec<f64> = self
            .per_image
            .iter()
            .map(|row| row.uncertainty.get(measure).copied())
            .collect::<Option<_>>()?;
        let y: Vec<f64> = self.per_image.iter().map(|row| row.gt_entropy).collect();
        let c = if x.len() >= 3 {
            pearson(&x, &y, Granularity::PerImage).ok()
        } else {
            None
        };
        Some(ScatterSeries {
            measure: measure.to_string(),
            x,
            y,
            r: c.map(|c| c.r),
            p_value: c.map(|c| c.p_value),
        })
    }

    pub fn brier_csv(&self) -> String {
        let mut out = String::from("source");
        for name in &self.class_names {
            write!(out, ",{name}").unwrap();
        }
        out.push_str(",foreground_mean\n");
        for e in &self.brier {
            out.push_str(&e.source);
            for v in &e.report.per_class {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", e.report.foreground_mean()).unwrap();
        }
        out
    }

    pub fn aucpr_csv(&self) -> String {
        let mut out = String::from(
            "source,auc_pr,misclassification_rate,num_voxels,auc_pr_foreground,foreground_misclassification_rate,foreground_voxels\n",
        );
        for e in &self.aucpr {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.source,
                opt(e.auc),
                e.misclassification_rate,
                e.num_voxels,
                opt(e.auc_foreground),
                opt(e.foreground_misclassification_rate),
                e.foreground_voxels
            )
            .unwrap();
        }
        out
    }

    pub fn correlation_csv(&self) -> String {
        let mut out = String::from("measure,r,p_value,n\n");
        for e in &self.correlations {
            writeln!(out, "{},{},{},{}", e.measure, opt(e.r), opt(e.p_value), e.n).unwrap();
        }
        out
    }

    pub fn dice_csv(&self) -> String {
        let mut out = String::from("source,class,mean,std\n");
        for e in &self.dice {
            for (k, name) in self.class_names.iter().enumerate() {
                writeln!(out, "{},{name},{},{}", e.source, e.per_class_mean[k], e.per_class_std[k]).unwrap();
            }
        }
        out
    }

    pub fn paired_tests_csv(&self) -> String {
        let mut out = String::from("source_a,source_b,class,mean_difference,wilcoxon_p,t_test_p\n");
        for e in &self.paired_tests {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.source_a, e.source_b, self.class_names[e.class_index], e.mean_difference, e.p_value, e.t_test_p_value
            )
            .unwrap();
        }
        out
    }

    pub fn variance_partition_csv(&self) -> String {
        let mut out = String::from(
            "epistemic_source,aleatoric_source,r2_epistemic_alone,r2_aleatoric_alone,r2_joint,\
             unique_epistemic,unique_aleatoric,common,n\n",
        );
        if let Some(e) = &self.variance_partition {
            let p = &e.partition;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.epistemic_source,
                e.aleatoric_source,
                p.r2_epistemic_alone,
                p.r2_aleatoric_alone,
                p.r2_joint,
                p.unique_epistemic,
                p.unique_aleatoric,
                p.common,
                p.n
            )
            .unwrap();
        }
        out
    }

    pub fn per_image_csv(&self) -> String {
        let measures: Vec<&String> = self
            .per_image
            .first()
            .map(|r| r.uncertainty.keys().collect())
            .unwrap_or_default();
        let mut out = String::from("id,gt_entropy");
        for m in &measures {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
        for row in &self.per_image {
            write!(out, "{},{}", row.id, row.gt_entropy).unwrap();
            for m in &measures {
                write!(out, ",{}", row.uncertainty[*m]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}
