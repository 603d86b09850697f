//! `raterlens` command-line front end.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use raterlens_core::analysis::{self, AnalysisConfig, AnalysisReport, CorrelationRegion, FusionMethod};
use raterlens_core::eval::{misclassification_map, uncertainty_pr_curve};
use raterlens_core::manifest::{load_manifest, transforms_path};
use raterlens_core::npy::{self, Dtype};
use raterlens_core::simulator::{self, CohortSpec, MANIFEST_FILE};
use raterlens_core::stats::Granularity;
use raterlens_core::uncertainty::{self, transforms_from_json, transforms_to_json, SampleSource, TransformLimits};
use raterlens_core::{
    aggregate, average_gt, dice, entropy_map, gt_entropy, majority_vote, random_schedule, BrierRegion, LabelMap,
    ScalarMap, Thresholds,
};

/// Bad flag values found after parsing; reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "raterlens", version, about = "Inter-rater variability and uncertainty analysis for segmentation")]
struct Cli {
    /// Worker threads for per-image work. Results do not depend on it.
    #[arg(long, global = true, env = "RATERLENS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Tta,
    Ttd,
    Ensemble,
}

impl From<Source> for SampleSource {
    fn from(s: Source) -> Self {
        match s {
            Source::Tta => SampleSource::Tta,
            Source::Ttd => SampleSource::Ttd,
            Source::Ensemble => SampleSource::Ensemble,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RegionArg {
    All,
    Foreground,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum GranularityArg {
    PerImage,
    PerVoxel,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Majority,
    Stored,
}

#[derive(Clone, Copy, ValueEnum)]
enum FuseMethod {
    Majority,
    Average,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with raters and sample stacks.
    Simulate {
        #[arg(long, default_value_t = 24)]
        subjects: usize,
        /// Number of raters; replaces the rater list of --spec.
        #[arg(long)]
        raters: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Cohort spec JSON; omitted fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Samples per stack.
        #[arg(long)]
        samples: Option<usize>,
        /// Decouple rater variance from the epistemic field.
        #[arg(long)]
        no_linkage: bool,
    },
    /// Run every analysis over a manifest and write reports and plots.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Divide entropies by ln(C).
        #[arg(long)]
        normalized_entropy: bool,
        #[arg(long, value_enum, default_value = "all")]
        brier_region: RegionArg,
        /// Threshold count K, or "exact" for every distinct value.
        #[arg(long, default_value = "100")]
        thresholds: String,
        #[arg(long, value_enum, default_value = "per-image")]
        granularity: GranularityArg,
        /// Voxels entering correlations and the variance partition.
        #[arg(long, value_enum, default_value = "all")]
        region: RegionArg,
        #[arg(long, value_enum, default_value = "majority")]
        fusion: FusionArg,
        #[arg(long, value_enum, default_value = "ttd")]
        epistemic: Source,
        /// Sources every image must provide.
        #[arg(long, value_enum, value_delimiter = ',')]
        require: Vec<Source>,
    },
    /// Fuse rater masks into one label map or soft GT.
    Fuse {
        #[arg(long, value_enum)]
        method: FuseMethod,
        #[arg(long, num_args = 1.., required = true)]
        raters: Vec<PathBuf>,
        #[arg(long)]
        num_classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel-wise entropy of rater masks or of a probability map.
    Entropy {
        #[arg(long, num_args = 1.., conflicts_with = "prob", required_unless_present = "prob")]
        raters: Vec<PathBuf>,
        #[arg(long)]
        prob: Option<PathBuf>,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        normalized: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class Dice of a prediction against a label map.
    Dice {
        /// Label map, or probability map reduced by argmax.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        num_classes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precision-recall of uncertainty as a misclassification detector.
    Aucpr {
        #[arg(long, num_args = 1.., required = true)]
        uncertainty: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        #[arg(long)]
        num_classes: usize,
        #[arg(long, default_value = "100")]
        thresholds: String,
        /// Curve CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random rater-per-image-per-epoch training schedule.
    Schedule {
        #[arg(long)]
        images: usize,
        #[arg(long)]
        raters: usize,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw test-time augmentation parameters as JSON.
    Transforms {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TransformLimits::default().max_rotation_deg)]
        max_rotation: f64,
        #[arg(long, default_value_t = TransformLimits::default().max_translation)]
        max_translation: f64,
        #[arg(long, default_value_t = TransformLimits::default().max_intensity_shift)]
        max_intensity_shift: f64,
        #[arg(long, default_value_t = TransformLimits::default().max_noise_sigma)]
        max_noise_sigma: f64,
    },
    /// Mean prediction and entropy of a sample stack.
    Aggregate {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long, value_enum)]
        source: Source,
        /// Augmentations of a raw TTA stack; defaults to the
        /// `<stem>.transforms.json` sibling when present.
        #[arg(long)]
        transforms: Option<PathBuf>,
        #[arg(long)]
        normalized: bool,
        #[arg(long)]
        out_mean: PathBuf,
        #[arg(long)]
        out_uncertainty: PathBuf,
    },
}

fn parse_thresholds(s: &str) -> Result<Thresholds> {
    if s == "exact" {
        return Ok(Thresholds::Exact);
    }
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(Thresholds::Even(k)),
        _ => Err(usage(format!("--thresholds must be a positive integer or 'exact', got '{s}'"))),
    }
}

fn check_classes(c: usize) -> Result<()> {
    if !(2..=256).contains(&c) {
        return Err(usage(format!("--num-classes must be in [2, 256], got {c}")));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Label map from a label file, or the argmax of a probability file.
fn read_labels_or_argmax(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let (dtype, shape) = npy::read_shape(path)?;
    if dtype == Dtype::F32 && shape.len() == 3 {
        let p = npy::read_prob(path)?;
        if p.num_classes() != num_classes {
            bail!("{} has {} classes, expected {num_classes}", path.display(), p.num_classes());
        }
        return Ok(p.argmax_labels());
    }
    Ok(npy::read_label(path, num_classes)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            subjects,
            raters,
            seed,
            out,
            spec,
            samples,
            no_linkage,
        } => {
            if subjects == 0 {
                return Err(usage("--subjects must be >= 1"));
            }
            let mut cohort = match &spec {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<CohortSpec>(&text)
                        .map_err(|e| usage(format!("invalid spec {}: {e}", p.display())))?
                }
                None => CohortSpec::default(),
            };
            if let Some(r) = raters {
                if r == 0 {
                    return Err(usage("--raters must be >= 1"));
                }
                cohort.raters = simulator::default_raters(r);
            }
            if let Some(n) = samples {
                if n == 0 {
                    return Err(usage("--samples must be >= 1"));
                }
                cohort.num_samples = n;
            }
            if no_linkage {
                cohort.linkage = false;
            }
            cohort.check().map_err(|e| usage(e.to_string()))?;
            simulator::build_cohort(&cohort, subjects, seed, &out)?;
            println!("{}", out.join(MANIFEST_FILE).display());
        }
        Command::Analyze {
            manifest,
            out,
            normalized_entropy,
            brier_region,
            thresholds,
            granularity,
            region,
            fusion,
            epistemic,
            require,
        } => {
            let config = AnalysisConfig {
                normalized_entropy,
                brier_region: match brier_region {
                    RegionArg::All => BrierRegion::All,
                    RegionArg::Foreground => BrierRegion::Foreground,
                },
                thresholds: parse_thresholds(&thresholds)?,
                granularity: match granularity {
                    GranularityArg::PerImage => Granularity::PerImage,
                    GranularityArg::PerVoxel => Granularity::PerVoxel,
                },
                correlation_region: match region {
                    RegionArg::All => CorrelationRegion::All,
                    RegionArg::Foreground => CorrelationRegion::Foreground,
                },
                fusion: match fusion {
                    FusionArg::Majority => FusionMethod::Majority,
                    FusionArg::Stored => FusionMethod::Stored,
                },
                epistemic_source: epistemic.into(),
                require: require.into_iter().map(SampleSource::from).collect(),
            };
            config.check().map_err(|e| usage(e.to_string()))?;
            let m = load_manifest(&manifest)?;
            let report = analysis::analyze(&m, &config)?;
            write_report(&report, &out)?;
            println!("{}", out.join("report.json").display());
        }
        Command::Fuse {
            method,
            raters,
            num_classes,
            out,
        } => {
            check_classes(num_classes)?;
            let maps = raters
                .iter()
                .map(|p| npy::read_label(p, num_classes))
                .collect::<raterlens_core::Result<Vec<_>>>()?;
            match method {
                FuseMethod::Majority => npy::write_label(&majority_vote(&maps)?, &out)?,
                FuseMethod::Average => npy::write_prob(&average_gt(&maps)?, &out)?,
            }
        }
        Command::Entropy {
            raters,
            prob,
            num_classes,
            normalized,
            out,
        } => {
            let map = match prob {
                Some(p) => entropy_map(&npy::read_prob(&p)?, normalized),
                None => {
                    let c = num_classes.ok_or_else(|| usage("--raters needs --num-classes"))?;
                    check_classes(c)?;
                    let maps = raters
                        .iter()
                        .map(|p| npy::read_label(p, c))
                        .collect::<raterlens_core::Result<Vec<_>>>()?;
                    gt_entropy(&maps, normalized)?
                }
            };
            npy::write_scalar(&map, &out)?;
        }
        Command::Dice {
            pred,
            gt,
            num_classes,
            out,
        } => {
            check_classes(num_classes)?;
            let p = read_labels_or_argmax(&pred, num_classes)?;
            let g = npy::read_label(&gt, num_classes)?;
            let mut csv = String::from("class,dice\n");
            for c in 0..num_classes {
                csv.push_str(&format!("{c},{}\n", dice(&p, &g, c as u8)?));
            }
            match out {
                Some(path) => write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Aucpr {
            uncertainty,
            pred,
            gt,
            num_classes,
            thresholds,
            out,
        } => {
            check_classes(num_classes)?;
            let thresholds = parse_thresholds(&thresholds)?;
            if uncertainty.len() != pred.len() || pred.len() != gt.len() {
                return Err(usage(format!(
                    "--uncertainty, --pred and --gt need equal counts, got {}, {} and {}",
                    uncertainty.len(),
                    pred.len(),
                    gt.len()
                )));
            }
            let mut unc = Vec::new();
            let mut mis = Vec::new();
            for ((u, p), g) in uncertainty.iter().zip(&pred).zip(&gt) {
                unc.push(npy::read_scalar(u)?);
                let p = read_labels_or_argmax(p, num_classes)?;
                mis.push(misclassification_map(&p, &npy::read_label(g, num_classes)?)?);
            }
            let curve = uncertainty_pr_curve(&unc, &mis, thresholds)?;
            println!("auc_pr,{}", curve.auc);
            println!("misclassification_rate,{}", curve.misclassification_rate());
            if let Some(path) = out {
                write_text(&path, &curve.to_csv())?;
            }
        }
        Command::Schedule {
            images,
            raters,
            epochs,
            seed,
            out,
        } => {
            if images == 0 || raters == 0 || epochs == 0 {
                return Err(usage("--images, --raters and --epochs must all be >= 1"));
            }
            let s = random_schedule(images, raters, epochs, seed)?;
            write_text(&out, &s.to_csv())?;
        }
        Command::Transforms {
            n,
            seed,
            out,
            max_rotation,
            max_translation,
            max_intensity_shift,
            max_noise_sigma,
        } => {
            if n == 0 {
                return Err(usage("--n must be >= 1"));
            }
            let limits = TransformLimits {
                max_rotation_deg: max_rotation,
                max_translation,
                max_intensity_shift,
                max_noise_sigma,
            };
            for (name, v) in [
                ("--max-rotation", max_rotation),
                ("--max-translation", max_translation),
                ("--max-intensity-shift", max_intensity_shift),
                ("--max-noise-sigma", max_noise_sigma),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(usage(format!("{name} must be finite and >= 0, got {v}")));
                }
            }
            let ts = uncertainty::sample_transforms(n, &limits, seed)?;
            write_text(&out, &(transforms_to_json(&ts) + "\n"))?;
        }
        Command::Aggregate {
            stack,
            source,
            transforms,
            normalized,
            out_mean,
            out_uncertainty,
        } => {
            let raw = npy::read_stack(&stack)?;
            let tpath = transforms.unwrap_or_else(|| transforms_path(&stack));
            let samples = if tpath.exists() {
                let text = fs::read_to_string(&tpath).with_context(|| format!("reading {}", tpath.display()))?;
                let ts = transforms_from_json(&text).with_context(|| format!("parsing {}", tpath.display()))?;
                uncertainty::invert_stack(&raw, &ts)?
            } else {
                raw
            };
            let result = aggregate(&samples, source.into())?;
            let unc: ScalarMap = if normalized {
                entropy_map(&result.mean_prediction, true)
            } else {
                result.uncertainty
            };
            npy::write_prob(&result.mean_prediction, &out_mean)?;
            npy::write_scalar(&unc, &out_uncertainty)?;
        }
    }
    Ok(())
}

fn write_report(report: &AnalysisReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("report.json"), &report.to_json())?;
    write_text(&out.join("brier.csv"), &report.brier_csv())?;
    write_text(&out.join("aucpr.csv"), &report.aucpr_csv())?;
    write_text(&out.join("correlation.csv"), &report.correlation_csv())?;
    write_text(&out.join("dice.csv"), &report.dice_csv())?;
    write_text(&out.join("paired_tests.csv"), &report.paired_tests_csv())?;
    write_text(&out.join("variance_partition.csv"), &report.variance_partition_csv())?;
    write_text(&out.join("per_image.csv"), &report.per_image_csv())?;

    let epistemic = report.config.epistemic_source.to_string();
    let plots = [
        (analysis::PREDICTION, "prediction_entropy_vs_gt_entropy.svg", "Prediction entropy"),
        (epistemic.as_str(), "epistemic_vs_gt_entropy.svg", "Epistemic uncertainty"),
    ];
    for (measure, file, label) in plots {
        let Some(series) = report.scatter(measure) else {
            eprintln!("note: no '{measure}' measure in the manifest, skipping {file}");
            continue;
        };
        let x_label = format!("{label} ({measure}, mean per image)");
        let svg = svg::render(&svg::Scatter {
            title: &format!("{label} vs GT entropy"),
            x_label: &x_label,
            y_label: "GT entropy (mean per image)",
            x: &series.x,
            y: &series.y,
            r: series.r,
            p_value: series.p_value,
        });
        write_text(&out.join(file), &svg)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be >= 1");
        return ExitCode::from(2);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
