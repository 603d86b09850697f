//! Cohort manifest: a JSON index tying each image's rater masks, fused GT,
//! prediction and sample stacks together. Paths are relative to the
//! manifest's directory.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array::{LabelMap, ProbMap, SampleStack};
use crate::error::{Error, Result};
use crate::npy::{self, Dtype};
use crate::uncertainty::{invert_stack, transforms_from_json, SampleSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub rater_mask_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_gt_path: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sample_stack_paths: BTreeMap<SampleSource, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub images: Vec<ImageRecord>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl CohortManifest {
    pub fn new(num_classes: usize, class_names: Vec<String>, images: Vec<ImageRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            num_classes,
            class_names,
            images,
            base_dir: base_dir.into(),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn num_raters(&self) -> usize {
        self.images.first().map_or(0, |r| r.rater_mask_paths.len())
    }

    /// Whether every image carries a stack from `source`.
    pub fn has_source(&self, source: SampleSource) -> bool {
        !self.images.is_empty()
            && self
                .images
                .iter()
                .all(|r| r.sample_stack_paths.contains_key(&source))
    }

    pub fn has_predictions(&self) -> bool {
        !self.images.is_empty() && self.images.iter().all(|r| r.prediction_path.is_some())
    }

    pub fn load_raters(&self, image: usize) -> Result<Vec<LabelMap>> {
        self.images[image]
            .rater_mask_paths
            .iter()
            .map(|p| npy::read_label(&self.resolve(p), self.num_classes))
            .collect()
    }

    pub fn load_fused_gt(&self, image: usize) -> Result<Option<LabelMap>> {
        self.images[image]
            .fused_gt_path
            .as_deref()
            .map(|p| npy::read_label(&self.resolve(p), self.num_classes))
            .transpose()
    }

    pub fn load_prediction(&self, image: usize) -> Result<Option<ProbMap>> {
        self.images[image]
            .prediction_path
            .as_deref()
            .map(|p| npy::read_prob(&self.resolve(p)))
            .transpose()
    }

    /// Loads one image's stack. A stack with a `<stem>.transforms.json`
    /// sibling holds raw augmented-grid predictions and is inverse-mapped
    /// onto the original grid here.
    pub fn load_stack(&self, image: usize, source: SampleSource) -> Result<Option<SampleStack>> {
        let Some(rel) = self.images[image].sample_stack_paths.get(&source) else {
            return Ok(None);
        };
        let path = self.resolve(rel);
        let stack = npy::read_stack(&path)?;
        let tpath = transforms_path(&path);
        if tpath.exists() {
            let text = fs::read_to_string(&tpath).map_err(|e| Error::io(&tpath, e))?;
            let ts = transforms_from_json(&text).map_err(|source| Error::Json {
                path: tpath.clone(),
                source,
            })?;
            return invert_stack(&stack, &ts).map(Some);
        }
        Ok(Some(stack))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Sibling file carrying the augmentations of a raw TTA stack.
pub fn transforms_path(stack_path: &Path) -> PathBuf {
    let name = stack_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".npy").unwrap_or(&name);
    stack_path.with_file_name(format!("{stem}.transforms.json"))
}

/// Parses and validates a manifest: rater counts, file existence, dtypes
/// and cross-file shapes. Array payloads are not read, only headers.
pub fn load_manifest(path: &Path) -> Result<CohortManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: CohortManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    validate(&m)?;
    Ok(m)
}

fn header(m: &CohortManifest, rel: &str) -> Result<(Dtype, Vec<usize>)> {
    let p = m.resolve(rel);
    if !p.is_file() {
        return Err(Error::MissingFile(p));
    }
    npy::read_shape(&p)
}

pub fn validate(m: &CohortManifest) -> Result<()> {
    if !(2..=256).contains(&m.num_classes) {
        return Err(Error::Manifest(format!(
            "num_classes must be in [2, 256], got {}",
            m.num_classes
        )));
    }
    if m.class_names.len() != m.num_classes {
        return Err(Error::Manifest(format!(
            "{} class names for {} classes",
            m.class_names.len(),
            m.num_classes
        )));
    }
    let first = m.images.first().ok_or_else(|| Error::Manifest("no images".into()))?;
    let raters = first.rater_mask_paths.len();
    if raters == 0 {
        return Err(Error::Manifest(format!("image '{}' lists no raters", first.id)));
    }
    let mut ids = BTreeSet::new();
    for rec in &m.images {
        if !ids.insert(rec.id.as_str()) {
            return Err(Error::Manifest(format!("duplicate image id '{}'", rec.id)));
        }
        if rec.rater_mask_paths.len() != raters {
            return Err(Error::RaterCountMismatch {
                image: rec.id.clone(),
                expected: raters,
                found: rec.rater_mask_paths.len(),
            });
        }
        let shape_err = |what: &str, found: &[usize], want: &[usize]| {
            Error::ShapeMismatch(format!(
                "image '{}': {what} has shape {found:?}, expected {want:?}",
                rec.id
            ))
        };
        let mut hw: Option<Vec<usize>> = None;
        let label_paths = rec.rater_mask_paths.iter().chain(rec.fused_gt_path.as_ref());
        for p in label_paths {
            let (dtype, shape) = header(m, p)?;
            if dtype != Dtype::U8 || shape.len() != 2 {
                return Err(Error::Manifest(format!(
                    "image '{}': label file {p} must be a 2D '|u1' array",
                    rec.id
                )));
            }
            match &hw {
                None => hw = Some(shape),
                Some(want) if *want != shape => return Err(shape_err(p, &shape, want)),
                _ => {}
            }
        }
        let hw = hw.expect("at least one rater");
        if let Some(p) = &rec.prediction_path {
            let (dtype, shape) = header(m, p)?;
            let want = [m.num_classes, hw[0], hw[1]];
            if dtype != Dtype::F32 || shape != want {
                return Err(shape_err(p, &shape, &want));
            }
        }
        for (source, p) in &rec.sample_stack_paths {
            let (dtype, shape) = header(m, p)?;
            if dtype != Dtype::F32 || shape.len() != 4 || shape[1..] != [m.num_classes, hw[0], hw[1]] {
                return Err(shape_err(
                    &format!("{source} stack {p}"),
                    &shape,
                    &[shape.first().copied().unwrap_or(0), m.num_classes, hw[0], hw[1]],
                ));
            }
            if shape[0] == 0 {
                return Err(Error::Manifest(format!("image '{}': empty {source} stack", rec.id)));
            }
        }
    }
    Ok(())
}
