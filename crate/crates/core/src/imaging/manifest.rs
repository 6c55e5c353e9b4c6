//! Dataset manifests (CSV or JSONL), one record per image.
//!
//! Columns: `path`, `scene_id`, then either `class` (scene-level label) or
//! `mask_path` (footprint mask for per-patch labels), plus optional `split`
//! and `timestamp`. Relative paths resolve against the manifest's directory.
//! Several records sharing a `scene_id` are timestamped versions of one scene;
//! exactly one of them is used per run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{label_patch, load_mask, load_scene, pick_index, tile, ImagePatch, ImagingError};
use crate::taxonomy::ClassLabel;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub scene_id: String,
    #[serde(default)]
    pub class: Option<String>,
    #[serde(default)]
    pub mask_path: Option<String>,
    #[serde(default)]
    pub split: Option<String>,
    #[serde(default)]
    pub timestamp: Option<String>,
}

/// Where a record's ground truth comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Truth {
    Class(ClassLabel),
    Mask(PathBuf),
    Unlabeled,
}

fn non_empty(field: &Option<String>) -> Option<&str> {
    field.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

#[derive(Clone, Debug)]
pub struct Manifest {
    path: PathBuf,
    base_dir: PathBuf,
    rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ImagingError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ImagingError::Io {
            path: display.clone(),
            source,
        })?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let rows = match ext.as_str() {
            "csv" => parse_csv(&text, &display)?,
            "jsonl" | "ndjson" | "json" => parse_jsonl(&text, &display)?,
            _ => {
                return Err(ImagingError::Manifest {
                    path: display,
                    record: 0,
                    message: "expected a .csv or .jsonl manifest".into(),
                })
            }
        };
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_rows(rows, path.to_path_buf(), base_dir)
    }

    pub fn from_rows(rows: Vec<ManifestRow>, path: PathBuf, base_dir: PathBuf) -> Result<Self, ImagingError> {
        for (i, row) in rows.iter().enumerate() {
            let fail = |message: &str| ImagingError::Manifest {
                path: path.display().to_string(),
                record: i + 1,
                message: message.to_owned(),
            };
            if row.path.trim().is_empty() {
                return Err(fail("empty path"));
            }
            if row.scene_id.trim().is_empty() {
                return Err(fail("empty scene_id"));
            }
            if non_empty(&row.class).is_some() && non_empty(&row.mask_path).is_some() {
                return Err(fail("set either class or mask_path, not both"));
            }
        }
        Ok(Self { path, base_dir, rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn truth(&self, row: &ManifestRow) -> Result<Truth, ImagingError> {
        if let Some(class) = non_empty(&row.class) {
            return ClassLabel::new(class).map(Truth::Class).map_err(|e| ImagingError::Manifest {
                path: self.path.display().to_string(),
                record: 0,
                message: e.to_string(),
            });
        }
        Ok(match non_empty(&row.mask_path) {
            Some(mask) => Truth::Mask(self.resolve(mask)),
            None => Truth::Unlabeled,
        })
    }

    /// One record per scene (first-appearance order), restricted to `split`.
    /// Among versions of a scene, sorted by `(timestamp, path)`, the pick is
    /// seeded by `(seed, scene_id)`.
    pub fn select(&self, split: Option<&str>, seed: u64) -> Vec<&ManifestRow> {
        let mut order: Vec<&str> = Vec::new();
        let mut versions: BTreeMap<&str, Vec<&ManifestRow>> = BTreeMap::new();
        for row in &self.rows {
            if let Some(want) = split {
                if non_empty(&row.split) != Some(want) {
                    continue;
                }
            }
            let entry = versions.entry(row.scene_id.as_str()).or_default();
            if entry.is_empty() {
                order.push(row.scene_id.as_str());
            }
            entry.push(row);
        }
        order
            .into_iter()
            .map(|id| {
                let mut vs = versions.remove(id).expect("scene recorded");
                vs.sort_by(|a, b| (&a.timestamp, &a.path).cmp(&(&b.timestamp, &b.path)));
                vs[pick_index(vs.len(), id, seed)]
            })
            .collect()
    }

    /// Loads and tiles one record, attaching ground truth to every patch.
    pub fn load_patches(&self, row: &ManifestRow, grid: (u32, u32)) -> Result<Vec<ImagePatch>, ImagingError> {
        let mut scene = load_scene(&self.resolve(&row.path), row.scene_id.clone())?;
        scene.timestamp = non_empty(&row.timestamp).map(str::to_owned);
        let mut patches = tile(&scene, grid)?;
        match self.truth(row)? {
            Truth::Class(label) => {
                for p in &mut patches {
                    p.ground_truth = Some(label.clone());
                }
            }
            Truth::Mask(path) => {
                let mask = load_mask(&path)?;
                for p in &mut patches {
                    p.ground_truth = Some(label_patch(p, &mask)?);
                }
            }
            Truth::Unlabeled => {}
        }
        Ok(patches)
    }
}

fn parse_csv(text: &str, path: &str) -> Result<Vec<ManifestRow>, ImagingError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| ImagingError::Manifest {
                path: path.to_owned(),
                record: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn parse_jsonl(text: &str, path: &str) -> Result<Vec<ManifestRow>, ImagingError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| ImagingError::Manifest {
                path: path.to_owned(),
                record: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
