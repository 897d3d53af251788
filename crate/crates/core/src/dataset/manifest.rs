//! JSON dataset manifests with a sidecar fixation CSV.
//!
//! ```json
//! {
//!   "name": "mit1003",
//!   "stimuli": [{"id": "i1", "width": 1024, "height": 768, "px_per_dva": 35.0,
//!                "image": "images/i1.ppm", "attributes": {"category": "Action"}}],
//!   "fixations_file": "fixations.csv",
//!   "filters": [{"name": "drop_initial_fixations"},
//!               {"name": "cat2000_artifacts", "subject": "20", "y_threshold": 950.0}]
//! }
//! ```
//!
//! The CSV header is `stimulus_id,subject_id,ordinal,x,y`. Relative paths are
//! resolved against the manifest's directory.

use super::{drop_initial_fixations, filter_cat2000_artifacts, Fixation, FixationDataset, StimulusMeta};
use crate::error::{config_err, data_err, Result, SalError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub px_per_dva: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FilterSpec {
    DropInitialFixations,
    Cat2000Artifacts {
        #[serde(default = "default_subject")]
        subject: String,
        #[serde(default = "default_y_threshold")]
        y_threshold: f64,
    },
}

fn default_subject() -> String {
    "20".to_string()
}

fn default_y_threshold() -> f64 {
    950.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub stimuli: Vec<StimulusEntry>,
    pub fixations_file: PathBuf,
    #[serde(default)]
    pub filters: Vec<FilterSpec>,
    /// Present on manifests written by this toolkit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnOutOfBounds {
    #[default]
    Drop,
    Error,
}

impl std::str::FromStr for OnOutOfBounds {
    type Err = SalError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(OnOutOfBounds::Drop),
            "error" => Ok(OnOutOfBounds::Error),
            other => Err(config_err!("--on-oob must be drop or error, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub on_oob: OnOutOfBounds,
}

#[derive(Debug, Serialize, Deserialize)]
struct FixationRow {
    stimulus_id: String,
    subject_id: String,
    ordinal: u32,
    x: f64,
    y: f64,
}

pub fn load_dataset(manifest: &Path) -> Result<FixationDataset> {
    load_dataset_with(manifest, &LoadOptions::default())
}

pub fn load_dataset_with(manifest_path: &Path, opts: &LoadOptions) -> Result<FixationDataset> {
    let manifest: Manifest = crate::io::read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let stimuli: Vec<StimulusMeta> = manifest
        .stimuli
        .iter()
        .map(|e| StimulusMeta {
            stimulus_id: e.id.clone(),
            width_px: e.width,
            height_px: e.height,
            px_per_dva: e.px_per_dva,
            image_path: e.image.as_ref().map(|p| base.join(p)),
            attributes: e.attributes.clone(),
        })
        .collect();
    for s in &stimuli {
        s.validate()?;
    }
    let by_id: HashMap<&str, &StimulusMeta> = stimuli.iter().map(|s| (s.stimulus_id.as_str(), s)).collect();

    let csv_path = base.join(&manifest.fixations_file);
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| SalError::csv(&csv_path, e))?;
    let mut fixations = Vec::new();
    let mut dropped = 0usize;
    for row in reader.deserialize::<FixationRow>() {
        let row = row.map_err(|e| SalError::csv(&csv_path, e))?;
        let Some(meta) = by_id.get(row.stimulus_id.as_str()) else {
            return Err(data_err!(
                "{}: fixation references undeclared stimulus {}",
                csv_path.display(),
                row.stimulus_id
            ));
        };
        if !meta.contains(row.x, row.y) {
            match opts.on_oob {
                OnOutOfBounds::Drop => {
                    dropped += 1;
                    continue;
                }
                OnOutOfBounds::Error => {
                    return Err(data_err!(
                        "fixation ({}, {}) outside {}x{} stimulus {}",
                        row.x,
                        row.y,
                        meta.width_px,
                        meta.height_px,
                        row.stimulus_id
                    ))
                }
            }
        }
        fixations.push(Fixation {
            stimulus_id: row.stimulus_id,
            subject_id: row.subject_id,
            x: row.x,
            y: row.y,
            ordinal: row.ordinal,
        });
    }

    let mut ds = FixationDataset {
        name: manifest.name.clone(),
        stimuli,
        fixations,
        provenance: manifest.provenance.clone().unwrap_or_default(),
    };
    if manifest.provenance.is_none() || dropped > 0 {
        ds.provenance.push(format!("ingest: {dropped} dropped"));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} out-of-bounds fixations", manifest_path.display());
    }
    ds.validate()?;
    for filter in &manifest.filters {
        ds = match filter {
            FilterSpec::DropInitialFixations => drop_initial_fixations(&ds),
            FilterSpec::Cat2000Artifacts { subject, y_threshold } => filter_cat2000_artifacts(&ds, subject, *y_threshold),
        };
    }
    Ok(ds)
}

/// Writes `manifest.json` and `fixations.csv` into `dir`; returns the manifest path.
pub fn save_dataset(ds: &FixationDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| SalError::io(dir, e))?;
    let csv_path = dir.join("fixations.csv");
    let mut writer = csv::Writer::from_writer(Vec::new());
    for f in &ds.fixations {
        writer
            .serialize(FixationRow {
                stimulus_id: f.stimulus_id.clone(),
                subject_id: f.subject_id.clone(),
                ordinal: f.ordinal,
                x: f.x,
                y: f.y,
            })
            .map_err(|e| SalError::csv(&csv_path, e))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| data_err!("csv flush failed: {e}"))?;
    crate::io::write_atomic(&csv_path, &bytes)?;

    let manifest = Manifest {
        name: ds.name.clone(),
        stimuli: ds
            .stimuli
            .iter()
            .map(|s| StimulusEntry {
                id: s.stimulus_id.clone(),
                width: s.width_px,
                height: s.height_px,
                px_per_dva: s.px_per_dva,
                image: s
                    .image_path
                    .as_ref()
                    .map(|p| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.clone())),
                attributes: s.attributes.clone(),
            })
            .collect(),
        fixations_file: PathBuf::from("fixations.csv"),
        filters: Vec::new(),
        provenance: Some(ds.provenance.clone()),
    };
    let path = dir.join("manifest.json");
    crate::io::write_json(&path, &manifest)?;
    Ok(path)
}
