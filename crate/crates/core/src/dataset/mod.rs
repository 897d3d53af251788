//! Fixation datasets: stimuli metadata plus per-fixation records.
//!
//! Coordinates are kept as continuous pixel positions (origin top-left);
//! mapping onto grid cells happens where densities are looked up.

mod filters;
mod manifest;
mod split;
pub mod synth;

pub use filters::{drop_initial_fixations, filter_cat2000_artifacts, DROP_INITIAL_TAG};
pub use manifest::{load_dataset, load_dataset_with, save_dataset, FilterSpec, LoadOptions, Manifest, OnOutOfBounds, StimulusEntry};
pub use split::{make_crossval_split, FoldRole, SplitAssignment};
pub use synth::{synth_dataset, PlantedCenterBias, SynthOutput, SynthSpec};

use crate::error::{data_err, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusMeta {
    pub stimulus_id: String,
    pub width_px: usize,
    pub height_px: usize,
    /// Pixels per degree of visual angle.
    pub px_per_dva: f64,
    pub image_path: Option<PathBuf>,
    pub attributes: BTreeMap<String, String>,
}

impl StimulusMeta {
    pub fn new(id: impl Into<String>, width_px: usize, height_px: usize, px_per_dva: f64) -> Self {
        StimulusMeta {
            stimulus_id: id.into(),
            width_px,
            height_px,
            px_per_dva,
            image_path: None,
            attributes: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px < 8 || self.height_px < 8 {
            return Err(data_err!(
                "stimulus {} is {}x{}, minimum is 8x8",
                self.stimulus_id,
                self.width_px,
                self.height_px
            ));
        }
        if !(self.px_per_dva > 0.0 && self.px_per_dva.is_finite()) {
            return Err(data_err!(
                "stimulus {} has non-positive px_per_dva {}",
                self.stimulus_id,
                self.px_per_dva
            ));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width_px as f64 && y < self.height_px as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub stimulus_id: String,
    pub subject_id: String,
    pub x: f64,
    pub y: f64,
    pub ordinal: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixationDataset {
    pub name: String,
    pub stimuli: Vec<StimulusMeta>,
    pub fixations: Vec<Fixation>,
    /// Applied filters and ingestion notes, in order.
    pub provenance: Vec<String>,
}

impl FixationDataset {
    /// Builds a dataset and checks every type invariant.
    pub fn new(name: impl Into<String>, stimuli: Vec<StimulusMeta>, fixations: Vec<Fixation>) -> Result<Self> {
        let ds = FixationDataset {
            name: name.into(),
            stimuli,
            fixations,
            provenance: Vec::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashMap::new();
        for (i, s) in self.stimuli.iter().enumerate() {
            s.validate()?;
            if ids.insert(s.stimulus_id.as_str(), i).is_some() {
                return Err(data_err!("duplicate stimulus id {}", s.stimulus_id));
            }
        }
        let mut paths: HashMap<(&str, &str), Vec<u32>> = HashMap::new();
        for f in &self.fixations {
            let Some(&si) = ids.get(f.stimulus_id.as_str()) else {
                return Err(data_err!("fixation references undeclared stimulus {}", f.stimulus_id));
            };
            if !self.stimuli[si].contains(f.x, f.y) {
                return Err(data_err!(
                    "fixation ({}, {}) outside stimulus {}",
                    f.x,
                    f.y,
                    f.stimulus_id
                ));
            }
            paths
                .entry((f.stimulus_id.as_str(), f.subject_id.as_str()))
                .or_default()
                .push(f.ordinal);
        }
        for ((stim, subj), ords) in &paths {
            // all-zero ordinals mark data without scanpath order
            let unordered = ords.iter().all(|&o| o == 0);
            if !unordered && ords.windows(2).any(|w| w[1] <= w[0]) {
                return Err(data_err!("ordinals not strictly increasing for scanpath ({stim}, {subj})"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    pub fn stimulus_index(&self) -> HashMap<&str, usize> {
        self.stimuli
            .iter()
            .enumerate()
            .map(|(i, s)| (s.stimulus_id.as_str(), i))
            .collect()
    }

    /// Fixation indices grouped per stimulus, aligned with `stimuli`.
    pub fn fixations_per_stimulus(&self) -> Vec<Vec<usize>> {
        let index = self.stimulus_index();
        let mut out = vec![Vec::new(); self.stimuli.len()];
        for (i, f) in self.fixations.iter().enumerate() {
            out[index[f.stimulus_id.as_str()]].push(i);
        }
        out
    }

    /// Fixation indices grouped by `(stimulus, subject)` in first-seen order.
    pub fn scanpaths(&self) -> Vec<((String, String), Vec<usize>)> {
        let mut order: Vec<(String, String)> = Vec::new();
        let mut groups: HashMap<(String, String), Vec<usize>> = HashMap::new();
        for (i, f) in self.fixations.iter().enumerate() {
            let key = (f.stimulus_id.clone(), f.subject_id.clone());
            groups
                .entry(key.clone())
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(i);
        }
        order
            .into_iter()
            .map(|k| {
                let v = groups.remove(&k).unwrap_or_default();
                (k, v)
            })
            .collect()
    }

    /// Restricts the dataset to the given stimuli (by index), keeping the
    /// original order of both stimuli and fixations.
    /// Content hash of stimuli geometry and fixations (image paths excluded).
    pub fn fingerprint(&self) -> String {
        let mut h = String::new();
        h.push_str(&self.name);
        for s in &self.stimuli {
            h.push_str(&format!("\n{}:{}x{}@{}:{:?}", s.stimulus_id, s.width_px, s.height_px, s.px_per_dva, s.attributes));
        }
        for f in &self.fixations {
            h.push_str(&format!("\n{},{},{},{},{}", f.stimulus_id, f.subject_id, f.x, f.y, f.ordinal));
        }
        crate::io::sha256_hex(h.as_bytes())
    }

    pub fn subset(&self, stimulus_indices: &[usize]) -> FixationDataset {
        let mut keep = vec![false; self.stimuli.len()];
        for &i in stimulus_indices {
            keep[i] = true;
        }
        let stimuli: Vec<StimulusMeta> = self
            .stimuli
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        let index = self.stimulus_index();
        let fixations = self
            .fixations
            .iter()
            .filter(|f| keep[index[f.stimulus_id.as_str()]])
            .cloned()
            .collect();
        let mut provenance = self.provenance.clone();
        provenance.push(format!("subset: {} of {} stimuli", stimuli.len(), self.stimuli.len()));
        FixationDataset {
            name: self.name.clone(),
            stimuli,
            fixations,
            provenance,
        }
    }

    pub fn has_provenance(&self, tag: &str) -> bool {
        self.provenance.iter().any(|p| p.starts_with(tag))
    }
}
