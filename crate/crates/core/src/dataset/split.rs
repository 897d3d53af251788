use super::FixationDataset;
use crate::error::{config_err, data_err, Result};
use crate::rng::SeededRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldRole {
    Train,
    Validation,
}

/// Crossvalidation fold per stimulus (aligned with `FixationDataset::stimuli`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub fold_count: usize,
    pub folds: Vec<usize>,
    pub roles: Vec<FoldRole>,
}

impl SplitAssignment {
    pub fn indices_with(&self, role: FoldRole) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(_, &f)| self.roles[f] == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_with(FoldRole::Train)
    }

    pub fn validation_indices(&self) -> Vec<usize> {
        self.indices_with(FoldRole::Validation)
    }

    /// Everything in the training role (all stimuli if `all` is set).
    pub fn everything(&self) -> Vec<usize> {
        (0..self.folds.len()).collect()
    }
}

/// Seeded fold assignment. Stimuli are shuffled (within each stratum when a
/// stratification attribute is given) and dealt round-robin across folds, so
/// per-fold counts of every category differ by at most one. The first
/// `val_folds` folds take the validation role.
pub fn make_crossval_split(
    ds: &FixationDataset,
    folds: usize,
    val_folds: usize,
    stratify_attribute: Option<&str>,
    seed: u64,
) -> Result<SplitAssignment> {
    if folds < 2 {
        return Err(config_err!("need at least 2 folds, got {folds}"));
    }
    if val_folds < 1 || val_folds >= folds {
        return Err(config_err!("val_folds must be in 1..{folds}, got {val_folds}"));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.stimuli.iter().enumerate() {
        let key = match stratify_attribute {
            Some(attr) => s
                .attributes
                .get(attr)
                .cloned()
                .ok_or_else(|| data_err!("stimulus {} lacks attribute {attr}", s.stimulus_id))?,
            None => String::new(),
        };
        strata.entry(key).or_default().push(i);
    }
    let mut rng = SeededRng::new(seed);
    let mut assignment = vec![0usize; ds.stimuli.len()];
    let mut cursor = 0usize;
    for members in strata.values_mut() {
        rng.shuffle(members);
        for &i in members.iter() {
            assignment[i] = cursor % folds;
            cursor += 1;
        }
    }
    let roles = (0..folds)
        .map(|f| if f < val_folds { FoldRole::Validation } else { FoldRole::Train })
        .collect();
    Ok(SplitAssignment {
        fold_count: folds,
        folds: assignment,
        roles,
    })
}
