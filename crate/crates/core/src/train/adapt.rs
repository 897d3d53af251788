use super::{train, TrainConfig, TrainSet, TrainState, Trainable};
use crate::centerbias::{fit_centerbias, CenterBiasFitConfig, CenterBiasVariant};
use crate::dataset::FixationDataset;
use crate::error::{config_err, data_err, Result};
use crate::metrics::{evaluate, EvalConfig, Evaluation, SaliencyPredictor};
use crate::model::{average_bias_params, BiasGroup, BiasedModel, DatasetBiasParams, FeatureBank};
use crate::rng::SeededRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    /// Optimizer settings; the readout is always frozen.
    pub train: TrainConfig,
    /// Size of the seeded random image subset; all images when unset.
    pub n_images: Option<usize>,
    pub subset_seed: u64,
    pub centerbias: CenterBiasFitConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            train: TrainConfig {
                learning_rate: 0.05,
                decay_epochs: vec![3.0, 6.0, 7.0, 8.0],
                trainable: Trainable::BiasesOnly,
                steps_per_epoch: Some(100),
                ..Default::default()
            },
            n_images: None,
            subset_seed: 0,
            centerbias: CenterBiasFitConfig::with_variant(CenterBiasVariant::KdeGaussianUniform),
        }
    }
}

pub struct AdaptOutcome {
    pub bias: DatasetBiasParams,
    /// Stimulus indices used for fitting.
    pub subset: Vec<usize>,
}

/// Fits bias parameters for an unseen dataset with the readout frozen.
///
/// Scalars start from the average of the state's bias sets. The center bias
/// is refit on the subset when the center bias group is trainable and taken
/// from the averaged parameters otherwise.
pub fn adapt_biases(
    state: &TrainState,
    ds: &FixationDataset,
    bank: &FeatureBank,
    pool: &[usize],
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    let per = ds.fixations_per_stimulus();
    let mut candidates: Vec<usize> = pool.iter().copied().filter(|&i| !per[i].is_empty()).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let subset: Vec<usize> = match cfg.n_images {
        Some(0) => return Err(data_err!("adaptation subset is empty")),
        Some(n) if n < candidates.len() => {
            let mut pick: Vec<usize> = SeededRng::new(cfg.subset_seed)
                .sample_indices(candidates.len(), n)
                .into_iter()
                .map(|k| candidates[k])
                .collect();
            pick.sort_unstable();
            pick
        }
        _ => candidates,
    };
    if subset.is_empty() {
        return Err(data_err!("adaptation subset of {} is empty", ds.name));
    }
    let sets: Vec<&DatasetBiasParams> = state.biases.values().collect();
    let mut bias = average_bias_params(&sets)?;
    let trainable = cfg.train.trainable.without_readout();
    if trainable.group(BiasGroup::Centerbias) {
        let sub = ds.subset(&subset);
        bias.centerbias = fit_centerbias(&sub, &cfg.centerbias)?.model;
    }
    const KEY: &str = "adapted";
    let tmp = TrainState::new(
        state.scales.clone(),
        state.provider.clone(),
        state.readout.clone(),
        BTreeMap::from([(KEY.to_string(), bias)]),
    );
    let set = TrainSet {
        dataset: ds,
        bank,
        train: subset.clone(),
        validation: Vec::new(),
        bias_key: KEY.into(),
    };
    let tc = TrainConfig {
        trainable,
        ..cfg.train.clone()
    };
    let out = train(std::slice::from_ref(&set), tmp, &tc)?;
    let bias = out.state.biases.into_values().next().expect("one bias set");
    Ok(AdaptOutcome { bias, subset })
}

/// Which bias parameters to pair with the shared readout at evaluation time.
#[derive(Debug, Clone)]
pub enum BiasSource {
    Own,
    Averaged,
    Adapted(Box<DatasetBiasParams>),
    Foreign(String),
}

pub fn resolve_bias(state: &TrainState, dataset: &str, source: &BiasSource) -> Result<DatasetBiasParams> {
    match source {
        BiasSource::Own => state
            .biases
            .get(dataset)
            .cloned()
            .ok_or_else(|| config_err!("state has no bias parameters for {dataset}")),
        BiasSource::Foreign(name) => state
            .biases
            .get(name)
            .cloned()
            .ok_or_else(|| config_err!("unknown bias source {name}")),
        BiasSource::Averaged => {
            let sets: Vec<&DatasetBiasParams> = state.biases.values().collect();
            average_bias_params(&sets)
        }
        BiasSource::Adapted(b) => Ok((**b).clone()),
    }
}

pub fn evaluate_state(
    state: &TrainState,
    ds: &FixationDataset,
    bank: &FeatureBank,
    indices: &[usize],
    source: &BiasSource,
    baseline: Option<&dyn SaliencyPredictor>,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let bias = resolve_bias(state, &ds.name, source)?;
    let model = BiasedModel::new(&state.readout, &bias, bank);
    evaluate(&model, baseline, ds, indices, cfg)
}
