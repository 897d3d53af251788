//! Maximum-likelihood training of the shared readout and per-dataset bias
//! parameters with Adam and step decay, plus bias-only adaptation.

mod adam;
mod adapt;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use adapt::{adapt_biases, evaluate_state, resolve_bias, AdaptConfig, AdaptOutcome, BiasSource};

use crate::dataset::{FixationDataset, StimulusMeta};
use crate::error::{config_err, data_err, Result, SalError};
use crate::grid::{softmax_nll, softmax_nll_grad};
use crate::metrics::per_image_log_densities;
use crate::model::{
    backward, forward, output_geometry, BiasGroup, BiasedModel, CenterBiasCache, DatasetBiasParams, FeatureBank,
    ModelCheckpoint, ReadoutParams, ScaleSpec,
};
use crate::rng::SeededRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;
use std::path::Path;
use std::sync::Arc;

/// Which scalars receive gradient updates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    All,
    BiasesOnly,
    BiasSubset(BTreeSet<BiasGroup>),
}

impl Trainable {
    pub fn readout(&self) -> bool {
        matches!(self, Trainable::All)
    }

    pub fn group(&self, g: BiasGroup) -> bool {
        match self {
            Trainable::All | Trainable::BiasesOnly => true,
            Trainable::BiasSubset(s) => s.contains(&g),
        }
    }

    /// Same selection without the readout.
    pub fn without_readout(&self) -> Trainable {
        match self {
            Trainable::All => Trainable::BiasesOnly,
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate is divided by 10 at each; training ends at the last.
    pub decay_epochs: Vec<f64>,
    pub batch_images: usize,
    pub seed: u64,
    pub trainable: Trainable,
    /// Steps per epoch; defaults to one pass over the training images.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            decay_epochs: vec![3.0, 6.0, 7.0, 8.0],
            batch_images: 4,
            seed: 0,
            trainable: Trainable::All,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    /// Per-dataset schedules used for the real benchmark datasets.
    pub fn preset(name: &str) -> Result<TrainConfig> {
        let (lr, decays): (f64, &[f64]) = match name.to_ascii_lowercase().as_str() {
            "default" => (0.01, &[3.0, 6.0, 7.0, 8.0]),
            "mit1003" => (0.005623, &[3.0, 9.0, 10.0, 11.0]),
            "cat2000" => (0.01, &[6.0, 9.0, 10.0, 11.0]),
            "coco_freeview" | "coco" => (0.01, &[12.0, 15.0, 16.0, 17.0]),
            "daemons" => (0.005012, &[12.0, 15.0, 16.0, 17.0]),
            "figrim" => (0.01, &[9.0, 15.0, 16.0, 17.0]),
            "combined" => (0.001585, &[15.0, 21.0, 22.0, 23.0]),
            "salicon" => (0.01, &[3.75, 7.5, 11.25]),
            other => return Err(config_err!("unknown schedule preset {other}")),
        };
        Ok(TrainConfig {
            learning_rate: lr,
            decay_epochs: decays.to_vec(),
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(config_err!("learning rate must be positive"));
        }
        if self.decay_epochs.is_empty() || self.decay_epochs.iter().any(|&e| !(e > 0.0)) {
            return Err(config_err!("need at least one positive decay epoch"));
        }
        if self.decay_epochs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err!("decay epochs must be strictly increasing"));
        }
        if self.batch_images == 0 || self.steps_per_epoch == Some(0) {
            return Err(config_err!("batch size and steps per epoch must be positive"));
        }
        Ok(())
    }

    /// Learning rate at a (fractional) epoch position.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.learning_rate * 0.1f64.powi(decays as i32)
    }
}

/// One dataset's contribution to a training run.
#[derive(Clone)]
pub struct TrainSet<'a> {
    pub dataset: &'a FixationDataset,
    pub bank: &'a FeatureBank,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Key of the bias parameter set used for this dataset's images.
    pub bias_key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub scales: Vec<ScaleSpec>,
    pub provider: String,
    pub readout: ReadoutParams,
    pub biases: BTreeMap<String, DatasetBiasParams>,
    pub adam: AdamState,
    pub step: u64,
    pub epoch: u64,
    /// Fixation-weighted mean training NLL (nats/fix) per epoch.
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(
        scales: Vec<ScaleSpec>,
        provider: impl Into<String>,
        readout: ReadoutParams,
        biases: BTreeMap<String, DatasetBiasParams>,
    ) -> Self {
        TrainState {
            scales,
            provider: provider.into(),
            readout,
            biases,
            adam: AdamState::default(),
            step: 0,
            epoch: 0,
            loss_history: Vec::new(),
        }
    }

    pub fn from_checkpoint(ck: ModelCheckpoint) -> Self {
        TrainState::new(ck.scales, ck.provider, ck.readout, ck.biases)
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            scales: self.scales.clone(),
            provider: self.provider.clone(),
            readout: self.readout.clone(),
            biases: self.biases.clone(),
        }
    }

    /// `[readout.., bias sets in key order..]`
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.readout.to_flat();
        for b in self.biases.values() {
            v.extend(b.to_flat());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let r = self.readout.param_count();
        self.readout.set_flat(&flat[..r]);
        let mut off = r;
        for b in self.biases.values_mut() {
            let n = b.scalar_count();
            b.set_flat(&flat[off..off + n]);
            off += n;
        }
    }

    /// Offset of each bias set inside [`TrainState::flat`].
    pub fn bias_offsets(&self) -> BTreeMap<String, usize> {
        let mut off = self.readout.param_count();
        let mut out = BTreeMap::new();
        for (k, b) in &self.biases {
            out.insert(k.clone(), off);
            off += b.scalar_count();
        }
        out
    }

    /// Trainable flag for every entry of [`TrainState::flat`].
    pub fn trainable_mask(&self, trainable: &Trainable) -> Vec<bool> {
        let mut m = vec![trainable.readout(); self.readout.param_count()];
        for b in self.biases.values() {
            m.extend(b.flat_groups().into_iter().map(|g| trainable.group(g)));
        }
        m
    }
}

/// Loss evaluator holding center bias renders for every bias set.
pub struct Objective<'a> {
    sets: &'a [TrainSet<'a>],
    caches: BTreeMap<String, Arc<CenterBiasCache>>,
    cells: Vec<Vec<Vec<(usize, f64)>>>,
}

impl<'a> Objective<'a> {
    pub fn new(sets: &'a [TrainSet<'a>], state: &TrainState) -> Result<Self> {
        let mut caches = BTreeMap::new();
        for s in sets {
            let b = state
                .biases
                .get(&s.bias_key)
                .ok_or_else(|| config_err!("no bias parameters named {}", s.bias_key))?;
            caches
                .entry(s.bias_key.clone())
                .or_insert_with(|| Arc::new(CenterBiasCache::new(b.centerbias.clone())));
        }
        let cells = sets
            .iter()
            .map(|s| {
                let per = s.dataset.fixations_per_stimulus();
                s.dataset
                    .stimuli
                    .iter()
                    .zip(&per)
                    .map(|(meta, fix)| fixation_cells(meta, s.dataset, fix))
                    .collect()
            })
            .collect();
        Ok(Objective { sets, caches, cells })
    }

    /// Mean NLL (nats/fix) of the batch and its gradient in [`TrainState::flat`] layout.
    pub fn loss_and_grad(&self, state: &TrainState, batch: &[(usize, usize)]) -> Result<(f64, Vec<f64>)> {
        let per_image: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = batch
            .par_iter()
            .map(|&(si, ii)| {
                let set = &self.sets[si];
                let meta = &set.dataset.stimuli[ii];
                let cells = &self.cells[si][ii];
                if cells.is_empty() {
                    return Err(data_err!("stimulus {} has no fixations", meta.stimulus_id));
                }
                let bias = &state.biases[&set.bias_key];
                let stacks = set.bank.get(&meta.stimulus_id)?;
                let log_cb = self.caches[&set.bias_key].log_density(&output_geometry(meta));
                let trace = forward(stacks, meta, bias, &state.readout, log_cb)?;
                let loss = softmax_nll(&trace.logits, cells)?;
                let dlogits = softmax_nll_grad(&trace.logits, cells)?;
                let g = backward(&trace, stacks, bias, &state.readout, &dlogits);
                let n: f64 = cells.iter().map(|c| c.1).sum();
                Ok((loss, n, g.readout, g.bias))
            })
            .collect::<Result<_>>()?;
        let offsets = state.bias_offsets();
        let mut grad = vec![0.0; state.flat().len()];
        let (mut loss, mut total) = (0.0, 0.0);
        for (&(si, _), (l, n, gr, gb)) in batch.iter().zip(&per_image) {
            loss += l;
            total += n;
            for (a, b) in grad.iter_mut().zip(gr) {
                *a += b;
            }
            let off = offsets[&self.sets[si].bias_key];
            for (a, b) in grad[off..off + gb.len()].iter_mut().zip(gb) {
                *a += b;
            }
        }
        if total == 0.0 {
            return Err(data_err!("empty batch"));
        }
        grad.iter_mut().for_each(|g| *g /= total);
        let loss = loss / total;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let ids: Vec<&str> = batch
                .iter()
                .map(|&(si, ii)| self.sets[si].dataset.stimuli[ii].stimulus_id.as_str())
                .collect();
            return Err(SalError::Numerical(format!("non-finite loss or gradient on batch {ids:?}")));
        }
        Ok((loss, grad))
    }

    /// Pooled validation log-likelihood (bits/fix) or `None` without validation images.
    pub fn validation_ll(&self, state: &TrainState) -> Result<Option<f64>> {
        let (mut sum, mut n) = (0.0, 0usize);
        for s in self.sets {
            if s.validation.is_empty() {
                continue;
            }
            let bias = &state.biases[&s.bias_key];
            let model = BiasedModel::with_cache(&state.readout, bias, s.bank, self.caches[&s.bias_key].clone());
            for v in per_image_log_densities(&model, s.dataset, &s.validation)? {
                sum += v.iter().sum::<f64>();
                n += v.len();
            }
        }
        Ok((n > 0).then(|| sum / n as f64 / LN_2))
    }
}

fn fixation_cells(meta: &StimulusMeta, ds: &FixationDataset, fix: &[usize]) -> Vec<(usize, f64)> {
    let geom = output_geometry(meta);
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for &j in fix {
        *counts.entry(geom.cell_of(ds.fixations[j].x, ds.fixations[j].y)).or_default() += 1.0;
    }
    counts.into_iter().collect()
}

/// Mean NLL and gradient for a batch of `(set, stimulus)` pairs.
pub fn nll_loss(sets: &[TrainSet], state: &TrainState, batch: &[(usize, usize)]) -> Result<(f64, Vec<f64>)> {
    Objective::new(sets, state)?.loss_and_grad(state, batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub train_nll: f64,
    pub val_ll_bits: Option<f64>,
}

pub struct TrainOutcome {
    /// Best-validation state (final state without validation data).
    pub state: TrainState,
    pub log: Vec<LogRow>,
    pub best_epoch: u64,
    pub best_val_ll: Option<f64>,
}

pub fn write_train_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "step", "lr", "train_nll", "val_ll_bits"]).map_err(|e| SalError::csv(path, e))?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            format!("{:e}", r.lr),
            format!("{:.12}", r.train_nll),
            r.val_ll_bits.map(|v| format!("{v:.12}")).unwrap_or_default(),
        ])
        .map_err(|e| SalError::csv(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| SalError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    crate::io::write_atomic(path, &bytes)
}

/// Divergence threshold above the first batch loss, in nats/fix.
pub const DIVERGENCE_NATS: f64 = 10.0;

/// Epoch loop over the concatenated, shuffled training images of all sets.
pub fn train(sets: &[TrainSet], init: TrainState, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let objective = Objective::new(sets, &init)?;
    let items: Vec<(usize, usize)> = sets
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            let cells = &objective.cells[si];
            s.train.iter().filter(move |&&i| !cells[i].is_empty()).map(move |&i| (si, i))
        })
        .collect();
    if items.is_empty() {
        return Err(data_err!("no training images with fixations"));
    }
    let spe = cfg.steps_per_epoch.unwrap_or_else(|| items.len().div_ceil(cfg.batch_images));
    let last = *cfg.decay_epochs.last().expect("validated");
    let total_steps = (last * spe as f64).ceil() as u64;

    let mut state = init;
    let mask = state.trainable_mask(&cfg.trainable);
    let trainable: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    state.adam = AdamState::new(trainable.len());

    let mut order = items.clone();
    let mut pass = 0u64;
    SeededRng::derived(cfg.seed, pass).shuffle(&mut order);
    let mut cursor = 0usize;

    let mut log = Vec::new();
    let mut best: Option<(f64, TrainState, u64)> = None;
    let mut initial_loss: Option<f64> = None;
    let (mut epoch_loss, mut epoch_fix) = (0.0, 0.0);
    let fix_of = |b: &[(usize, usize)]| -> f64 {
        b.iter().map(|&(si, ii)| objective.cells[si][ii].iter().map(|c| c.1).sum::<f64>()).sum()
    };

    for step in 0..total_steps {
        let lr = cfg.lr_at(step as f64 / spe as f64);
        if cursor >= order.len() {
            pass += 1;
            SeededRng::derived(cfg.seed, pass).shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_images).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;

        let (loss, grad) = objective.loss_and_grad(&state, batch)?;
        let first = *initial_loss.get_or_insert(loss);
        if loss > first + DIVERGENCE_NATS {
            return Err(SalError::Numerical(format!(
                "training diverged at step {step}: loss {loss:.4} vs initial {first:.4}"
            )));
        }
        let nfix = fix_of(batch);
        epoch_loss += loss * nfix;
        epoch_fix += nfix;

        if !trainable.is_empty() {
            let mut flat = state.flat();
            let mut p: Vec<f64> = trainable.iter().map(|&i| flat[i]).collect();
            let g: Vec<f64> = trainable.iter().map(|&i| grad[i]).collect();
            adam_step(&mut p, &g, &mut state.adam, lr);
            for (&i, v) in trainable.iter().zip(p) {
                flat[i] = v;
            }
            state.set_flat(&flat);
        }
        state.step += 1;

        if (step + 1) % spe as u64 == 0 || step + 1 == total_steps {
            state.epoch += 1;
            let train_nll = epoch_loss / epoch_fix;
            state.loss_history.push(train_nll);
            epoch_loss = 0.0;
            epoch_fix = 0.0;
            let val = objective.validation_ll(&state)?;
            log::debug!("epoch {} step {} lr {lr:e} nll {train_nll:.5} val {val:?}", state.epoch, state.step);
            log.push(LogRow {
                epoch: state.epoch,
                step: state.step,
                lr,
                train_nll,
                val_ll_bits: val,
            });
            if let Some(v) = val {
                if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                    best = Some((v, state.clone(), state.epoch));
                }
            }
        }
    }
    let (state, best_epoch, best_val_ll) = match best {
        Some((v, s, e)) => {
            // keep the full loss trace on the returned state
            let mut s = s;
            s.loss_history = state.loss_history.clone();
            (s, e, Some(v))
        }
        None => {
            let e = state.epoch;
            (state, e, None)
        }
    };
    Ok(TrainOutcome {
        state,
        log,
        best_epoch,
        best_val_ll,
    })
}
