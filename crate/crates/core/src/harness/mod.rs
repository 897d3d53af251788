//! Experiment orchestration: the four training setups, generalization gaps,
//! bias ablation ladders, low-data curves and the bias sensitivity matrix.
//!
//! Every training and adaptation is a stage stored under
//! `<out>/stages/<name>-<key>/`, where the key hashes the stage inputs. A stage
//! with a `DONE` marker is loaded instead of recomputed.

mod fixture;
mod gaps;

pub use fixture::{fixture_scales, planted_pair, planted_pair_config, synth_harness_data};
pub use gaps::{GapReport, GapRow};

use crate::centerbias::{average_centerbias, fit_centerbias, CenterBiasFitConfig, CenterBiasModel, CenterBiasPredictor, CenterBiasVariant};
use crate::dataset::{make_crossval_split, FixationDataset, SplitAssignment};
use crate::error::{config_err, data_err, Result, SalError};
use crate::metrics::{per_image_log_densities, EvalConfig, MixturePredictor, SaliencyPredictor};
use crate::model::{checkpoint_hash, BiasGroup, BiasedModel, DatasetBiasParams, FeatureBank, ModelCheckpoint, ReadoutParams, ScaleSpec};
use crate::train::{adapt_biases, resolve_bias, train, write_train_log, AdaptConfig, BiasSource, TrainConfig, TrainSet, TrainState, Trainable};
use gaps::fmt;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    /// Center bias fitted on each dataset's training split for its bias set.
    pub centerbias: CenterBiasFitConfig,
    /// IG baseline: dataset center bias, rendered leave-one-image-out.
    pub baseline: CenterBiasFitConfig,
    pub eval: EvalConfig,
    pub folds: usize,
    pub val_folds: usize,
    pub split_seed: u64,
    pub readout_seed: u64,
    pub ablation_order: Vec<BiasGroup>,
    pub low_data_ns: Vec<usize>,
    /// Adds the whole training split as the last low-data size.
    pub low_data_full: bool,
    pub low_data_seeds: Vec<u64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            centerbias: CenterBiasFitConfig::with_variant(CenterBiasVariant::KdeGaussianUniform),
            baseline: CenterBiasFitConfig::with_variant(CenterBiasVariant::KdeUniform),
            eval: EvalConfig::default(),
            folds: 5,
            val_folds: 1,
            split_seed: 0,
            readout_seed: 1,
            ablation_order: BiasGroup::ALL.to_vec(),
            low_data_ns: vec![5, 10, 50],
            low_data_full: true,
            low_data_seeds: (0..5).collect(),
        }
    }
}

/// A dataset with its features and crossvalidation split.
pub struct HarnessDataset {
    pub dataset: FixationDataset,
    pub bank: FeatureBank,
    pub split: SplitAssignment,
}

impl HarnessDataset {
    pub fn new(dataset: FixationDataset, bank: FeatureBank, cfg: &HarnessConfig) -> Result<Self> {
        let split = make_crossval_split(&dataset, cfg.folds, cfg.val_folds, None, cfg.split_seed)?;
        Ok(HarnessDataset { dataset, bank, split })
    }
}

/// A trained (or adapted) model stored on disk.
#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    pub dir: PathBuf,
    /// Hash of the checkpoint directory contents.
    pub hash: String,
    pub state: TrainState,
}

impl Stage {
    /// Loads a finished stage directory (`<name>-<key>/`).
    pub fn load(dir: &Path) -> Result<Stage> {
        if !dir.join("DONE").exists() {
            return Err(data_err!("{} is not a finished stage", dir.display()));
        }
        let ck_dir = dir.join("checkpoint");
        let file = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        let name = file.rsplit_once('-').map(|(n, _)| n).unwrap_or(file);
        Ok(Stage {
            name: name.to_string(),
            hash: checkpoint_hash(&ck_dir)?,
            dir: dir.to_path_buf(),
            state: TrainState::from_checkpoint(ModelCheckpoint::load(&ck_dir)?),
        })
    }
}

pub struct FourSetups {
    pub individual: Vec<Stage>,
    pub naive_loo: Vec<Stage>,
    pub aware_loo: Vec<Stage>,
    pub joint: Stage,
}

impl FourSetups {
    pub fn stages(&self) -> Vec<&Stage> {
        let mut v: Vec<&Stage> = self.individual.iter().collect();
        v.extend(self.naive_loo.iter());
        v.extend(self.aware_loo.iter());
        v.push(&self.joint);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub dataset: String,
    pub rung: usize,
    /// Cumulative trainable groups, `+`-joined short names (`none` at rung 0).
    pub groups: String,
    pub ig: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowDataRow {
    pub dataset: String,
    pub n: usize,
    pub seed: u64,
    pub ig: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub eval_datasets: Vec<String>,
    /// Dataset names followed by `averaged`.
    pub sources: Vec<String>,
    /// `ig[eval][source]` in bits/fix.
    pub ig: Vec<Vec<f64>>,
}

impl SensitivityMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eval_dataset,bias_source,ig_bits\n");
        for (e, row) in self.eval_datasets.iter().zip(&self.ig) {
            for (src, v) in self.sources.iter().zip(row) {
                s.push_str(&format!("{e},{src},{}\n", fmt(*v)));
            }
        }
        s
    }

    /// Own-bias entry strictly larger than every other dataset's.
    pub fn diagonal_dominant(&self) -> bool {
        self.eval_datasets.iter().enumerate().all(|(i, e)| {
            let own = self.sources.iter().position(|s| s == e).map(|j| self.ig[i][j]);
            match own {
                Some(own) => self
                    .sources
                    .iter()
                    .enumerate()
                    .filter(|(j, s)| s.as_str() != e && s.as_str() != "averaged" && *j < self.ig[i].len())
                    .all(|(j, _)| own > self.ig[i][j]),
                None => false,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointNaiveRow {
    pub dataset: String,
    pub ig_aware: f64,
    pub ig_naive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub dataset: String,
    pub ig_naive_model: f64,
    pub ig_bias_averaged: f64,
    pub ig_ensemble: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptedBias {
    pub dataset: String,
    pub stage: Stage,
}

impl AdaptedBias {
    pub fn bias(&self) -> &DatasetBiasParams {
        &self.stage.state.biases[&self.dataset]
    }
}

/// Everything produced by [`Experiment::run_all`].
pub struct HarnessReport {
    pub four: FourSetups,
    pub joint_naive: Stage,
    pub gaps: GapReport,
    pub adapted: Vec<AdaptedBias>,
    pub sensitivity: SensitivityMatrix,
    pub joint_vs_naive: Vec<JointNaiveRow>,
    pub generalization: Vec<GeneralizationRow>,
    pub ladder: Vec<LadderRung>,
    pub low_data: Vec<LowDataRow>,
    /// Report files written, in a fixed order.
    pub files: Vec<PathBuf>,
}

pub struct Experiment {
    pub cfg: HarnessConfig,
    pub provider: String,
    pub scales: Vec<ScaleSpec>,
    pub data: Vec<HarnessDataset>,
    pub out: PathBuf,
    fingerprints: Vec<String>,
    centerbiases: Vec<CenterBiasModel>,
    baselines: Vec<CenterBiasPredictor>,
    /// Baseline log-densities on each validation split.
    baseline_lls: Vec<Vec<Vec<f64>>>,
}

fn key_of(value: &serde_json::Value) -> String {
    crate::io::sha256_hex(value.to_string().as_bytes())[..16].to_string()
}

fn mark_done(dir: &Path, key: &serde_json::Value) -> Result<()> {
    crate::io::write_json(&dir.join("stage.json"), key)?;
    crate::io::write_atomic(&dir.join("DONE"), b"")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SalError::io(dir, e))
}

impl Experiment {
    /// Fits (or loads) each dataset's center bias and IG baseline.
    pub fn prepare(
        cfg: HarnessConfig,
        provider: impl Into<String>,
        scales: Vec<ScaleSpec>,
        data: Vec<HarnessDataset>,
        out: impl Into<PathBuf>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(config_err!("no datasets given"));
        }
        let mut names: Vec<&str> = data.iter().map(|d| d.dataset.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&"averaged") || names.contains(&"shared") {
            return Err(config_err!("dataset names must be unique and not reserved"));
        }
        for d in &data {
            if d.bank.scales != scales {
                return Err(config_err!("feature bank of {} was built with other scales", d.dataset.name));
            }
            if d.split.validation_indices().is_empty() || d.split.train_indices().is_empty() {
                return Err(data_err!("{} needs training and validation stimuli", d.dataset.name));
            }
        }
        let mut exp = Experiment {
            cfg,
            provider: provider.into(),
            scales,
            fingerprints: data.iter().map(|d| d.dataset.fingerprint()).collect(),
            data,
            out: out.into(),
            centerbiases: Vec::new(),
            baselines: Vec::new(),
            baseline_lls: Vec::new(),
        };
        for i in 0..exp.data.len() {
            let d = &exp.data[i];
            let train_idx = d.split.train_indices();
            let cb = exp.cached_centerbias(
                &format!("centerbias-{}", d.dataset.name),
                json!({"kind": "centerbias", "data": exp.fingerprints[i], "indices": train_idx, "cfg": exp.cfg.centerbias}),
                || Ok(fit_centerbias(&d.dataset.subset(&train_idx), &exp.cfg.centerbias)?.model),
            )?;
            let base = exp.cached_centerbias(
                &format!("baseline-{}", d.dataset.name),
                json!({"kind": "baseline", "data": exp.fingerprints[i], "cfg": exp.cfg.baseline}),
                || Ok(fit_centerbias(&d.dataset, &exp.cfg.baseline)?.model),
            )?;
            let pred = CenterBiasPredictor {
                model: base,
                downscale: exp.cfg.baseline.downscale,
                leave_one_out: true,
            };
            let lls = per_image_log_densities(&pred, &d.dataset, &d.split.validation_indices())?;
            exp.centerbiases.push(cb);
            exp.baselines.push(pred);
            exp.baseline_lls.push(lls);
        }
        Ok(exp)
    }

    pub fn dataset_index(&self, name: &str) -> Result<usize> {
        self.data
            .iter()
            .position(|d| d.dataset.name == name)
            .ok_or_else(|| config_err!("unknown dataset {name}"))
    }

    pub fn centerbias(&self, i: usize) -> &CenterBiasModel {
        &self.centerbiases[i]
    }

    pub fn baseline(&self, i: usize) -> &CenterBiasPredictor {
        &self.baselines[i]
    }

    fn stage_dir(&self, name: &str, key: &serde_json::Value) -> PathBuf {
        self.out.join("stages").join(format!("{name}-{}", key_of(key)))
    }

    fn cached_centerbias(
        &self,
        name: &str,
        key: serde_json::Value,
        fit: impl FnOnce() -> Result<CenterBiasModel>,
    ) -> Result<CenterBiasModel> {
        let dir = self.stage_dir(name, &key);
        let path = dir.join("centerbias.json");
        if !dir.join("DONE").exists() {
            create_dir(&dir)?;
            fit()?.save(&path)?;
            mark_done(&dir, &key)?;
        }
        CenterBiasModel::load(&path)
    }

    fn cached_checkpoint(
        &self,
        name: &str,
        key: serde_json::Value,
        run: impl FnOnce(&Path) -> Result<ModelCheckpoint>,
    ) -> Result<Stage> {
        let dir = self.stage_dir(name, &key);
        let ck_dir = dir.join("checkpoint");
        if dir.join("DONE").exists() {
            log::info!("stage {name} already done, loading");
        } else {
            log::info!("running stage {name}");
            create_dir(&ck_dir)?;
            run(&dir)?.save(&ck_dir)?;
            mark_done(&dir, &key)?;
        }
        let state = TrainState::from_checkpoint(ModelCheckpoint::load(&ck_dir)?);
        Ok(Stage {
            name: name.to_string(),
            hash: checkpoint_hash(&ck_dir)?,
            dir,
            state,
        })
    }

    /// Trains on the given datasets; `naive` shares one bias set across them.
    pub fn train_stage(&self, name: &str, members: &[usize], naive: bool) -> Result<Stage> {
        if members.is_empty() {
            return Err(config_err!("stage {name} has no datasets"));
        }
        let key = json!({
            "kind": "train",
            "members": members.iter().map(|&i| json!({
                "name": self.data[i].dataset.name,
                "data": self.fingerprints[i],
                "train": self.data[i].split.train_indices(),
                "validation": self.data[i].split.validation_indices(),
                "centerbias": self.cfg.centerbias,
            })).collect::<Vec<_>>(),
            "naive": naive,
            "train_cfg": self.cfg.train,
            "readout_seed": self.cfg.readout_seed,
            "scales": self.scales,
            "provider": self.provider,
        });
        self.cached_checkpoint(name, key, |dir| {
            let n_scales = self.scales.len();
            let mut biases = BTreeMap::new();
            if naive {
                let cbs: Vec<CenterBiasModel> = members.iter().map(|&i| self.centerbiases[i].clone()).collect();
                biases.insert("shared".to_string(), DatasetBiasParams::init(n_scales, average_centerbias(&cbs)?));
            } else {
                for &i in members {
                    biases.insert(
                        self.data[i].dataset.name.clone(),
                        DatasetBiasParams::init(n_scales, self.centerbiases[i].clone()),
                    );
                }
            }
            let readout = ReadoutParams::init(self.data[members[0]].bank.channels, self.cfg.readout_seed);
            let init = TrainState::new(self.scales.clone(), self.provider.clone(), readout, biases);
            let sets: Vec<TrainSet> = members
                .iter()
                .map(|&i| TrainSet {
                    dataset: &self.data[i].dataset,
                    bank: &self.data[i].bank,
                    train: self.data[i].split.train_indices(),
                    validation: self.data[i].split.validation_indices(),
                    bias_key: if naive { "shared".into() } else { self.data[i].dataset.name.clone() },
                })
                .collect();
            let outcome = train(&sets, init, &self.cfg.train)?;
            write_train_log(&dir.join("train_log.csv"), &outcome.log)?;
            Ok(outcome.state.checkpoint())
        })
    }

    /// Bias-only adaptation of a stage's readout to `target`.
    pub fn adapt_stage(
        &self,
        parent: &Stage,
        target: usize,
        n_images: Option<usize>,
        seed: u64,
        trainable: &Trainable,
    ) -> Result<AdaptedBias> {
        let d = &self.data[target];
        let name = &d.dataset.name;
        let pool = d.split.train_indices();
        let mut cfg = self.cfg.adapt.clone();
        cfg.n_images = n_images;
        cfg.subset_seed = seed;
        cfg.train.seed = seed;
        cfg.train.trainable = trainable.clone();
        let key = json!({
            "kind": "adapt",
            "parent": parent.hash,
            "target": name,
            "data": self.fingerprints[target],
            "pool": pool,
            "cfg": cfg,
        });
        let n_tag = n_images.map(|n| n.to_string()).unwrap_or_else(|| "all".into());
        let stage_name = format!("adapt-{}-{name}-n{n_tag}-s{seed}", parent.name);
        let stage = self.cached_checkpoint(&stage_name, key, |_| {
            let out = adapt_biases(&parent.state, &d.dataset, &d.bank, &pool, &cfg)?;
            Ok(ModelCheckpoint {
                scales: self.scales.clone(),
                provider: self.provider.clone(),
                readout: parent.state.readout.clone(),
                biases: BTreeMap::from([(name.clone(), out.bias)]),
            })
        })?;
        Ok(AdaptedBias {
            dataset: name.clone(),
            stage,
        })
    }

    fn ig_of(&self, model: &dyn SaliencyPredictor, target: usize) -> Result<f64> {
        let d = &self.data[target];
        let lls = per_image_log_densities(model, &d.dataset, &d.split.validation_indices())?;
        let (mut sum, mut n) = (0.0, 0usize);
        for (a, b) in lls.iter().zip(&self.baseline_lls[target]) {
            for (x, y) in a.iter().zip(b) {
                sum += x - y;
            }
            n += a.len();
        }
        if n == 0 {
            return Err(data_err!("no validation fixations in {}", d.dataset.name));
        }
        Ok(sum / n as f64 / LN_2)
    }

    /// Validation IG (bits/fix) of a readout with explicit bias parameters.
    pub fn ig(&self, readout: &ReadoutParams, bias: &DatasetBiasParams, target: usize) -> Result<f64> {
        let model = BiasedModel::new(readout, bias, &self.data[target].bank);
        self.ig_of(&model, target)
    }

    pub fn ig_with_source(&self, state: &TrainState, target: usize, source: &BiasSource) -> Result<f64> {
        let bias = match source {
            BiasSource::Own if !state.biases.contains_key(&self.data[target].dataset.name) && state.biases.len() == 1 => {
                state.biases.values().next().cloned().expect("one entry")
            }
            s => resolve_bias(state, &self.data[target].dataset.name, s)?,
        };
        self.ig(&state.readout, &bias, target)
    }

    pub fn individual_stage(&self, t: usize) -> Result<Stage> {
        self.train_stage(&format!("individual-{}", self.data[t].dataset.name), &[t], false)
    }

    /// Trained on every dataset except `t`.
    pub fn loo_stage(&self, t: usize, naive: bool) -> Result<Stage> {
        let others: Vec<usize> = (0..self.data.len()).filter(|&i| i != t).collect();
        let prefix = if naive { "naive" } else { "aware" };
        self.train_stage(&format!("{prefix}-loo-{}", self.data[t].dataset.name), &others, naive)
    }

    pub fn joint_stage(&self) -> Result<Stage> {
        let all: Vec<usize> = (0..self.data.len()).collect();
        self.train_stage("joint", &all, false)
    }

    pub fn run_four_setups(&self) -> Result<FourSetups> {
        let n = self.data.len();
        if n < 2 {
            return Err(config_err!("the training setups need at least two datasets"));
        }
        let mut individual = Vec::new();
        let mut naive_loo = Vec::new();
        let mut aware_loo = Vec::new();
        for t in 0..n {
            individual.push(self.individual_stage(t)?);
        }
        for t in 0..n {
            naive_loo.push(self.loo_stage(t, true)?);
            aware_loo.push(self.loo_stage(t, false)?);
        }
        let joint = self.joint_stage()?;
        Ok(FourSetups {
            individual,
            naive_loo,
            aware_loo,
            joint,
        })
    }

    pub fn joint_naive(&self) -> Result<Stage> {
        let all: Vec<usize> = (0..self.data.len()).collect();
        self.train_stage("joint-naive", &all, true)
    }

    /// Gap report plus the fully adapted bias sets used for it.
    pub fn compute_gaps(&self, four: &FourSetups) -> Result<(GapReport, Vec<AdaptedBias>)> {
        let n = self.data.len();
        if four.individual.len() != n || four.naive_loo.len() != n || four.aware_loo.len() != n {
            return Err(config_err!("missing trained state for some dataset"));
        }
        let mut rows = Vec::new();
        let mut adapted = Vec::new();
        for t in 0..n {
            let ig_full = self.ig_with_source(&four.joint.state, t, &BiasSource::Own)?;
            let mut single = Vec::new();
            for s in (0..n).filter(|&s| s != t) {
                let src = BiasSource::Foreign(self.data[s].dataset.name.clone());
                single.push(self.ig_with_source(&four.individual[s].state, t, &src)?);
            }
            let ig_single_transfer = single.iter().sum::<f64>() / single.len() as f64;
            let ig_loo_naive = self.ig_with_source(&four.naive_loo[t].state, t, &BiasSource::Averaged)?;
            let ig_loo_generalized = self.ig_with_source(&four.aware_loo[t].state, t, &BiasSource::Averaged)?;
            let a = self.adapt_stage(&four.aware_loo[t], t, None, self.cfg.adapt.subset_seed, &self.cfg.adapt.train.trainable)?;
            let ig_loo_adapted = self.ig(&a.stage.state.readout, a.bias(), t)?;
            rows.push(GapRow {
                dataset: self.data[t].dataset.name.clone(),
                ig_full,
                ig_single_transfer,
                ig_loo_naive,
                ig_loo_generalized,
                ig_loo_adapted,
            });
            adapted.push(a);
        }
        if rows.iter().any(|r| !r.all_finite()) {
            return Err(SalError::Numerical("non-finite information gain in gap report".into()));
        }
        Ok((GapReport { rows }, adapted))
    }

    /// Starts from averaged biases and adapts cumulatively larger group sets.
    pub fn bias_ablation_ladder(&self, loo: &Stage, target: usize, order: &[BiasGroup]) -> Result<Vec<LadderRung>> {
        for (k, g) in order.iter().enumerate() {
            if order[..k].contains(g) {
                return Err(config_err!("bias group {} repeated in ablation order", g.short()));
            }
        }
        let name = self.data[target].dataset.name.clone();
        let mut rungs = vec![LadderRung {
            dataset: name.clone(),
            rung: 0,
            groups: "none".into(),
            ig: self.ig_with_source(&loo.state, target, &BiasSource::Averaged)?,
        }];
        for k in 1..=order.len() {
            let groups = &order[..k];
            let trainable = Trainable::BiasSubset(groups.iter().copied().collect());
            let a = self.adapt_stage(loo, target, None, self.cfg.adapt.subset_seed, &trainable)?;
            rungs.push(LadderRung {
                dataset: name.clone(),
                rung: k,
                groups: groups.iter().map(|g| g.short()).collect::<Vec<_>>().join("+"),
                ig: self.ig(&a.stage.state.readout, a.bias(), target)?,
            });
        }
        Ok(rungs)
    }

    /// Adapted IG on the full validation split for every `(n, seed)`.
    pub fn low_data_curve(&self, loo: &Stage, target: usize, ns: &[usize], seeds: &[u64]) -> Result<Vec<LowDataRow>> {
        let pool = self.data[target].split.train_indices().len();
        if let Some(&bad) = ns.iter().find(|&&n| n == 0 || n > pool) {
            return Err(config_err!("low-data size {bad} outside 1..={pool}"));
        }
        let name = &self.data[target].dataset.name;
        let mut rows = Vec::new();
        for &n in ns {
            for &seed in seeds {
                let a = self.adapt_stage(loo, target, Some(n), seed, &self.cfg.adapt.train.trainable)?;
                rows.push(LowDataRow {
                    dataset: name.clone(),
                    n,
                    seed,
                    ig: self.ig(&a.stage.state.readout, a.bias(), target)?,
                });
            }
        }
        Ok(rows)
    }

    pub fn sensitivity_matrix(&self, joint: &Stage) -> Result<SensitivityMatrix> {
        if joint.state.biases.len() < 2 {
            return Err(config_err!("sensitivity matrix needs a joint model with at least two bias sets"));
        }
        let mut sources: Vec<String> = self.data.iter().map(|d| d.dataset.name.clone()).collect();
        sources.push("averaged".into());
        let mut ig = Vec::new();
        for t in 0..self.data.len() {
            let row = sources
                .iter()
                .map(|s| {
                    let src = if s == "averaged" {
                        BiasSource::Averaged
                    } else {
                        BiasSource::Foreign(s.clone())
                    };
                    self.ig_with_source(&joint.state, t, &src)
                })
                .collect::<Result<Vec<f64>>>()?;
            ig.push(row);
        }
        Ok(SensitivityMatrix {
            eval_datasets: self.data.iter().map(|d| d.dataset.name.clone()).collect(),
            sources,
            ig,
        })
    }

    pub fn joint_vs_naive(&self, joint: &Stage, naive: &Stage) -> Result<Vec<JointNaiveRow>> {
        (0..self.data.len())
            .map(|t| {
                Ok(JointNaiveRow {
                    dataset: self.data[t].dataset.name.clone(),
                    ig_aware: self.ig_with_source(&joint.state, t, &BiasSource::Own)?,
                    ig_naive: self.ig_with_source(&naive.state, t, &BiasSource::Averaged)?,
                })
            })
            .collect()
    }

    /// Naive model, bias averaging and density ensembling of individual models.
    pub fn generalization_strategies(&self, four: &FourSetups) -> Result<Vec<GeneralizationRow>> {
        let n = self.data.len();
        let mut rows = Vec::new();
        for t in 0..n {
            let biases: Vec<DatasetBiasParams> = (0..n)
                .filter(|&s| s != t)
                .map(|s| four.individual[s].state.biases[&self.data[s].dataset.name].clone())
                .collect();
            let models: Vec<BiasedModel> = (0..n)
                .filter(|&s| s != t)
                .zip(&biases)
                .map(|(s, b)| BiasedModel::new(&four.individual[s].state.readout, b, &self.data[t].bank))
                .collect();
            let ensemble = MixturePredictor {
                members: models.iter().map(|m| m as &dyn SaliencyPredictor).collect(),
            };
            rows.push(GeneralizationRow {
                dataset: self.data[t].dataset.name.clone(),
                ig_naive_model: self.ig_with_source(&four.naive_loo[t].state, t, &BiasSource::Averaged)?,
                ig_bias_averaged: self.ig_with_source(&four.aware_loo[t].state, t, &BiasSource::Averaged)?,
                ig_ensemble: self.ig_of(&ensemble, t)?,
            });
        }
        Ok(rows)
    }

    /// Runs every experiment and writes the report files to `<out>/reports`.
    pub fn run_all(&self) -> Result<HarnessReport> {
        let four = self.run_four_setups()?;
        let joint_naive = self.joint_naive()?;
        let (gaps, adapted) = self.compute_gaps(&four)?;
        let sensitivity = self.sensitivity_matrix(&four.joint)?;
        let joint_vs_naive = self.joint_vs_naive(&four.joint, &joint_naive)?;
        let generalization = self.generalization_strategies(&four)?;
        let mut ladder = Vec::new();
        let mut low_data = Vec::new();
        for t in 0..self.data.len() {
            ladder.extend(self.bias_ablation_ladder(&four.aware_loo[t], t, &self.cfg.ablation_order)?);
            let mut ns = self.cfg.low_data_ns.clone();
            if self.cfg.low_data_full {
                ns.push(self.data[t].split.train_indices().len());
            }
            low_data.extend(self.low_data_curve(&four.aware_loo[t], t, &ns, &self.cfg.low_data_seeds)?);
        }
        let mut report = HarnessReport {
            four,
            joint_naive,
            gaps,
            adapted,
            sensitivity,
            joint_vs_naive,
            generalization,
            ladder,
            low_data,
            files: Vec::new(),
        };
        report.files = write_reports(&self.out.join("reports"), &report)?;
        Ok(report)
    }
}

fn bias_csv_row(label: &str, dataset: &str, b: &DatasetBiasParams) -> String {
    let w: Vec<String> = b.scale_weights().iter().map(|v| fmt(*v)).collect();
    format!(
        "{label},{dataset},{},{},{},{}\n",
        fmt(b.sigma_dva()),
        fmt(b.priority()),
        fmt(b.cb_weight),
        w.join(";")
    )
}

/// Bias parameters of the joint model followed by the adapted sets.
pub fn bias_parameters_csv(joint: &Stage, adapted: &[AdaptedBias]) -> String {
    let mut b = String::from("model,dataset,sigma_dva,priority,cb_weight,scale_weights\n");
    for (name, bias) in &joint.state.biases {
        b.push_str(&bias_csv_row("joint", name, bias));
    }
    for a in adapted {
        b.push_str(&bias_csv_row("adapted", &a.dataset, a.bias()));
    }
    b
}

pub fn joint_vs_naive_csv(rows: &[JointNaiveRow]) -> String {
    let mut j = String::from("dataset,ig_aware,ig_naive,margin\n");
    for row in rows {
        j.push_str(&format!(
            "{},{},{},{}\n",
            row.dataset,
            fmt(row.ig_aware),
            fmt(row.ig_naive),
            fmt(row.ig_aware - row.ig_naive)
        ));
    }
    j
}

pub fn generalization_csv(rows: &[GeneralizationRow]) -> String {
    let mut g = String::from("dataset,ig_naive_model,ig_bias_averaged,ig_ensemble\n");
    for row in rows {
        g.push_str(&format!(
            "{},{},{},{}\n",
            row.dataset,
            fmt(row.ig_naive_model),
            fmt(row.ig_bias_averaged),
            fmt(row.ig_ensemble)
        ));
    }
    g
}

pub fn ladder_csv(rows: &[LadderRung]) -> String {
    let mut l = String::from("dataset,rung,groups,ig\n");
    for row in rows {
        l.push_str(&format!("{},{},{},{}\n", row.dataset, row.rung, row.groups, fmt(row.ig)));
    }
    l
}

pub fn low_data_csv(rows: &[LowDataRow]) -> String {
    let mut d = String::from("dataset,n,seed,ig\n");
    for row in rows {
        d.push_str(&format!("{},{},{},{}\n", row.dataset, row.n, row.seed, fmt(row.ig)));
    }
    d
}

/// Writes every report CSV plus a text summary; returns the written paths.
pub fn write_reports(dir: &Path, r: &HarnessReport) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        crate::io::write_atomic(&p, body.as_bytes())?;
        files.push(p);
        Ok(())
    };

    let mut ck = String::from("stage,checkpoint_sha256\n");
    for s in r.four.stages().into_iter().chain([&r.joint_naive]) {
        ck.push_str(&format!("{},{}\n", s.name, s.hash));
    }
    for a in &r.adapted {
        ck.push_str(&format!("{},{}\n", a.stage.name, a.stage.hash));
    }
    put("checkpoints.csv", ck)?;
    put("gap_report.csv", r.gaps.to_csv())?;

    put("bias_parameters.csv", bias_parameters_csv(&r.four.joint, &r.adapted))?;
    put("sensitivity.csv", r.sensitivity.to_csv())?;
    put("joint_vs_naive.csv", joint_vs_naive_csv(&r.joint_vs_naive))?;
    put("generalization.csv", generalization_csv(&r.generalization))?;
    put("ablation.csv", ladder_csv(&r.ladder))?;
    put("lowdata.csv", low_data_csv(&r.low_data))?;

    put("summary.txt", summary_text(r))?;
    Ok(files)
}

fn summary_text(r: &HarnessReport) -> String {
    let mut s = String::new();
    s.push_str("Generalization gaps (IG in bits/fix over the dataset center bias)\n");
    s.push_str(&format!(
        "{:<12} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10}\n",
        "dataset", "full", "single", "loo-naive", "loo-gen", "adapted", "remaining", "closed"
    ));
    for row in r.gaps.rows.iter().chain(std::iter::once(&r.gaps.mean())) {
        s.push_str(&format!(
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.1}% {:>9.1}%{}\n",
            row.dataset,
            row.ig_full,
            row.ig_single_transfer,
            row.ig_loo_naive,
            row.ig_loo_generalized,
            row.ig_loo_adapted,
            100.0 * row.fraction_remaining(),
            100.0 * row.fraction_closed_by_adaptation(),
            if row.flagged() { "  (outside [0,1])" } else { "" }
        ));
    }
    s.push_str("\nJoint bias-aware vs naive\n");
    for row in &r.joint_vs_naive {
        s.push_str(&format!(
            "{:<12} aware {:.4}  naive {:.4}  margin {:+.4}\n",
            row.dataset,
            row.ig_aware,
            row.ig_naive,
            row.ig_aware - row.ig_naive
        ));
    }
    s.push_str("\nBias sensitivity (rows: evaluated dataset, columns: bias source)\n");
    s.push_str(&format!("{:<12}", ""));
    for src in &r.sensitivity.sources {
        s.push_str(&format!(" {src:>10}"));
    }
    s.push('\n');
    for (e, row) in r.sensitivity.eval_datasets.iter().zip(&r.sensitivity.ig) {
        s.push_str(&format!("{e:<12}"));
        for v in row {
            s.push_str(&format!(" {v:>10.4}"));
        }
        s.push('\n');
    }
    s.push_str("\nAdapted bias parameters\n");
    for a in &r.adapted {
        let b = a.bias();
        s.push_str(&format!(
            "{:<12} sigma {:.4} dva  priority {:.4}  cb weight {:.4}\n",
            a.dataset,
            b.sigma_dva(),
            b.priority(),
            b.cb_weight
        ));
    }
    s
}
