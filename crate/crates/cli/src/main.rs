use clap::{Parser, Subcommand};
use salbias::centerbias::{fit_centerbias, fit_gold_standard, CenterBiasVariant, GoldStandardConfig};
use salbias::dataset::{load_dataset, load_dataset_with, save_dataset, synth_dataset, LoadOptions, SynthSpec};
use salbias::harness::{
    bias_parameters_csv, fixture_scales, generalization_csv, joint_vs_naive_csv, ladder_csv, low_data_csv, planted_pair,
    planted_pair_config, Experiment, HarnessConfig, HarnessDataset, Stage,
};
use salbias::metrics::{evaluate, SaliencyPredictor};
use salbias::model::{BiasGroup, BuiltinFeatures, FeatureBank, FeatureProvider, PrecomputedFeatures, ScaleSpec};
use salbias::train::{resolve_bias, BiasSource, Trainable};
use salbias::{Result, SalError};
use serde::Deserialize;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "salbias", version, about = "Bias-aware saliency modeling toolkit")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed. Overrides split, readout and training seeds; synthetic
    /// dataset i gets seed + i.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "salbias-out")]
    out: PathBuf,
    /// `builtin` or a directory of precomputed FMAP features.
    #[arg(long, global = true, default_value = "builtin")]
    features: String,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic planted-bias datasets into <out>/data.
    Synth,
    /// Load and filter a dataset manifest, then store it under <out>/data.
    Ingest {
        manifest: PathBuf,
        /// drop or error
        #[arg(long, default_value = "drop")]
        on_oob: String,
        #[arg(long)]
        name: Option<String>,
    },
    /// Fit a dataset center bias on all stimuli.
    FitCenterbias {
        dataset: String,
        /// gaussian, kde, kde_uniform, kde_gaussian_uniform, ...
        #[arg(long)]
        variant: Option<String>,
    },
    /// Fit the per-image gold standard and evaluate it.
    FitGoldstandard { dataset: String },
    /// Train on a set of datasets.
    Train {
        /// Comma-separated dataset names (default: all).
        #[arg(long)]
        datasets: Option<String>,
        /// One shared bias set instead of one per dataset.
        #[arg(long)]
        naive: bool,
        #[arg(long)]
        name: Option<String>,
    },
    /// Adapt bias parameters of a trained stage to a dataset.
    Adapt {
        /// Stage directory or stage name under <out>/stages.
        stage: String,
        target: String,
        /// Number of training images used (default: whole training split).
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated bias groups (cb, ms, ps, cbw, bl).
        #[arg(long)]
        groups: Option<String>,
    },
    /// Evaluate a stage on a dataset with every metric.
    Eval {
        stage: String,
        dataset: String,
        /// own, averaged or another dataset's name.
        #[arg(long, default_value = "own")]
        bias: String,
        /// Evaluate on all stimuli instead of the validation split.
        #[arg(long)]
        all: bool,
    },
    /// Leave-one-dataset-out setups and generalization gaps.
    Loo,
    /// Bias ablation ladder on each held-out dataset.
    Ablate {
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Adaptation performance against the number of images.
    Lowdata {
        #[arg(long)]
        dataset: Option<String>,
    },
    /// IG of the joint model under every bias source.
    Sensitivity,
    /// Run every experiment and write all reports.
    Report,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CliConfig {
    harness: HarnessConfig,
    scales: Vec<ScaleSpec>,
    synth: Vec<SynthEntry>,
    /// Manifest paths; empty means every dataset under <out>/data.
    datasets: Vec<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthEntry {
    spec: SynthSpec,
    seed: u64,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            harness: planted_pair_config(),
            scales: fixture_scales(),
            synth: planted_pair().into_iter().map(|(spec, seed)| SynthEntry { spec, seed }).collect(),
            datasets: Vec::new(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| SalError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| SalError::Config(format!("{}: {e}", path.display())))?
        }
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.harness.split_seed = seed;
        cfg.harness.readout_seed = seed;
        cfg.harness.train.seed = seed;
        for (i, e) in cfg.synth.iter_mut().enumerate() {
            e.seed = seed.wrapping_add(i as u64);
        }
    }
    cfg.harness.train.validate()?;
    cfg.harness.adapt.train.validate()?;
    Ok(cfg)
}

fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

fn manifests(cli: &Cli, cfg: &CliConfig) -> Result<Vec<PathBuf>> {
    if !cfg.datasets.is_empty() {
        return Ok(cfg.datasets.clone());
    }
    let dir = data_dir(&cli.out);
    let mut found = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&dir) {
        for e in entries.flatten() {
            let m = e.path().join("manifest.json");
            if m.exists() {
                found.push(m);
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(SalError::Data(format!(
            "no datasets configured and none found in {}; run `salbias synth` or `salbias ingest` first",
            dir.display()
        )));
    }
    Ok(found)
}

fn provider_for(cli: &Cli, ds: &salbias::dataset::FixationDataset, scales: &[ScaleSpec]) -> Result<Box<dyn FeatureProvider>> {
    if cli.features == "builtin" {
        Ok(Box::new(BuiltinFeatures::new()))
    } else {
        Ok(Box::new(PrecomputedFeatures::open(&cli.features, ds, scales)?))
    }
}

fn experiment(cli: &Cli, cfg: &CliConfig) -> Result<Experiment> {
    let mut data = Vec::new();
    let mut provider_id = String::new();
    for m in manifests(cli, cfg)? {
        let ds = load_dataset(&m)?;
        let provider = provider_for(cli, &ds, &cfg.scales)?;
        provider_id = provider.id();
        let bank = FeatureBank::build(provider.as_ref(), &ds, &cfg.scales)?;
        log::info!("loaded {} ({} stimuli, {} fixations)", ds.name, ds.stimuli.len(), ds.fixations.len());
        data.push(HarnessDataset::new(ds, bank, &cfg.harness)?);
    }
    Experiment::prepare(cfg.harness.clone(), provider_id, cfg.scales.clone(), data, &cli.out)
}

fn find_stage(out: &Path, spec: &str) -> Result<Stage> {
    let p = Path::new(spec);
    if p.join("DONE").exists() {
        return Stage::load(p);
    }
    let dir = out.join("stages");
    let mut hits: Vec<(std::time::SystemTime, PathBuf)> = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&dir) {
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            let matches = name
                .rsplit_once('-')
                .is_some_and(|(n, key)| n == spec && key.len() == 16 && key.chars().all(|c| c.is_ascii_hexdigit()));
            let done = e.path().join("DONE");
            if matches && done.exists() {
                let t = std::fs::metadata(&done).and_then(|m| m.modified()).unwrap_or(std::time::UNIX_EPOCH);
                hits.push((t, e.path()));
            }
        }
    }
    hits.sort();
    match hits.last() {
        Some((_, path)) => {
            if hits.len() > 1 {
                log::warn!("{} finished stages named {spec}; using the newest", hits.len());
            }
            Stage::load(path)
        }
        None => Err(SalError::Config(format!("no finished stage {spec} in {}", dir.display()))),
    }
}

fn targets(exp: &Experiment, only: &Option<String>) -> Result<Vec<usize>> {
    match only {
        Some(name) => Ok(vec![exp.dataset_index(name)?]),
        None => Ok((0..exp.data.len()).collect()),
    }
}

fn write_report(out: &Path, name: &str, body: &str) -> Result<()> {
    let path = out.join("reports").join(name);
    salbias::io::write_atomic(&path, body.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn find_dataset(cli: &Cli, cfg: &CliConfig, name: &str) -> Result<salbias::dataset::FixationDataset> {
    for m in manifests(cli, cfg)? {
        let ds = load_dataset(&m)?;
        if ds.name == name {
            return Ok(ds);
        }
    }
    Err(SalError::Config(format!("unknown dataset {name}")))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => {
            for e in &cfg.synth {
                let mut o = synth_dataset(&e.spec, e.seed)?;
                let dir = data_dir(&cli.out).join(&e.spec.name);
                let m = o.save(&dir)?;
                println!("{}: {} stimuli, {} fixations -> {}", e.spec.name, o.dataset.stimuli.len(), o.dataset.fixations.len(), m.display());
            }
        }
        Command::Ingest { manifest, on_oob, name } => {
            let opts = LoadOptions { on_oob: on_oob.parse()? };
            let path = std::fs::canonicalize(manifest).map_err(|e| SalError::io(manifest, e))?;
            let mut ds = load_dataset_with(&path, &opts)?;
            if let Some(n) = name {
                ds.name = n.clone();
            }
            ds.validate()?;
            let m = save_dataset(&ds, &data_dir(&cli.out).join(&ds.name))?;
            println!("{}: {} stimuli, {} fixations -> {}", ds.name, ds.stimuli.len(), ds.fixations.len(), m.display());
        }
        Command::FitCenterbias { dataset, variant } => {
            let ds = find_dataset(cli, &cfg, dataset)?;
            let mut fit_cfg = cfg.harness.centerbias.clone();
            if let Some(v) = variant {
                fit_cfg.variant = serde_json::from_value::<CenterBiasVariant>(serde_json::Value::String(v.clone()))
                    .map_err(|_| SalError::Config(format!("unknown center bias variant {v}")))?;
            }
            let report = fit_centerbias(&ds, &fit_cfg)?;
            if report.fallback {
                log::warn!("{dataset}: requested variant could not be fit, used a Gaussian");
            }
            let path = cli.out.join("centerbias").join(format!("{dataset}.json"));
            report.model.save(&path)?;
            println!("{dataset}: LOO log-likelihood {:.6} nats/fix -> {}", report.objective, path.display());
        }
        Command::FitGoldstandard { dataset } => {
            let exp = experiment(cli, &cfg)?;
            let t = exp.dataset_index(dataset)?;
            let ds = &exp.data[t].dataset;
            let gold = fit_gold_standard(ds, &GoldStandardConfig::default())?;
            let dir = cli.out.join("goldstandard");
            gold.save(&dir.join(format!("{dataset}.json")))?;
            let all: Vec<usize> = (0..ds.stimuli.len()).collect();
            let baseline: &dyn SaliencyPredictor = exp.baseline(t);
            let ev = evaluate(&gold, Some(baseline), ds, &all, &cfg.harness.eval)?;
            ev.save(&dir, &format!("{dataset}-eval"))?;
            println!(
                "{dataset}: gold standard LL {:.4} bits/fix, IG {:.4} bits/fix",
                ev.summary.ll,
                ev.summary.ig.unwrap_or(f64::NAN)
            );
        }
        Command::Train { datasets, naive, name } => {
            let exp = experiment(cli, &cfg)?;
            let members: Vec<usize> = match datasets {
                Some(list) => list.split(',').map(|n| exp.dataset_index(n.trim())).collect::<Result<_>>()?,
                None => (0..exp.data.len()).collect(),
            };
            let default_name = {
                let names: Vec<&str> = members.iter().map(|&i| exp.data[i].dataset.name.as_str()).collect();
                format!("train-{}{}", names.join("+"), if *naive { "-naive" } else { "" })
            };
            let stage = exp.train_stage(name.as_deref().unwrap_or(&default_name), &members, *naive)?;
            println!("{} -> {} (checkpoint {})", stage.name, stage.dir.display(), stage.hash);
        }
        Command::Adapt { stage, target, n, groups } => {
            let exp = experiment(cli, &cfg)?;
            let parent = find_stage(&cli.out, stage)?;
            let t = exp.dataset_index(target)?;
            let trainable = match groups {
                Some(g) => Trainable::BiasSubset(
                    g.split(',').map(|s| s.trim().parse::<BiasGroup>()).collect::<Result<BTreeSet<_>>>()?,
                ),
                None => cfg.harness.adapt.train.trainable.clone(),
            };
            let seed = cli.seed.unwrap_or(cfg.harness.adapt.subset_seed);
            let a = exp.adapt_stage(&parent, t, *n, seed, &trainable)?;
            let b = a.bias();
            let ig = exp.ig(&a.stage.state.readout, b, t)?;
            println!(
                "{target}: IG {ig:.4} bits/fix, sigma {:.4} dva, priority {:.4}, cb weight {:.4} -> {}",
                b.sigma_dva(),
                b.priority(),
                b.cb_weight,
                a.stage.dir.display()
            );
        }
        Command::Eval { stage, dataset, bias, all } => {
            let exp = experiment(cli, &cfg)?;
            let st = find_stage(&cli.out, stage)?;
            let t = exp.dataset_index(dataset)?;
            let d = &exp.data[t];
            let source = match bias.as_str() {
                "own" => BiasSource::Own,
                "averaged" => BiasSource::Averaged,
                other => BiasSource::Foreign(other.to_string()),
            };
            let params = match (&source, st.state.biases.len()) {
                (BiasSource::Own, 1) if !st.state.biases.contains_key(dataset) => {
                    st.state.biases.values().next().cloned().expect("one bias set")
                }
                _ => resolve_bias(&st.state, dataset, &source)?,
            };
            let indices = if *all { (0..d.dataset.stimuli.len()).collect() } else { d.split.validation_indices() };
            let model = salbias::model::BiasedModel::new(&st.state.readout, &params, &d.bank);
            let baseline: &dyn SaliencyPredictor = exp.baseline(t);
            let ev = evaluate(&model, Some(baseline), &d.dataset, &indices, &cfg.harness.eval)?;
            let dir = cli.out.join("eval");
            ev.save(&dir, &format!("{}-{dataset}-{bias}", st.name))?;
            let s = &ev.summary;
            println!(
                "{} on {dataset} ({bias} bias, {} images): LL {:.4} IG {:.4} AUC {:.4} sAUC {:.4} NSS {:.4} CC {:.4} KLDiv {:.4} SIM {:.4}",
                st.name,
                s.images,
                s.ll,
                s.ig.unwrap_or(f64::NAN),
                s.auc,
                s.sauc.unwrap_or(f64::NAN),
                s.nss,
                s.cc,
                s.kldiv,
                s.sim
            );
        }
        Command::Loo => {
            let exp = experiment(cli, &cfg)?;
            let four = exp.run_four_setups()?;
            let naive = exp.joint_naive()?;
            let (gaps, adapted) = exp.compute_gaps(&four)?;
            write_report(&cli.out, "gap_report.csv", &gaps.to_csv())?;
            write_report(&cli.out, "bias_parameters.csv", &bias_parameters_csv(&four.joint, &adapted))?;
            write_report(&cli.out, "joint_vs_naive.csv", &joint_vs_naive_csv(&exp.joint_vs_naive(&four.joint, &naive)?))?;
            write_report(&cli.out, "generalization.csv", &generalization_csv(&exp.generalization_strategies(&four)?))?;
            for row in gaps.rows.iter().chain(std::iter::once(&gaps.mean())) {
                println!(
                    "{:<12} full {:.4} loo-generalized {:.4} adapted {:.4} closed {:.1}%",
                    row.dataset,
                    row.ig_full,
                    row.ig_loo_generalized,
                    row.ig_loo_adapted,
                    100.0 * row.fraction_closed_by_adaptation()
                );
            }
        }
        Command::Ablate { dataset } => {
            let exp = experiment(cli, &cfg)?;
            let mut rows = Vec::new();
            for t in targets(&exp, dataset)? {
                let loo = exp.loo_stage(t, false)?;
                rows.extend(exp.bias_ablation_ladder(&loo, t, &cfg.harness.ablation_order)?);
            }
            write_report(&cli.out, "ablation.csv", &ladder_csv(&rows))?;
        }
        Command::Lowdata { dataset } => {
            let exp = experiment(cli, &cfg)?;
            let mut rows = Vec::new();
            for t in targets(&exp, dataset)? {
                let loo = exp.loo_stage(t, false)?;
                let mut ns = cfg.harness.low_data_ns.clone();
                if cfg.harness.low_data_full {
                    ns.push(exp.data[t].split.train_indices().len());
                }
                rows.extend(exp.low_data_curve(&loo, t, &ns, &cfg.harness.low_data_seeds)?);
            }
            write_report(&cli.out, "lowdata.csv", &low_data_csv(&rows))?;
        }
        Command::Sensitivity => {
            let exp = experiment(cli, &cfg)?;
            let joint = exp.joint_stage()?;
            let m = exp.sensitivity_matrix(&joint)?;
            write_report(&cli.out, "sensitivity.csv", &m.to_csv())?;
            println!("diagonal dominant: {}", m.diagonal_dominant());
        }
        Command::Report => {
            let exp = experiment(cli, &cfg)?;
            let r = exp.run_all()?;
            for f in &r.files {
                println!("wrote {}", f.display());
            }
            let summary = exp.out.join("reports").join("summary.txt");
            let text = std::fs::read_to_string(&summary).map_err(|e| SalError::io(&summary, e))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
