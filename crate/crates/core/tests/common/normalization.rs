//! Randomized checks that every predictor and center bias render is a
//! normalized distribution.

use super::Check;
use salbias::centerbias::{
    average_centerbias, fit_centerbias, fit_gold_standard, CenterBiasFitConfig, CenterBiasKind, CenterBiasModel,
    CenterBiasPredictor, CenterBiasVariant, GoldStandardConfig, MixtureCenterBias, MixtureWeights,
};
use salbias::dataset::{synth_dataset, FixationDataset, PlantedCenterBias, SynthSpec};
use salbias::grid::{logsumexp, GridGeometry};
use salbias::metrics::{MixturePredictor, SaliencyPredictor, UniformPredictor};
use salbias::model::{BiasedModel, DatasetBiasParams, FeatureBank, ReadoutParams, ScaleSpec, BUILTIN_CHANNELS};
use salbias::rng::SeededRng;

#[derive(Debug, Default, Clone, Copy)]
pub struct NormStats {
    pub configs: usize,
    pub predictions: usize,
    pub renders: usize,
    /// Largest `|sum - 1|` over predicted and rendered probabilities.
    pub worst_sum: f64,
    /// Largest `|logsumexp|` over rendered log densities.
    pub worst_lse: f64,
}

impl NormStats {
    fn sum(&mut self, s: f64) {
        self.worst_sum = if s.is_finite() { self.worst_sum.max((s - 1.0).abs()) } else { f64::INFINITY };
    }
    fn lse(&mut self, v: &[f64]) {
        let l = logsumexp(v);
        self.worst_lse = if l.is_finite() { self.worst_lse.max(l.abs()) } else { f64::INFINITY };
        self.renders += 1;
    }
}

fn random_scales(rng: &mut SeededRng) -> Vec<ScaleSpec> {
    let n = 1 + rng.below(4);
    (0..n)
        .map(|_| {
            if rng.uniform() < 0.5 {
                ScaleSpec::absolute(rng.uniform_range(2.0, 30.0))
            } else {
                ScaleSpec::relative(rng.uniform_range(12.0, 64.0))
            }
        })
        .collect()
}

fn random_spec(rng: &mut SeededRng) -> SynthSpec {
    let scales = random_scales(rng);
    SynthSpec {
        name: "norm".into(),
        images: 3,
        width: 16 + rng.below(81),
        height: 16 + rng.below(81),
        px_per_dva: rng.uniform_range(5.0, 40.0),
        subjects: 3,
        fixations_per_subject: 4,
        color: rng.uniform() < 0.5,
        scale_weights: scales.iter().map(|_| rng.uniform_range(0.1, 1.0)).collect(),
        scales,
        priority: rng.uniform_range(0.5, 20.0),
        sigma_dva: rng.uniform_range(0.1, 2.0),
        cb_weight: rng.uniform_range(0.0, 2.0),
        centerbias: PlantedCenterBias {
            std_x: rng.uniform_range(0.05, 1.0),
            std_y: rng.uniform_range(0.05, 1.0),
            uniform_weight: rng.uniform(),
        },
        readout_seed: rng.next_u64(),
    }
}

fn normalized_points(ds: &FixationDataset) -> (Vec<[f64; 2]>, Vec<u32>, Vec<String>) {
    let index = ds.stimulus_index();
    let mut pts = Vec::new();
    let mut src = Vec::new();
    for f in &ds.fixations {
        let i = index[f.stimulus_id.as_str()];
        let s = &ds.stimuli[i];
        pts.push([f.x / s.width_px as f64, f.y / s.height_px as f64]);
        src.push(i as u32);
    }
    (pts, src, ds.stimuli.iter().map(|s| s.stimulus_id.clone()).collect())
}

fn random_weights(rng: &mut SeededRng, variant: CenterBiasVariant) -> MixtureWeights {
    let mut w = [rng.uniform(), rng.uniform(), rng.uniform() + 1e-3];
    if !variant.uses_kde() {
        w[0] = 0.0;
    }
    if !variant.uses_gaussian() {
        w[1] = 0.0;
    }
    let z: f64 = w.iter().sum();
    MixtureWeights::from_array(w.map(|v| v / z))
}

fn random_centerbias(rng: &mut SeededRng, ds: &FixationDataset) -> CenterBiasModel {
    let variant = [
        CenterBiasVariant::KdeUniform,
        CenterBiasVariant::GaussianUniform,
        CenterBiasVariant::KdeGaussianUniform,
    ][rng.below(3)];
    let (support, support_source, sources) = if variant.uses_kde() {
        normalized_points(ds)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    CenterBiasModel {
        fitted_on: ds.name.clone(),
        kind: CenterBiasKind::Mixture(MixtureCenterBias {
            variant,
            bandwidth_dva: rng.uniform_range(0.05, 8.0),
            std_x: rng.uniform_range(0.02, 1.5),
            std_y: rng.uniform_range(0.02, 1.5),
            weights: random_weights(rng, variant),
            support,
            support_source,
            sources,
        }),
    }
}

fn check_renders(stats: &mut NormStats, cb: &CenterBiasModel, ds: &FixationDataset, downscale: usize) {
    for s in &ds.stimuli {
        let geom = GridGeometry::downscaled(s.width_px, s.height_px, s.px_per_dva, downscale);
        stats.sum(cb.render_probability(&geom).iter().sum());
        stats.lse(cb.render(&geom).values());
        stats.sum(cb.render_probability_excluding(&geom, Some(&s.stimulus_id)).iter().sum());
        stats.lse(cb.render_excluding(&geom, Some(&s.stimulus_id)).values());
    }
}

fn check_predictor(stats: &mut NormStats, p: &dyn SaliencyPredictor, ds: &FixationDataset) {
    for i in 0..ds.stimuli.len() {
        let (g, _) = p.predict(ds, i).expect("prediction");
        stats.sum(g.sum());
        stats.predictions += 1;
    }
}

/// Runs `configs` randomized configurations. Every tenth one also fits a
/// center bias and a gold standard model.
pub fn normalization_suite(configs: u64) -> NormStats {
    let mut stats = NormStats::default();
    for c in 0..configs {
        let mut rng = SeededRng::new(5000 + c);
        let spec = random_spec(&mut rng);
        let o = synth_dataset(&spec, c).expect("synthetic dataset");
        let ds = &o.dataset;
        let bank = FeatureBank::build(&o.provider(), ds, &spec.scales).expect("features");

        let cb_a = random_centerbias(&mut rng, ds);
        let cb_b = random_centerbias(&mut rng, ds);
        let averaged = average_centerbias(&[cb_a.clone(), cb_b.clone()]).unwrap();
        let downscale = 1 + rng.below(3);
        for cb in [&cb_a, &cb_b, &averaged] {
            check_renders(&mut stats, cb, ds, downscale);
        }

        let mut readout = ReadoutParams::init(BUILTIN_CHANNELS, rng.next_u64());
        let mut flat = readout.to_flat();
        flat.iter_mut().for_each(|v| *v += 0.3 * rng.normal());
        readout.set_flat(&flat);
        let mut bias = DatasetBiasParams::init(spec.scales.len(), averaged.clone());
        bias.scale_logits = spec.scales.iter().map(|_| 2.0 * rng.normal()).collect();
        bias.log_priority = rng.uniform_range(-3.0, 4.0);
        bias.log_sigma = rng.uniform_range(0.03, 4.0).ln();
        bias.cb_weight = rng.uniform_range(-2.0, 3.0);
        let model = BiasedModel::new(&readout, &bias, &bank);
        check_predictor(&mut stats, &model, ds);

        let cbp = CenterBiasPredictor {
            model: cb_a.clone(),
            downscale,
            leave_one_out: true,
        };
        let uniform = UniformPredictor { downscale };
        check_predictor(&mut stats, &cbp, ds);
        check_predictor(&mut stats, &uniform, ds);
        check_predictor(
            &mut stats,
            &MixturePredictor {
                members: vec![&model, &model],
            },
            ds,
        );

        if c % 10 == 0 {
            let cfg = CenterBiasFitConfig {
                variant: CenterBiasVariant::KdeGaussianUniform,
                bandwidths_dva: vec![0.3, 1.0, 3.0],
                refine: false,
                ..Default::default()
            };
            let fitted = fit_centerbias(ds, &cfg).unwrap().model;
            check_renders(&mut stats, &fitted, ds, 2);
            let gold = fit_gold_standard(
                ds,
                &GoldStandardConfig {
                    bandwidths_dva: vec![0.3, 1.0, 3.0],
                    dataset_centerbias: Some(fitted),
                    ..Default::default()
                },
            )
            .unwrap();
            check_predictor(&mut stats, &gold, ds);
        }
        stats.configs += 1;
    }
    stats
}

pub fn normalization_checks(configs: u64) -> Vec<Check> {
    let s = normalization_suite(configs);
    vec![
        Check::new(
            "predictions sum to 1",
            s.worst_sum <= 1e-9 && s.configs >= 100,
            format!(
                "{} configs, {} predictions, max |sum-1| {:.2e} <= 1e-9",
                s.configs, s.predictions, s.worst_sum
            ),
        ),
        Check::new(
            "center bias log renders",
            s.worst_lse <= 1e-6 && s.configs >= 100,
            format!("{} renders, max |logsumexp| {:.2e} <= 1e-6", s.renders, s.worst_lse),
        ),
    ]
}
