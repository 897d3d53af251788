//! Central finite-difference checks of every hand-written adjoint.

use salbias::centerbias::CenterBiasModel;
use salbias::dataset::{synth_dataset, SynthSpec};
use salbias::grid::{
    bilinear_resize, bilinear_resize_adjoint, blur_sigma_adjoint, gaussian_blur, gaussian_blur_adjoint, softmax_nll,
    softmax_nll_grad, Grid, GridKind, GridStack,
};
use salbias::model::{backward, forward, output_geometry, CenterBiasCache, DatasetBiasParams, FeatureBank, ReadoutParams, ScaleSpec};
use salbias::rng::SeededRng;
use salbias::train::{Objective, TrainSet, TrainState};
use std::collections::BTreeMap;

pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for gradients that are zero up to rounding.
pub const ABS_FLOOR: f64 = 1e-6;
const H: f64 = 1e-3;

pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(ABS_FLOOR)
}

/// Worst relative error of one component over all seeds.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub worst: f64,
}

impl GradCheck {
    fn new(name: &'static str) -> Self {
        GradCheck {
            name,
            instances: 0,
            checked: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, fd: f64) {
        let e = rel_err(analytic, fd);
        self.worst = if e.is_nan() { f64::INFINITY } else { self.worst.max(e) };
        self.checked += 1;
    }

    pub fn pass(&self) -> bool {
        self.worst < REL_TOL && self.checked > 0
    }
}

/// Fourth-order central stencil.
fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (8.0 * (f(x + H) - f(x - H)) - (f(x + 2.0 * H) - f(x - 2.0 * H))) / (12.0 * H)
}

fn random_grid(rng: &mut SeededRng, h: usize, w: usize) -> Grid {
    Grid::from_fn(h, w, GridKind::Feature, |_, _| rng.normal())
}

fn dot(a: &Grid, b: &Grid) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

/// Sigma in pixels away from the points where a kernel tap switches on.
fn smooth_sigma(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    loop {
        let s = rng.uniform_range(lo, hi);
        let f = (3.0 * s).fract();
        if f > 0.05 && f < 0.95 {
            return s;
        }
    }
}

pub fn check_resize(seed: u64) -> GradCheck {
    let mut c = GradCheck::new("bilinear resize adjoint");
    let mut rng = SeededRng::derived(seed, 11);
    let (ih, iw) = (2 + rng.below(6), 2 + rng.below(6));
    let (oh, ow) = (2 + rng.below(12), 2 + rng.below(12));
    let x = random_grid(&mut rng, ih, iw);
    let u = random_grid(&mut rng, oh, ow);
    let adj = bilinear_resize_adjoint(&u, ih, iw);
    for i in 0..x.len() {
        let fd = central(
            |v| {
                let mut y = x.clone();
                y.values_mut()[i] = v;
                dot(&u, &bilinear_resize(&y, oh, ow))
            },
            x.values()[i],
        );
        c.record(adj.values()[i], fd);
    }
    c.instances = 1;
    c
}

pub fn check_blur(seed: u64) -> (GradCheck, GradCheck) {
    let mut cx = GradCheck::new("gaussian blur adjoint");
    let mut cs = GradCheck::new("blur sigma adjoint");
    let mut rng = SeededRng::derived(seed, 12);
    let (h, w) = (3 + rng.below(10), 3 + rng.below(10));
    let sigma = smooth_sigma(&mut rng, 0.3, 4.0);
    let x = random_grid(&mut rng, h, w);
    let u = random_grid(&mut rng, h, w);
    let adj = gaussian_blur_adjoint(&u, sigma);
    for i in 0..x.len() {
        let fd = central(
            |v| {
                let mut y = x.clone();
                y.values_mut()[i] = v;
                dot(&u, &gaussian_blur(&y, sigma))
            },
            x.values()[i],
        );
        cx.record(adj.values()[i], fd);
    }
    let fd = central(|s| dot(&u, &gaussian_blur(&x, s)), sigma);
    cs.record(blur_sigma_adjoint(&x, &u, sigma), fd);
    cx.instances = 1;
    cs.instances = 1;
    (cx, cs)
}

pub fn check_softmax_nll(seed: u64) -> GradCheck {
    let mut c = GradCheck::new("softmax NLL gradient");
    let mut rng = SeededRng::derived(seed, 13);
    let (h, w) = (2 + rng.below(8), 2 + rng.below(8));
    let logits = Grid::from_fn(h, w, GridKind::Logits, |_, _| 3.0 * rng.normal());
    let cells: Vec<(usize, f64)> = (0..1 + rng.below(6)).map(|_| (rng.below(h * w), 1.0 + rng.below(3) as f64)).collect();
    let g = softmax_nll_grad(&logits, &cells).unwrap();
    for i in 0..logits.len() {
        let fd = central(
            |v| {
                let mut l = logits.clone();
                l.values_mut()[i] = v;
                softmax_nll(&l, &cells).unwrap()
            },
            logits.values()[i],
        );
        c.record(g.values()[i], fd);
    }
    c.instances = 1;
    c
}

fn random_readout(rng: &mut SeededRng, channels: usize, seed: u64) -> ReadoutParams {
    let mut r = ReadoutParams::init(channels, seed);
    let flat: Vec<f64> = r.to_flat().iter().map(|v| v + 0.3 * rng.normal()).collect();
    r.set_flat(&flat);
    r
}

fn random_stack(rng: &mut SeededRng, c: usize, h: usize, w: usize) -> GridStack {
    GridStack::new(c, h, w, (0..c * h * w).map(|_| rng.normal()).collect()).unwrap()
}

pub fn check_readout(seed: u64) -> (GradCheck, GradCheck) {
    let mut cp = GradCheck::new("readout parameter gradient");
    let mut cf = GradCheck::new("readout input adjoint");
    let mut rng = SeededRng::derived(seed, 14);
    let channels = 2 + rng.below(5);
    let (h, w) = (2 + rng.below(4), 2 + rng.below(4));
    let r = random_readout(&mut rng, channels, seed);
    let f = random_stack(&mut rng, channels, h, w);
    let u = random_grid(&mut rng, h, w);
    let (_, trace) = r.forward_traced(&f).unwrap();
    let (dp, df) = r.backward(&trace, &u);
    let theta = r.to_flat();
    for i in 0..theta.len() {
        let fd = central(
            |v| {
                let mut t = theta.clone();
                t[i] = v;
                let mut q = r.clone();
                q.set_flat(&t);
                dot(&u, &q.forward(&f).unwrap())
            },
            theta[i],
        );
        cp.record(dp[i], fd);
    }
    for i in 0..f.values().len() {
        let fd = central(
            |v| {
                let mut g = f.clone();
                g.values_mut()[i] = v;
                dot(&u, &r.forward(&g).unwrap())
            },
            f.values()[i],
        );
        cf.record(df.values()[i], fd);
    }
    cp.instances = 1;
    cf.instances = 1;
    (cp, cf)
}

fn random_bias(rng: &mut SeededRng, n_scales: usize, grid_px_per_dva: f64) -> DatasetBiasParams {
    let cb = CenterBiasModel::gaussian("test", rng.uniform_range(0.1, 0.4), rng.uniform_range(0.1, 0.4), 0.1);
    let mut b = DatasetBiasParams::init(n_scales, cb);
    b.scale_logits = (0..n_scales).map(|_| rng.normal()).collect();
    b.log_priority = rng.uniform_range(-0.5, 1.5);
    b.log_sigma = (smooth_sigma(rng, 0.5, 6.0) / grid_px_per_dva).ln();
    b.cb_weight = rng.uniform_range(0.2, 1.5);
    b
}

/// Model head: readout, resize, priority, blur, center bias weight, softmax NLL.
pub fn check_head(seed: u64) -> (GradCheck, GradCheck) {
    let mut cr = GradCheck::new("model head: readout");
    let mut cb = GradCheck::new("model head: bias scalars");
    let mut rng = SeededRng::derived(seed, 15);
    let spec = SynthSpec {
        images: 1,
        width: 24 + 8 * rng.below(4),
        height: 24 + 8 * rng.below(4),
        subjects: 2,
        fixations_per_subject: 3,
        ..Default::default()
    };
    let o = synth_dataset(&spec, seed).unwrap();
    let meta = &o.dataset.stimuli[0];
    let geom = output_geometry(meta);
    let bank = FeatureBank::build(&o.provider(), &o.dataset, &spec.scales).unwrap();
    let stacks = bank.get(&meta.stimulus_id).unwrap();
    let readout = random_readout(&mut rng, bank.channels, seed);
    let bias = random_bias(&mut rng, spec.scales.len(), geom.grid_px_per_dva());
    let cache = CenterBiasCache::new(bias.centerbias.clone());
    let log_cb = cache.log_density(&geom);
    let cells: Vec<(usize, f64)> = o.dataset.fixations.iter().map(|f| (geom.cell_of(f.x, f.y), 1.0)).collect();
    let loss = |r: &ReadoutParams, b: &DatasetBiasParams| {
        let t = forward(stacks, meta, b, r, log_cb.clone()).unwrap();
        softmax_nll(&t.logits, &cells).unwrap()
    };
    let trace = forward(stacks, meta, &bias, &readout, log_cb.clone()).unwrap();
    let dl = softmax_nll_grad(&trace.logits, &cells).unwrap();
    let g = backward(&trace, stacks, &bias, &readout, &dl);
    let theta = readout.to_flat();
    for i in 0..theta.len() {
        let fd = central(
            |v| {
                let mut t = theta.clone();
                t[i] = v;
                let mut q = readout.clone();
                q.set_flat(&t);
                loss(&q, &bias)
            },
            theta[i],
        );
        cr.record(g.readout[i], fd);
    }
    let bf = bias.to_flat();
    for i in 0..bf.len() {
        let fd = central(
            |v| {
                let mut t = bf.clone();
                t[i] = v;
                let mut q = bias.clone();
                q.set_flat(&t);
                loss(&readout, &q)
            },
            bf[i],
        );
        cb.record(g.bias[i], fd);
    }
    cr.instances = 1;
    cb.instances = 1;
    (cr, cb)
}

/// Batched training objective over two datasets with separate bias sets.
pub fn check_objective(seed: u64) -> GradCheck {
    let mut c = GradCheck::new("training objective (all parameters)");
    let mut rng = SeededRng::derived(seed, 16);
    let scales = vec![ScaleSpec::absolute(10.0), ScaleSpec::relative(24.0)];
    let mut data = Vec::new();
    for k in 0..2u64 {
        let spec = SynthSpec {
            name: format!("d{k}"),
            images: 2,
            width: 32,
            height: 24,
            subjects: 2,
            fixations_per_subject: 4,
            scales: scales.clone(),
            scale_weights: vec![0.5, 0.5],
            ..Default::default()
        };
        let o = synth_dataset(&spec, seed * 2 + k).unwrap();
        let bank = FeatureBank::build(&o.provider(), &o.dataset, &scales).unwrap();
        data.push((o.dataset, bank));
    }
    let grid_ppd = output_geometry(&data[0].0.stimuli[0]).grid_px_per_dva();
    let mut biases = BTreeMap::new();
    for (ds, _) in &data {
        biases.insert(ds.name.clone(), random_bias(&mut rng, scales.len(), grid_ppd));
    }
    let readout = random_readout(&mut rng, data[0].1.channels, seed);
    let state = TrainState::new(scales.clone(), "builtin_lowlevel".to_string(), readout, biases);
    let sets: Vec<TrainSet> = data
        .iter()
        .map(|(ds, bank)| TrainSet {
            dataset: ds,
            bank,
            train: vec![0, 1],
            validation: Vec::new(),
            bias_key: ds.name.clone(),
        })
        .collect();
    let obj = Objective::new(&sets, &state).unwrap();
    let batch = [(0, 0), (1, 1), (0, 1)];
    let (_, grad) = obj.loss_and_grad(&state, &batch).unwrap();
    let theta = state.flat();
    for i in 0..theta.len() {
        let fd = central(
            |v| {
                let mut t = theta.clone();
                t[i] = v;
                let mut s = state.clone();
                s.set_flat(&t);
                obj.loss_and_grad(&s, &batch).unwrap().0
            },
            theta[i],
        );
        c.record(grad[i], fd);
    }
    c.instances = 1;
    c
}

fn merge(into: &mut Vec<GradCheck>, c: GradCheck) {
    match into.iter_mut().find(|x| x.name == c.name) {
        Some(x) => {
            x.instances += c.instances;
            x.checked += c.checked;
            x.worst = x.worst.max(c.worst);
        }
        None => into.push(c),
    }
}

/// Runs every component check on `seeds` random instances.
pub fn gradient_suite(seeds: u64) -> Vec<GradCheck> {
    let mut out = Vec::new();
    for s in 0..seeds {
        merge(&mut out, check_resize(s));
        let (a, b) = check_blur(s);
        merge(&mut out, a);
        merge(&mut out, b);
        merge(&mut out, check_softmax_nll(s));
        let (a, b) = check_readout(s);
        merge(&mut out, a);
        merge(&mut out, b);
        let (a, b) = check_head(s);
        merge(&mut out, a);
        merge(&mut out, b);
        merge(&mut out, check_objective(s));
    }
    out
}
