//! Maximum-likelihood fitting of center bias hyperparameters.
//!
//! KDE bandwidths and mixture weights are chosen by leave-one-image-out
//! likelihood: each image's fixations are scored under a KDE built from the
//! fixations of all other images. Fitting happens on a half-resolution grid
//! by default.

use super::kde::{axis_gaussian, KernelTables};
use super::{normalized_support, CenterBiasKind, CenterBiasModel, CenterBiasVariant, MixtureCenterBias, MixtureWeights};
use crate::dataset::FixationDataset;
use crate::error::{data_err, Result};
use crate::grid::GridGeometry;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CenterBiasFitConfig {
    pub variant: CenterBiasVariant,
    pub downscale: usize,
    pub bandwidths_dva: Vec<f64>,
    /// Resolution of the initial simplex grid over mixture weights.
    pub weight_step: f64,
    /// Golden-section refinement of the best grid bandwidth.
    pub refine: bool,
}

impl Default for CenterBiasFitConfig {
    fn default() -> Self {
        CenterBiasFitConfig {
            variant: CenterBiasVariant::KdeUniform,
            downscale: 2,
            bandwidths_dva: log_grid(0.1, 10.0, 20),
            weight_step: 0.1,
            refine: true,
        }
    }
}

impl CenterBiasFitConfig {
    pub fn with_variant(variant: CenterBiasVariant) -> Self {
        CenterBiasFitConfig {
            variant,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: CenterBiasModel,
    /// Mean log-likelihood per fixation (nats per native pixel).
    pub objective: f64,
    /// Objective at each grid bandwidth (empty for the Gaussian variant).
    pub bandwidth_curve: Vec<(f64, f64)>,
    /// True if the requested variant could not be fit and a Gaussian was used.
    pub fallback: bool,
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Mean of `ln(w . v)` over per-fixation component probabilities.
pub fn mixture_objective(components: &[[f64; 3]], w: [f64; 3]) -> f64 {
    if components.is_empty() {
        return 0.0;
    }
    let s: f64 = components
        .iter()
        .map(|v| (w[0] * v[0] + w[1] * v[1] + w[2] * v[2]).max(1e-300).ln())
        .sum();
    s / components.len() as f64
}

/// Maximizes [`mixture_objective`] over the simplex restricted to the active
/// components: a grid of step `step` followed by pairwise mass transfers.
pub fn optimize_weights(components: &[[f64; 3]], active: [bool; 3], step: f64) -> ([f64; 3], f64) {
    let idx: Vec<usize> = (0..3).filter(|&k| active[k]).collect();
    assert!(!idx.is_empty(), "at least one mixture component must be active");
    let n = (1.0 / step).round().max(1.0) as usize;
    let mut best = ([0.0; 3], f64::NEG_INFINITY);
    let mut consider = |w: [f64; 3]| {
        let v = mixture_objective(components, w);
        if v > best.1 {
            best = (w, v);
        }
    };
    match idx.len() {
        1 => {
            let mut w = [0.0; 3];
            w[idx[0]] = 1.0;
            consider(w);
        }
        2 => {
            for i in 0..=n {
                let mut w = [0.0; 3];
                w[idx[0]] = i as f64 / n as f64;
                w[idx[1]] = 1.0 - w[idx[0]];
                consider(w);
            }
        }
        _ => {
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let a = i as f64 / n as f64;
                    let b = j as f64 / n as f64;
                    consider([a, b, (1.0 - a - b).max(0.0)]);
                }
            }
        }
    }
    let (mut w, mut val) = best;
    let mut delta = step / 2.0;
    while delta > 1e-5 {
        let mut improved = false;
        for &from in &idx {
            for &to in &idx {
                if from == to || w[from] <= 0.0 {
                    continue;
                }
                let d = delta.min(w[from]);
                let mut cand = w;
                cand[from] -= d;
                cand[to] += d;
                let v = mixture_objective(components, cand);
                if v > val {
                    w = cand;
                    val = v;
                    improved = true;
                }
            }
        }
        if !improved {
            delta /= 2.0;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (w, val)
}

/// Precomputed per-fixation geometry used by the LOO objective.
struct FitData {
    support: Vec<[f64; 2]>,
    sources: Vec<String>,
    /// Stimuli sharing one fitting geometry.
    groups: Vec<(GridGeometry, Vec<usize>)>,
    per_stim: Vec<Vec<usize>>,
    /// Grid cell of each fixation on its stimulus geometry.
    cell: Vec<usize>,
    /// Grid cell to native pixel log correction per fixation.
    correction: Vec<f64>,
    stim_of: Vec<usize>,
    geom_of: Vec<GridGeometry>,
}

impl FitData {
    fn new(ds: &FixationDataset, downscale: usize) -> Self {
        let (support, stim_of, sources) = normalized_support(ds);
        let stim_of: Vec<usize> = stim_of.into_iter().map(|s| s as usize).collect();
        let geoms: Vec<GridGeometry> = ds
            .stimuli
            .iter()
            .map(|s| GridGeometry::downscaled(s.width_px, s.height_px, s.px_per_dva, downscale))
            .collect();
        let mut grouped: BTreeMap<(usize, usize, u64, usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, g) in geoms.iter().enumerate() {
            grouped.entry(g.key()).or_default().push(i);
        }
        let groups = grouped.into_values().map(|v| (geoms[v[0]], v)).collect();
        let mut per_stim = vec![Vec::new(); ds.stimuli.len()];
        let mut cell = Vec::with_capacity(ds.len());
        let mut correction = Vec::with_capacity(ds.len());
        for (j, f) in ds.fixations.iter().enumerate() {
            let g = &geoms[stim_of[j]];
            per_stim[stim_of[j]].push(j);
            cell.push(g.cell_of(f.x, f.y));
            correction.push(g.log_cell_to_pixel());
        }
        FitData {
            support,
            sources,
            groups,
            per_stim,
            cell,
            correction,
            stim_of,
            geom_of: geoms,
        }
    }

    fn mean_correction(&self) -> f64 {
        self.correction.iter().sum::<f64>() / self.correction.len().max(1) as f64
    }

    /// Leave-one-image-out KDE probability of the cell of every fixation.
    fn kde_loo(&self, bandwidth_dva: f64) -> Vec<f64> {
        let n = self.support.len();
        let mut out = vec![0.0; n];
        for (geom, stims) in &self.groups {
            let tables = KernelTables::new(geom, bandwidth_dva, &self.support);
            let total = tables.surface(0..n);
            for &i in stims {
                let own = &self.per_stim[i];
                let rest = n - own.len();
                for &j in own {
                    let c = self.cell[j];
                    if rest == 0 {
                        out[j] = 1.0 / geom.cells() as f64;
                        continue;
                    }
                    let own_mass: f64 = own.iter().map(|&k| tables.value(k, c)).sum();
                    out[j] = (total[c] - own_mass).max(0.0) / rest as f64;
                }
            }
        }
        out
    }

    fn gaussian(&self, std_x: f64, std_y: f64) -> Vec<f64> {
        let mut axes: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut out = Vec::with_capacity(self.cell.len());
        for (j, &c) in self.cell.iter().enumerate() {
            let g = &self.geom_of[self.stim_of[j]];
            let (gx, gy) = axes
                .entry((g.grid_w, g.grid_h))
                .or_insert_with(|| (axis_gaussian(g.grid_w, 0.5, std_x), axis_gaussian(g.grid_h, 0.5, std_y)));
            out.push(gx[c % g.grid_w] * gy[c / g.grid_w]);
        }
        out
    }

    fn components(&self, kde: Option<&[f64]>, gauss: Option<&[f64]>) -> Vec<[f64; 3]> {
        (0..self.cell.len())
            .map(|j| {
                let g = &self.geom_of[self.stim_of[j]];
                [
                    kde.map_or(0.0, |k| k[j]),
                    gauss.map_or(0.0, |k| k[j]),
                    1.0 / g.cells() as f64,
                ]
            })
            .collect()
    }

    /// Root mean square distance of fixations from the image center per axis.
    fn central_std(&self) -> (f64, f64) {
        let n = self.support.len().max(1) as f64;
        let sx = (self.support.iter().map(|p| (p[0] - 0.5).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (self.support.iter().map(|p| (p[1] - 0.5).powi(2)).sum::<f64>() / n).sqrt();
        (sx.clamp(0.01, 2.0), sy.clamp(0.01, 2.0))
    }
}

fn active_for(variant: CenterBiasVariant) -> [bool; 3] {
    [variant.uses_kde(), variant.uses_gaussian(), true]
}

/// Mean leave-one-image-out log-likelihood (nats per native pixel per
/// fixation) of a center bias with fixed hyperparameters.
pub fn loo_objective(
    ds: &FixationDataset,
    bandwidth_dva: f64,
    std: (f64, f64),
    weights: MixtureWeights,
    downscale: usize,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(data_err!("dataset {} has no fixations", ds.name));
    }
    let data = FitData::new(ds, downscale);
    let kde = data.kde_loo(bandwidth_dva);
    let gauss = data.gaussian(std.0, std.1);
    let comps = data.components(Some(&kde), Some(&gauss));
    Ok(mixture_objective(&comps, weights.as_array()) + data.mean_correction())
}

/// Fits a center bias of the configured variant to `ds`.
pub fn fit_centerbias(ds: &FixationDataset, cfg: &CenterBiasFitConfig) -> Result<FitReport> {
    if ds.is_empty() {
        return Err(data_err!("dataset {} has no fixations", ds.name));
    }
    if cfg.bandwidths_dva.is_empty() || cfg.bandwidths_dva.iter().any(|&b| !(b > 0.0)) {
        return Err(crate::error::config_err!("bandwidth grid must be non-empty and positive"));
    }
    let data = FitData::new(ds, cfg.downscale);
    let images_with_fixations = data.per_stim.iter().filter(|v| !v.is_empty()).count();
    let mut variant = cfg.variant;
    let mut fallback = false;
    if variant.uses_kde() && images_with_fixations < 2 {
        log::warn!(
            "dataset {} has fixations on a single image; fitting a Gaussian center bias instead of {:?}",
            ds.name,
            variant
        );
        variant = CenterBiasVariant::GaussianUniform;
        fallback = true;
    }
    let active = active_for(variant);
    let correction = data.mean_correction();

    let (bandwidth, std, weights, objective, curve) = match variant {
        CenterBiasVariant::GaussianUniform => {
            let (s, w, v) = fit_gaussian_stds(&data, cfg.weight_step);
            (1.0, s, w, v, Vec::new())
        }
        _ => {
            let std = data.central_std();
            let gauss = variant.uses_gaussian().then(|| data.gaussian(std.0, std.1));
            let eval = |bw: f64| {
                let kde = data.kde_loo(bw);
                let comps = data.components(Some(&kde), gauss.as_deref());
                optimize_weights(&comps, active, cfg.weight_step)
            };
            let results: Vec<([f64; 3], f64)> = cfg.bandwidths_dva.par_iter().map(|&bw| eval(bw)).collect();
            let curve: Vec<(f64, f64)> = cfg
                .bandwidths_dva
                .iter()
                .zip(&results)
                .map(|(&b, r)| (b, r.1 + correction))
                .collect();
            let best = (0..results.len())
                .max_by(|&a, &b| results[a].1.total_cmp(&results[b].1))
                .expect("non-empty grid");
            let degenerate = data.support.windows(2).all(|p| p[0] == p[1]);
            let best = if degenerate {
                log::warn!(
                    "all fixations of {} coincide; using the smallest grid bandwidth",
                    ds.name
                );
                (0..cfg.bandwidths_dva.len())
                    .min_by(|&a, &b| cfg.bandwidths_dva[a].total_cmp(&cfg.bandwidths_dva[b]))
                    .expect("non-empty grid")
            } else {
                best
            };
            let (mut bw, (mut w, mut v)) = (cfg.bandwidths_dva[best], results[best]);
            if cfg.refine && !degenerate && cfg.bandwidths_dva.len() > 1 {
                let lo = cfg.bandwidths_dva[best.saturating_sub(1)].ln();
                let hi = cfg.bandwidths_dva[(best + 1).min(cfg.bandwidths_dva.len() - 1)].ln();
                let (b2, (w2, v2)) = golden_max(lo, hi, 20, |x| eval(x.exp()));
                if v2 > v {
                    bw = b2.exp();
                    w = w2;
                    v = v2;
                }
            }
            (bw, std, w, v, curve)
        }
    };

    let model = CenterBiasModel {
        fitted_on: ds.name.clone(),
        kind: CenterBiasKind::Mixture(MixtureCenterBias {
            variant,
            bandwidth_dva: bandwidth,
            std_x: std.0,
            std_y: std.1,
            weights: MixtureWeights::from_array(weights),
            support: if variant.uses_kde() { data.support.clone() } else { Vec::new() },
            support_source: if variant.uses_kde() {
                data.stim_of.iter().map(|&s| s as u32).collect()
            } else {
                Vec::new()
            },
            sources: if variant.uses_kde() { data.sources.clone() } else { Vec::new() },
        }),
    };
    model.validate()?;
    Ok(FitReport {
        model,
        objective: objective + correction,
        bandwidth_curve: curve,
        fallback,
    })
}

fn fit_gaussian_stds(data: &FitData, step: f64) -> ((f64, f64), [f64; 3], f64) {
    let active = [false, true, true];
    let eval = |sx: f64, sy: f64| {
        let g = data.gaussian(sx, sy);
        optimize_weights(&data.components(None, Some(&g)), active, step)
    };
    let grid = log_grid(0.03, 1.0, 16);
    let (mut sx, mut sy) = data.central_std();
    let (mut w, mut val) = eval(sx, sy);
    for _ in 0..2 {
        for axis in 0..2 {
            for &s in &grid {
                let (cx, cy) = if axis == 0 { (s, sy) } else { (sx, s) };
                let (cw, cv) = eval(cx, cy);
                if cv > val {
                    (sx, sy, w, val) = (cx, cy, cw, cv);
                }
            }
        }
    }
    let mut factor = 1.2f64;
    while factor > 1.002 {
        let mut improved = false;
        for (mx, my) in [(factor, 1.0), (1.0 / factor, 1.0), (1.0, factor), (1.0, 1.0 / factor)] {
            let (cx, cy) = (sx * mx, sy * my);
            let (cw, cv) = eval(cx, cy);
            if cv > val {
                (sx, sy, w, val) = (cx, cy, cw, cv);
                improved = true;
            }
        }
        if !improved {
            factor = factor.sqrt();
        }
    }
    ((sx, sy), w, val)
}

/// Golden-section search for the maximum of `f` on `[lo, hi]`.
fn golden_max<T: Clone>(mut lo: f64, mut hi: f64, iters: usize, f: impl Fn(f64) -> (T, f64)) -> (f64, (T, f64)) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iters {
        if fa.1 >= fb.1 {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    if fa.1 >= fb.1 {
        (a, fa)
    } else {
        (b, fb)
    }
}
