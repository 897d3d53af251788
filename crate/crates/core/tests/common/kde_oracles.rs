//! Independent references for the center bias KDE and its fitting.

use super::Check;
use salbias::centerbias::{
    fit_centerbias, CenterBiasFitConfig, CenterBiasKind, CenterBiasModel, CenterBiasPredictor, CenterBiasVariant,
    MixtureCenterBias, MixtureWeights,
};
use salbias::dataset::{synth_dataset, Fixation, FixationDataset, StimulusMeta, SynthSpec};
use salbias::grid::GridGeometry;
use salbias::metrics::log_likelihood;
use salbias::rng::SeededRng;

const SIMPSON_STEPS: usize = 400;

fn pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

fn simpson(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / SIMPSON_STEPS as f64;
    let mut s = f(a) + f(b);
    for k in 1..SIMPSON_STEPS {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Gaussian mass of each of `n` equal cells of the unit interval, divided by
/// the mass on the whole interval.
pub fn brute_axis(n: usize, mean: f64, std: f64) -> Vec<f64> {
    let m: Vec<f64> = (0..n)
        .map(|c| simpson(c as f64 / n as f64, (c + 1) as f64 / n as f64, |x| pdf(x, mean, std)))
        .collect();
    let z: f64 = m.iter().sum();
    m.into_iter().map(|v| v / z).collect()
}

/// Cell masses of an isotropic KDE (bandwidth in dva) over normalized support points.
pub fn brute_kde(geom: &GridGeometry, bandwidth_dva: f64, support: &[[f64; 2]]) -> Vec<f64> {
    let sx = bandwidth_dva * geom.px_per_dva / geom.width_px as f64;
    let sy = bandwidth_dva * geom.px_per_dva / geom.height_px as f64;
    let mut out = vec![0.0; geom.cells()];
    for p in support {
        let cx = brute_axis(geom.grid_w, p[0], sx);
        let cy = brute_axis(geom.grid_h, p[1], sy);
        for r in 0..geom.grid_h {
            for c in 0..geom.grid_w {
                out[r * geom.grid_w + c] += cy[r] * cx[c] / support.len() as f64;
            }
        }
    }
    out
}

pub fn kde_only(support: Vec<[f64; 2]>, bandwidth_dva: f64) -> CenterBiasModel {
    let n = support.len();
    CenterBiasModel {
        fitted_on: "oracle".into(),
        kind: CenterBiasKind::Mixture(MixtureCenterBias {
            variant: CenterBiasVariant::KdeUniform,
            bandwidth_dva,
            std_x: 0.2,
            std_y: 0.2,
            weights: MixtureWeights::from_array([1.0, 0.0, 0.0]),
            support,
            support_source: vec![0; n],
            sources: vec!["s".into()],
        }),
    }
}

/// Largest absolute difference between rendered and brute-force cell
/// masses over `trials` random KDEs on a 40x25 (1000 cell) grid.
pub fn kde_pointwise(trials: u64) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for t in 0..trials {
        let mut rng = SeededRng::new(6000 + t);
        let geom = GridGeometry::downscaled(80, 50, rng.uniform_range(5.0, 20.0), 2);
        assert_eq!(geom.cells(), 1000);
        let support: Vec<[f64; 2]> = (0..30).map(|_| [rng.uniform(), rng.uniform()]).collect();
        let bw = rng.uniform_range(0.2, 3.0);
        let got = kde_only(support.clone(), bw).render_probability(&geom);
        let want = brute_kde(&geom, bw, &support);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        points += got.len();
    }
    (worst, points)
}

fn small_dataset(rng: &mut SeededRng) -> FixationDataset {
    let mut stimuli = Vec::new();
    let mut fixations = Vec::new();
    for i in 0..4 {
        let id = format!("i{i}");
        stimuli.push(StimulusMeta::new(id.clone(), 40, 30, 10.0));
        for k in 0..6 {
            // a central spread plus a tight off-center cluster the KDE can use
            let (cx, cy, s) = if k % 2 == 0 { (20.0, 15.0, 7.0) } else { (9.0, 8.0, 2.0) };
            let x = (cx + s * rng.normal()).clamp(0.0, 39.999);
            let y = (cy + s * rng.normal()).clamp(0.0, 29.999);
            fixations.push(Fixation {
                stimulus_id: id.clone(),
                subject_id: format!("s{k}"),
                x,
                y,
                ordinal: 0,
            });
        }
    }
    FixationDataset::new("small", stimuli, fixations).unwrap()
}

fn ternary_max(f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Leave-one-image-out objective maximized over mixture weights, per bandwidth.
fn oracle_curve(ds: &FixationDataset, bandwidths: &[f64], with_gaussian: bool) -> Vec<f64> {
    let s = &ds.stimuli[0];
    let geom = GridGeometry::downscaled(s.width_px, s.height_px, s.px_per_dva, 2);
    let cells = geom.cells() as f64;
    let to_pixel = (cells / (s.width_px * s.height_px) as f64).ln();
    let pts: Vec<([f64; 2], &str)> = ds
        .fixations
        .iter()
        .map(|f| ([f.x / s.width_px as f64, f.y / s.height_px as f64], f.stimulus_id.as_str()))
        .collect();
    let cell_of = |p: [f64; 2]| {
        let c = ((p[0] * geom.grid_w as f64).floor() as usize).min(geom.grid_w - 1);
        let r = ((p[1] * geom.grid_h as f64).floor() as usize).min(geom.grid_h - 1);
        r * geom.grid_w + c
    };
    let n = pts.len() as f64;
    let sd = |axis: usize| (pts.iter().map(|(p, _)| (p[axis] - 0.5).powi(2)).sum::<f64>() / n).sqrt();
    let gauss = {
        let gx = brute_axis(geom.grid_w, 0.5, sd(0));
        let gy = brute_axis(geom.grid_h, 0.5, sd(1));
        move |cell: usize| gy[cell / geom.grid_w] * gx[cell % geom.grid_w]
    };
    bandwidths
        .iter()
        .map(|&bw| {
            let comps: Vec<(f64, f64)> = pts
                .iter()
                .map(|(p, id)| {
                    let rest: Vec<[f64; 2]> = pts.iter().filter(|(_, o)| o != id).map(|(q, _)| *q).collect();
                    let c = cell_of(*p);
                    (brute_kde(&geom, bw, &rest)[c], gauss(c))
                })
                .collect();
            let obj = |wk: f64, wg: f64| {
                comps
                    .iter()
                    .map(|&(k, g)| (wk * k + wg * g + (1.0 - wk - wg) / cells).ln())
                    .sum::<f64>()
                    / n
            };
            let best = if with_gaussian {
                ternary_max(|wk| ternary_max(|u| obj(wk, u * (1.0 - wk))).1).1
            } else {
                ternary_max(|wk| obj(wk, 0.0)).1
            };
            best + to_pixel
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ArgmaxStats {
    pub fits: usize,
    pub argmax_hits: usize,
    /// Largest gap between the fitted curve and the reference curve.
    pub worst_curve: f64,
}

/// Fits with refinement off on small random datasets and compares the
/// selected bandwidth and curve with exhaustive reference values.
pub fn loo_argmax(trials: u64) -> ArgmaxStats {
    let bandwidths = vec![0.2, 0.5, 1.0, 2.0, 4.0];
    let mut st = ArgmaxStats::default();
    for t in 0..trials {
        let mut rng = SeededRng::new(7000 + t);
        let ds = small_dataset(&mut rng);
        for (variant, with_gaussian) in [
            (CenterBiasVariant::KdeUniform, false),
            (CenterBiasVariant::KdeGaussianUniform, true),
        ] {
            let cfg = CenterBiasFitConfig {
                variant,
                downscale: 2,
                bandwidths_dva: bandwidths.clone(),
                weight_step: 0.1,
                refine: false,
            };
            let fit = fit_centerbias(&ds, &cfg).unwrap();
            let reference = oracle_curve(&ds, &bandwidths, with_gaussian);
            let best = (0..reference.len()).max_by(|&a, &b| reference[a].total_cmp(&reference[b])).unwrap();
            let CenterBiasKind::Mixture(m) = &fit.model.kind else { unreachable!() };
            st.fits += 1;
            let picked = bandwidths.iter().position(|&b| b == m.bandwidth_dva);
            // flat curves tie; any bandwidth attaining the maximum is an argmax
            if picked.is_some_and(|i| reference[i] >= reference[best] - 1e-9) {
                st.argmax_hits += 1;
            }
            for ((_, v), r) in fit.bandwidth_curve.iter().zip(&reference) {
                st.worst_curve = st.worst_curve.max((v - r).abs());
            }
        }
    }
    st
}

#[derive(Debug, Clone)]
pub struct LowDataRow {
    pub images: usize,
    pub seed: u64,
    /// Validation NLL in bits per fixation for kde, gaussian, mixture.
    pub nll: [f64; 3],
}

impl LowDataRow {
    pub fn margin(&self) -> f64 {
        self.nll[0].min(self.nll[1]) + 0.02 - self.nll[2]
    }
}

/// Fits the three variants on `n` random training images and scores them on
/// 100 held-out images of the same synthetic dataset.
pub fn low_data_fixtures(sizes: &[usize], seeds: &[u64]) -> Vec<LowDataRow> {
    let spec = SynthSpec {
        name: "cb".into(),
        images: 300,
        ..Default::default()
    };
    let full = synth_dataset(&spec, 11).unwrap().dataset;
    let validation: Vec<usize> = (200..300).collect();
    let val = full.subset(&validation);
    let val_all: Vec<usize> = (0..val.stimuli.len()).collect();
    let mut rows = Vec::new();
    for &n in sizes {
        for &seed in seeds {
            let mut rng = SeededRng::new(seed);
            let mut pool: Vec<usize> = (0..200).collect();
            rng.shuffle(&mut pool);
            let train = full.subset(&pool[..n]);
            let mut nll = [0.0; 3];
            for (k, variant) in [
                CenterBiasVariant::KdeUniform,
                CenterBiasVariant::GaussianUniform,
                CenterBiasVariant::KdeGaussianUniform,
            ]
            .into_iter()
            .enumerate()
            {
                let model = fit_centerbias(&train, &CenterBiasFitConfig::with_variant(variant)).unwrap().model;
                let p = CenterBiasPredictor {
                    model,
                    downscale: 2,
                    leave_one_out: false,
                };
                nll[k] = -log_likelihood(&p, &val, &val_all).unwrap();
            }
            rows.push(LowDataRow { images: n, seed, nll });
        }
    }
    rows
}

pub fn kde_checks() -> Vec<Check> {
    let (dev, points) = kde_pointwise(5);
    let am = loo_argmax(5);
    let rows = low_data_fixtures(&[10, 50, 200], &[1, 2, 3]);
    let worst = rows.iter().map(LowDataRow::margin).fold(f64::INFINITY, f64::min);
    let detail = rows
        .iter()
        .map(|r| format!("n={} s={}: {:.4}/{:.4}/{:.4}", r.images, r.seed, r.nll[0], r.nll[1], r.nll[2]))
        .collect::<Vec<_>>()
        .join("; ");
    vec![
        Check::new(
            "kde vs brute force",
            dev <= 1e-9,
            format!("{points} cells, max dev {dev:.2e} <= 1e-9"),
        ),
        Check::new(
            "loo bandwidth is grid argmax",
            am.argmax_hits == am.fits && am.worst_curve <= 1e-6,
            format!(
                "{}/{} fits pick the reference argmax, curve dev {:.2e} <= 1e-6",
                am.argmax_hits, am.fits, am.worst_curve
            ),
        ),
        Check::new(
            "mixture nll <= min(pure) + 0.02",
            worst >= 0.0,
            format!("worst slack {worst:.4} bit/fix [kde/gauss/mix] {detail}"),
        ),
    ]
}
