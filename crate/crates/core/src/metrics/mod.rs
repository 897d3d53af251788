//! Probabilistic and classical saliency metrics.
//!
//! Log-likelihoods are reported in bits per fixation and are measured per
//! native pixel, so models predicting on grids of different resolution are
//! comparable. LL, IG and NSS aggregate over fixations; AUC, sAUC, CC,
//! KLDiv and SIM are averaged over images.

mod auc;
mod maps;
mod pixelwise;

pub use auc::{auc_from_values, image_auc, shuffled_auc_negatives};
pub use maps::{cc, empirical_map, kldiv, nss_values, sim};
pub use pixelwise::{pixelwise_ig_difference, prediction_error_scatter, write_signed_heatmap, ScatterRow};

use crate::dataset::FixationDataset;
use crate::error::{data_err, Result};
use crate::grid::{Grid, GridGeometry, GridKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use std::path::Path;

/// Anything that yields a normalized fixation distribution per stimulus.
pub trait SaliencyPredictor: Sync {
    /// Probability grid for stimulus `index` of `ds` and how it maps onto the image.
    fn predict(&self, ds: &FixationDataset, index: usize) -> Result<(Grid, GridGeometry)>;

    /// Log density (nats per native pixel) at each of the given fixations of
    /// stimulus `index`.
    fn fixation_log_densities(&self, ds: &FixationDataset, index: usize, fixations: &[usize]) -> Result<Vec<f64>> {
        let (g, geom) = self.predict(ds, index)?;
        check_normalized(&g)?;
        Ok(lookup_log_densities(&g, &geom, ds, fixations))
    }
}

impl<T: SaliencyPredictor + ?Sized> SaliencyPredictor for &T {
    fn predict(&self, ds: &FixationDataset, index: usize) -> Result<(Grid, GridGeometry)> {
        (**self).predict(ds, index)
    }
    fn fixation_log_densities(&self, ds: &FixationDataset, index: usize, fixations: &[usize]) -> Result<Vec<f64>> {
        (**self).fixation_log_densities(ds, index, fixations)
    }
}

pub(crate) fn check_normalized(g: &Grid) -> Result<()> {
    let s = g.sum();
    if (s - 1.0).abs() > 1e-6 || g.values().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(data_err!("prediction is not a normalized distribution (sum {s})"));
    }
    Ok(())
}

pub(crate) fn lookup_log_densities(g: &Grid, geom: &GridGeometry, ds: &FixationDataset, fixations: &[usize]) -> Vec<f64> {
    let corr = geom.log_cell_to_pixel();
    fixations
        .iter()
        .map(|&j| {
            let f = &ds.fixations[j];
            g.values()[geom.cell_of(f.x, f.y)].max(1e-300).ln() + corr
        })
        .collect()
}

/// Uniform distribution over the pixel grid.
#[derive(Debug, Clone, Copy)]
pub struct UniformPredictor {
    pub downscale: usize,
}

impl SaliencyPredictor for UniformPredictor {
    fn predict(&self, ds: &FixationDataset, index: usize) -> Result<(Grid, GridGeometry)> {
        let s = &ds.stimuli[index];
        let geom = GridGeometry::downscaled(s.width_px, s.height_px, s.px_per_dva, self.downscale);
        let v = 1.0 / geom.cells() as f64;
        Ok((Grid::filled(geom.grid_h, geom.grid_w, GridKind::Probability, v), geom))
    }
}

/// Fixed probability maps, one per stimulus of the dataset.
#[derive(Debug, Clone)]
pub struct MapPredictor {
    pub maps: Vec<Grid>,
}

impl SaliencyPredictor for MapPredictor {
    fn predict(&self, ds: &FixationDataset, index: usize) -> Result<(Grid, GridGeometry)> {
        let s = &ds.stimuli[index];
        let g = self
            .maps
            .get(index)
            .ok_or_else(|| data_err!("no map for stimulus {}", s.stimulus_id))?;
        let geom = GridGeometry {
            width_px: s.width_px,
            height_px: s.height_px,
            px_per_dva: s.px_per_dva,
            grid_w: g.width(),
            grid_h: g.height(),
        };
        Ok((g.clone(), geom))
    }
}

/// Equal-weight mixture of several predictors' densities.
pub struct MixturePredictor<'a> {
    pub members: Vec<&'a dyn SaliencyPredictor>,
}

impl SaliencyPredictor for MixturePredictor<'_> {
    fn predict(&self, ds: &FixationDataset, index: usize) -> Result<(Grid, GridGeometry)> {
        let mut acc: Option<(Grid, GridGeometry)> = None;
        let k = self.members.len() as f64;
        for m in &self.members {
            let (g, geom) = m.predict(ds, index)?;
            match &mut acc {
                None => acc = Some((g.scaled(1.0 / k), geom)),
                Some((a, _)) => {
                    a.ensure_same_shape(&g)?;
                    for (x, y) in a.values_mut().iter_mut().zip(g.values()) {
                        *x += y / k;
                    }
                }
            }
        }
        acc.ok_or_else(|| data_err!("empty mixture"))
    }
}

/// Per-image fixation log-densities (nats per pixel) for the selected stimuli.
pub fn per_image_log_densities(
    pred: &dyn SaliencyPredictor,
    ds: &FixationDataset,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let per = ds.fixations_per_stimulus();
    indices
        .par_iter()
        .map(|&i| pred.fixation_log_densities(ds, i, &per[i]))
        .collect()
}

fn mean_bits(per_image: &[Vec<f64>]) -> Result<f64> {
    let n: usize = per_image.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(data_err!("no fixations to evaluate"));
    }
    let s: f64 = per_image.iter().flatten().sum();
    Ok(s / n as f64 / LN_2)
}

/// Mean log-likelihood in bits per fixation.
pub fn log_likelihood(pred: &dyn SaliencyPredictor, ds: &FixationDataset, indices: &[usize]) -> Result<f64> {
    mean_bits(&per_image_log_densities(pred, ds, indices)?)
}

/// `LL(model) - LL(baseline)` in bits per fixation.
pub fn information_gain(
    model: &dyn SaliencyPredictor,
    baseline: &dyn SaliencyPredictor,
    ds: &FixationDataset,
    indices: &[usize],
) -> Result<f64> {
    let a = per_image_log_densities(model, ds, indices)?;
    let b = per_image_log_densities(baseline, ds, indices)?;
    let diff: Vec<Vec<f64>> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect();
    mean_bits(&diff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub sigma_emp_dva: f64,
    pub sauc_seed: u64,
    /// Cap on shuffled negatives per image.
    pub sauc_max_negatives: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sigma_emp_dva: 1.0,
            sauc_seed: 0,
            sauc_max_negatives: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub stimulus_id: String,
    pub fixations: usize,
    pub ll: f64,
    pub ig: Option<f64>,
    pub auc: f64,
    pub sauc: Option<f64>,
    pub nss: f64,
    pub cc: f64,
    pub kldiv: f64,
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub images: usize,
    pub fixations: usize,
    /// bits/fix
    pub ll: f64,
    /// bits/fix
    pub ig: Option<f64>,
    pub auc: f64,
    pub sauc: Option<f64>,
    pub nss: f64,
    pub cc: f64,
    pub kldiv: f64,
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub dataset: String,
    /// Per-fixation log-densities in nats, grouped by image in evaluation order.
    pub fixation_log_densities: Vec<Vec<f64>>,
    pub per_image: Vec<ImageMetrics>,
    pub summary: MetricSummary,
}

/// Evaluates every metric on the selected stimuli. IG needs a baseline.
pub fn evaluate(
    model: &dyn SaliencyPredictor,
    baseline: Option<&dyn SaliencyPredictor>,
    ds: &FixationDataset,
    indices: &[usize],
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let per = ds.fixations_per_stimulus();
    let indices: Vec<usize> = indices.iter().copied().filter(|&i| !per[i].is_empty()).collect();
    if indices.is_empty() {
        return Err(data_err!("no fixations to evaluate in {}", ds.name));
    }
    let lls = per_image_log_densities(model, ds, &indices)?;
    let base = baseline.map(|b| per_image_log_densities(b, ds, &indices)).transpose()?;
    let use_sauc = indices.len() >= 2;

    let rows: Vec<ImageMetrics> = indices
        .par_iter()
        .enumerate()
        .map(|(k, &i)| -> Result<ImageMetrics> {
            let (g, geom) = model.predict(ds, i)?;
            check_normalized(&g)?;
            let fix = &per[i];
            let cells: Vec<usize> = fix
                .iter()
                .map(|&j| geom.cell_of(ds.fixations[j].x, ds.fixations[j].y))
                .collect();
            let n = fix.len() as f64;
            let ll = lls[k].iter().sum::<f64>() / n / LN_2;
            let ig = base
                .as_ref()
                .map(|b| lls[k].iter().zip(&b[k]).map(|(p, q)| p - q).sum::<f64>() / n / LN_2);
            let sauc = if use_sauc {
                let neg = shuffled_auc_negatives(ds, &indices, i, &geom, cfg.sauc_seed, cfg.sauc_max_negatives);
                let pos: Vec<f64> = cells.iter().map(|&c| g.values()[c]).collect();
                let negv: Vec<f64> = neg.iter().map(|&c| g.values()[c]).collect();
                Some(auc_from_values(&pos, &negv))
            } else {
                None
            };
            let emp = empirical_map(ds, i, &geom, cfg.sigma_emp_dva);
            Ok(ImageMetrics {
                stimulus_id: ds.stimuli[i].stimulus_id.clone(),
                fixations: fix.len(),
                ll,
                ig,
                auc: image_auc(&g, &cells),
                sauc,
                nss: nss_values(&g, &cells).iter().sum::<f64>() / n,
                cc: cc(&g, &emp)?,
                kldiv: kldiv(&emp, &g)?,
                sim: sim(&g, &emp)?,
            })
        })
        .collect::<Result<_>>()?;

    let total: usize = rows.iter().map(|r| r.fixations).sum();
    let fix_mean = |f: &dyn Fn(&ImageMetrics) -> f64| rows.iter().map(|r| f(r) * r.fixations as f64).sum::<f64>() / total as f64;
    let img_mean = |f: &dyn Fn(&ImageMetrics) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let summary = MetricSummary {
        images: rows.len(),
        fixations: total,
        ll: mean_bits(&lls)?,
        ig: match &base {
            Some(b) => {
                let d: Vec<Vec<f64>> = lls
                    .iter()
                    .zip(b)
                    .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
                    .collect();
                Some(mean_bits(&d)?)
            }
            None => None,
        },
        auc: fix_mean(&|r| r.auc),
        sauc: use_sauc.then(|| fix_mean(&|r| r.sauc.unwrap_or(f64::NAN))),
        nss: fix_mean(&|r| r.nss),
        cc: img_mean(&|r| r.cc),
        kldiv: img_mean(&|r| r.kldiv),
        sim: img_mean(&|r| r.sim),
    };
    Ok(Evaluation {
        dataset: ds.name.clone(),
        fixation_log_densities: lls,
        per_image: rows,
        summary,
    })
}

impl Evaluation {
    /// Long-format CSV: `image_id,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,metric,value\n");
        for r in &self.per_image {
            let mut push = |name: &str, v: f64| out.push_str(&format!("{},{},{}\n", r.stimulus_id, name, v));
            push("ll", r.ll);
            if let Some(v) = r.ig {
                push("ig", v);
            }
            push("auc", r.auc);
            if let Some(v) = r.sauc {
                push("sauc", v);
            }
            push("nss", r.nss);
            push("cc", r.cc);
            push("kldiv", r.kldiv);
            push("sim", r.sim);
        }
        out
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::SalError::io(dir, e))?;
        crate::io::write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        let doc = serde_json::json!({
            "dataset": self.dataset,
            "units": {"ll": "bits/fix", "ig": "bits/fix"},
            "summary": self.summary,
        });
        crate::io::write_json(&dir.join(format!("{stem}.json")), &doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Fixation, StimulusMeta};
    use crate::rng::SeededRng;

    pub(crate) fn toy(n_img: usize, w: usize, h: usize, fix_per_img: usize, seed: u64) -> FixationDataset {
        let mut rng = SeededRng::new(seed);
        let stimuli = (0..n_img).map(|i| StimulusMeta::new(format!("i{i}"), w, h, 2.0)).collect();
        let mut fixations = Vec::new();
        for i in 0..n_img {
            for k in 0..fix_per_img {
                fixations.push(Fixation {
                    stimulus_id: format!("i{i}"),
                    subject_id: format!("s{}", k % 3),
                    x: rng.uniform() * w as f64,
                    y: rng.uniform() * h as f64,
                    ordinal: 0,
                });
            }
        }
        FixationDataset::new("toy", stimuli, fixations).unwrap()
    }

    pub(crate) fn random_maps(ds: &FixationDataset, seed: u64) -> MapPredictor {
        let mut rng = SeededRng::new(seed);
        let maps = ds
            .stimuli
            .iter()
            .map(|s| {
                let v: Vec<f64> = (0..s.width_px * s.height_px).map(|_| rng.uniform() + 0.01).collect();
                let z: f64 = v.iter().sum();
                Grid::new(s.height_px, s.width_px, GridKind::Probability, v.iter().map(|x| x / z).collect()).unwrap()
            })
            .collect();
        MapPredictor { maps }
    }

    #[test]
    fn uniform_ll_on_10x10() {
        let ds = toy(2, 10, 10, 7, 1);
        let ll = log_likelihood(&UniformPredictor { downscale: 1 }, &ds, &[0, 1]).unwrap();
        assert!((ll + 100f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn delta_prediction_has_zero_ll() {
        let s = StimulusMeta::new("a", 10, 10, 1.0);
        let f = Fixation {
            stimulus_id: "a".into(),
            subject_id: "p".into(),
            x: 3.5,
            y: 6.2,
            ordinal: 0,
        };
        let ds = FixationDataset::new("d", vec![s], vec![f.clone(), f]).unwrap();
        let mut g = Grid::filled(10, 10, GridKind::Probability, 0.0);
        g.set(6, 3, 1.0);
        let ll = log_likelihood(&MapPredictor { maps: vec![g] }, &ds, &[0]).unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn hand_sum_on_2x2() {
        // 2x2 prediction grids on 8x8 images: each cell covers 16 pixels
        let stimuli = vec![StimulusMeta::new("a", 8, 8, 1.0), StimulusMeta::new("b", 8, 8, 1.0)];
        let fx = |id: &str, x: f64, y: f64| Fixation {
            stimulus_id: id.into(),
            subject_id: "p".into(),
            x,
            y,
            ordinal: 0,
        };
        let ds = FixationDataset::new("d", stimuli, vec![fx("a", 2.0, 2.0), fx("a", 6.0, 6.5), fx("b", 4.8, 0.4)]).unwrap();
        let a = Grid::new(2, 2, GridKind::Probability, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = Grid::new(2, 2, GridKind::Probability, vec![0.25, 0.5, 0.125, 0.125]).unwrap();
        let ll = log_likelihood(&MapPredictor { maps: vec![a, b] }, &ds, &[0, 1]).unwrap();
        let expected = (0.1f64.log2() + 0.4f64.log2() + 0.5f64.log2()) / 3.0 - 4.0;
        assert!((ll - expected).abs() < 1e-14);
    }

    #[test]
    fn unnormalized_prediction_rejected() {
        let ds = toy(1, 8, 8, 3, 2);
        let g = Grid::filled(8, 8, GridKind::Probability, 0.1);
        assert!(log_likelihood(&MapPredictor { maps: vec![g] }, &ds, &[0]).is_err());
    }

    #[test]
    fn ig_identities() {
        let ds = toy(3, 9, 8, 9, 3);
        let idx = [0, 1, 2];
        let a = random_maps(&ds, 1);
        let b = random_maps(&ds, 2);
        let c = random_maps(&ds, 3);
        assert_eq!(information_gain(&a, &a, &ds, &idx).unwrap(), 0.0);
        let ab = information_gain(&a, &b, &ds, &idx).unwrap();
        let bc = information_gain(&b, &c, &ds, &idx).unwrap();
        let ac = information_gain(&a, &c, &ds, &idx).unwrap();
        assert!((ac - (ab + bc)).abs() < 1e-12);
        let lla = log_likelihood(&a, &ds, &idx).unwrap();
        let llb = log_likelihood(&b, &ds, &idx).unwrap();
        assert!((ab - (lla - llb)).abs() < 1e-12);
    }

    #[test]
    fn evaluation_csv_and_summary() {
        let ds = toy(3, 8, 8, 5, 4);
        let m = random_maps(&ds, 5);
        let u = UniformPredictor { downscale: 1 };
        let ev = evaluate(&m, Some(&u), &ds, &[0, 1, 2], &EvalConfig::default()).unwrap();
        assert_eq!(ev.per_image.len(), 3);
        assert!(ev.to_csv().starts_with("image_id,metric,value\ni0,ll,"));
        let ig = information_gain(&m, &u, &ds, &[0, 1, 2]).unwrap();
        assert!((ev.summary.ig.unwrap() - ig).abs() < 1e-12);
        let ue = evaluate(&u, None, &ds, &[0, 1, 2], &EvalConfig::default()).unwrap();
        assert_eq!(ue.summary.nss, 0.0);
        assert_eq!(ue.summary.auc, 0.5);
    }

    #[test]
    fn metrics_invariant_under_fixation_permutation() {
        let ds = toy(3, 9, 8, 8, 6);
        let mut shuffled = ds.clone();
        SeededRng::new(9).shuffle(&mut shuffled.fixations);
        let m = random_maps(&ds, 7);
        let u = UniformPredictor { downscale: 1 };
        let cfg = EvalConfig {
            sauc_max_negatives: usize::MAX,
            ..Default::default()
        };
        let a = evaluate(&m, Some(&u), &ds, &[0, 1, 2], &cfg).unwrap().summary;
        let b = evaluate(&m, Some(&u), &shuffled, &[0, 1, 2], &cfg).unwrap().summary;
        for (x, y) in [
            (a.ll, b.ll),
            (a.ig.unwrap(), b.ig.unwrap()),
            (a.auc, b.auc),
            (a.sauc.unwrap(), b.sauc.unwrap()),
            (a.nss, b.nss),
            (a.cc, b.cc),
            (a.kldiv, b.kldiv),
            (a.sim, b.sim),
        ] {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}
