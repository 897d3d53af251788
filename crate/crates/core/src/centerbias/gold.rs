//! Per-image gold standard: a leave-one-subject-out fixation KDE mixed with
//! the dataset center bias and a uniform density.
//!
//! For every image a bandwidth and mixture weights over
//! `[image KDE, dataset center bias, uniform]` are fitted by maximizing the
//! likelihood of each fixation under the KDE of the *other* subjects. The
//! dataset center bias term leaves out the evaluated image's own fixations.
//! In upper-bound mode the same fitted parameters are used but the KDE keeps
//! every fixation of the image, including the scored subject's.

use super::fit::{fit_centerbias, log_grid, optimize_weights, CenterBiasFitConfig};
use super::kde::KernelTables;
use super::{CenterBiasModel, CenterBiasVariant};
use crate::dataset::FixationDataset;
use crate::error::{data_err, Result};
use crate::grid::{Grid, GridGeometry, GridKind};
use crate::metrics::SaliencyPredictor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldStandardMode {
    LeaveOneSubjectOut,
    UpperBound,
}

#[derive(Debug, Clone)]
pub struct GoldStandardConfig {
    pub downscale: usize,
    pub bandwidths_dva: Vec<f64>,
    pub weight_step: f64,
    pub mode: GoldStandardMode,
    /// Dataset center bias; fitted (KDE + uniform) when absent.
    pub dataset_centerbias: Option<CenterBiasModel>,
}

impl Default for GoldStandardConfig {
    fn default() -> Self {
        GoldStandardConfig {
            downscale: 2,
            bandwidths_dva: log_grid(0.1, 10.0, 20),
            weight_step: 0.1,
            mode: GoldStandardMode::LeaveOneSubjectOut,
            dataset_centerbias: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldStandardImage {
    pub stimulus_id: String,
    pub bandwidth_dva: f64,
    /// `[image KDE, dataset center bias, uniform]`
    pub weights: [f64; 3],
    /// Mean leave-one-subject-out log-likelihood per fixation (nats per pixel).
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct GoldStandardModel {
    pub dataset_centerbias: CenterBiasModel,
    pub images: Vec<GoldStandardImage>,
    pub mode: GoldStandardMode,
    pub downscale: usize,
}

/// Normalized support of one image's fixations plus their subject labels.
struct ImageFixations {
    points: Vec<[f64; 2]>,
    subject: Vec<usize>,
    cells: Vec<usize>,
}

fn image_fixations(ds: &FixationDataset, index: usize, fixations: &[usize], geom: &GridGeometry) -> ImageFixations {
    let s = &ds.stimuli[index];
    let mut subjects: Vec<&str> = Vec::new();
    let mut out = ImageFixations {
        points: Vec::with_capacity(fixations.len()),
        subject: Vec::with_capacity(fixations.len()),
        cells: Vec::with_capacity(fixations.len()),
    };
    for &j in fixations {
        let f = &ds.fixations[j];
        let sid = match subjects.iter().position(|&x| x == f.subject_id) {
            Some(p) => p,
            None => {
                subjects.push(&f.subject_id);
                subjects.len() - 1
            }
        };
        out.points.push([f.x / s.width_px as f64, f.y / s.height_px as f64]);
        out.subject.push(sid);
        out.cells.push(geom.cell_of(f.x, f.y));
    }
    out
}

/// KDE probability at each fixation's cell from the other subjects' fixations
/// (`loso`) or from all fixations. `None` where no other subject exists.
fn kde_at_fixations(fx: &ImageFixations, geom: &GridGeometry, bandwidth: f64, loso: bool) -> Vec<Option<f64>> {
    let tables = KernelTables::new(geom, bandwidth, &fx.points);
    (0..fx.points.len())
        .map(|j| {
            let c = fx.cells[j];
            let mut sum = 0.0;
            let mut count = 0usize;
            for k in 0..fx.points.len() {
                if loso && fx.subject[k] == fx.subject[j] {
                    continue;
                }
                sum += tables.value(k, c);
                count += 1;
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect()
}

pub fn fit_gold_standard(ds: &FixationDataset, cfg: &GoldStandardConfig) -> Result<GoldStandardModel> {
    if ds.is_empty() {
        return Err(data_err!("dataset {} has no fixations", ds.name));
    }
    let cb = match &cfg.dataset_centerbias {
        Some(m) => m.clone(),
        None => {
            let fit_cfg = CenterBiasFitConfig {
                downscale: cfg.downscale,
                ..CenterBiasFitConfig::with_variant(CenterBiasVariant::KdeUniform)
            };
            fit_centerbias(ds, &fit_cfg)?.model
        }
    };
    let per_stim = ds.fixations_per_stimulus();
    let images: Vec<GoldStandardImage> = (0..ds.stimuli.len())
        .into_par_iter()
        .map(|i| fit_image(ds, i, &per_stim[i], &cb, cfg))
        .collect();
    Ok(GoldStandardModel {
        dataset_centerbias: cb,
        images,
        mode: cfg.mode,
        downscale: cfg.downscale,
    })
}

fn fit_image(
    ds: &FixationDataset,
    index: usize,
    fixations: &[usize],
    cb: &CenterBiasModel,
    cfg: &GoldStandardConfig,
) -> GoldStandardImage {
    let s = &ds.stimuli[index];
    let geom = GridGeometry::downscaled(s.width_px, s.height_px, s.px_per_dva, cfg.downscale);
    let correction = geom.log_cell_to_pixel();
    let stimulus_id = s.stimulus_id.clone();
    if fixations.is_empty() {
        return GoldStandardImage {
            stimulus_id,
            bandwidth_dva: 1.0,
            weights: [0.0, 1.0, 0.0],
            objective: 0.0,
        };
    }
    let fx = image_fixations(ds, index, fixations, &geom);
    let cb_p = cb.render_probability_excluding(&geom, Some(&stimulus_id));
    let uniform = 1.0 / geom.cells() as f64;
    let multi_subject = fx.subject.iter().any(|&x| x != fx.subject[0]);

    let components = |bw: f64| -> Vec<[f64; 3]> {
        let kde = if multi_subject {
            kde_at_fixations(&fx, &geom, bw, true)
        } else {
            vec![None; fx.points.len()]
        };
        fx.cells
            .iter()
            .zip(kde)
            .map(|(&c, k)| [k.unwrap_or(0.0), cb_p[c], uniform])
            .collect()
    };
    if !multi_subject {
        let (w, v) = optimize_weights(&components(1.0), [false, true, true], cfg.weight_step);
        return GoldStandardImage {
            stimulus_id,
            bandwidth_dva: 1.0,
            weights: w,
            objective: v + correction,
        };
    }
    let mut best = (1.0, [0.0; 3], f64::NEG_INFINITY);
    for &bw in &cfg.bandwidths_dva {
        let (w, v) = optimize_weights(&components(bw), [true, true, true], cfg.weight_step);
        if v > best.2 {
            best = (bw, w, v);
        }
    }
    GoldStandardImage {
        stimulus_id,
        bandwidth_dva: best.0,
        weights: best.1,
        objective: best.2 + correction,
    }
}

impl GoldStandardModel {
    pub fn with_mode(&self, mode: GoldStandardMode) -> Self {
        GoldStandardModel {
            mode,
            ..self.clone()
        }
    }

    fn image(&self, ds: &FixationDataset, index: usize) -> Result<&GoldStandardImage> {
        let id = &ds.stimuli[index].stimulus_id;
        self.images
            .iter()
            .find(|g| &g.stimulus_id == id)
            .ok_or_else(|| data_err!("gold standard has no parameters for stimulus {id}"))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let dir = path.parent().unwrap_or(std::path::Path::new(""));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("gold");
        let cb_path = dir.join(format!("{stem}.centerbias.json"));
        self.dataset_centerbias.save(&cb_path)?;
        let doc = serde_json::json!({
            "mode": self.mode,
            "downscale": self.downscale,
            "centerbias": cb_path.file_name().and_then(|s| s.to_str()),
            "images": self.images,
        });
        crate::io::write_json(path, &doc)
    }
}

impl SaliencyPredictor for GoldStandardModel {
    /// Full-data density (every fixation of the image in the KDE).
    fn predict(&self, ds: &FixationDataset, index: usize) -> Result<(Grid, GridGeometry)> {
        let s = &ds.stimuli[index];
        let geom = GridGeometry::downscaled(s.width_px, s.height_px, s.px_per_dva, self.downscale);
        let params = self.image(ds, index)?;
        let per_stim = ds.fixations_per_stimulus();
        let fx = image_fixations(ds, index, &per_stim[index], &geom);
        let cb = self.dataset_centerbias.render_probability_excluding(&geom, Some(&s.stimulus_id));
        let uniform = 1.0 / geom.cells() as f64;
        let [wk, wc, wu] = params.weights;
        let mut p: Vec<f64> = cb.iter().map(|c| wc * c + wu * uniform).collect();
        if wk > 0.0 && !fx.points.is_empty() {
            let tables = KernelTables::new(&geom, params.bandwidth_dva, &fx.points);
            let surf = tables.surface(0..fx.points.len());
            let n = fx.points.len() as f64;
            for (a, b) in p.iter_mut().zip(surf) {
                *a += wk * b / n;
            }
        } else if wk > 0.0 {
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= z);
        }
        Ok((Grid::new(geom.grid_h, geom.grid_w, GridKind::Probability, p)?, geom))
    }

    fn fixation_log_densities(&self, ds: &FixationDataset, index: usize, fixations: &[usize]) -> Result<Vec<f64>> {
        if self.mode == GoldStandardMode::UpperBound {
            let (g, geom) = self.predict(ds, index)?;
            return Ok(fixations
                .iter()
                .map(|&j| {
                    let f = &ds.fixations[j];
                    g.values()[geom.cell_of(f.x, f.y)].max(1e-300).ln() + geom.log_cell_to_pixel()
                })
                .collect());
        }
        let s = &ds.stimuli[index];
        let geom = GridGeometry::downscaled(s.width_px, s.height_px, s.px_per_dva, self.downscale);
        let params = self.image(ds, index)?;
        // the KDE is built from every fixation of the image, scored leaving out the subject
        let all = &ds.fixations_per_stimulus()[index];
        let fx = image_fixations(ds, index, all, &geom);
        let kde = kde_at_fixations(&fx, &geom, params.bandwidth_dva, true);
        let cb = self.dataset_centerbias.render_probability_excluding(&geom, Some(&s.stimulus_id));
        let uniform = 1.0 / geom.cells() as f64;
        let [wk, wc, wu] = params.weights;
        fixations
            .iter()
            .map(|&j| {
                let pos = all
                    .iter()
                    .position(|&k| k == j)
                    .ok_or_else(|| data_err!("fixation {j} does not belong to stimulus {}", s.stimulus_id))?;
                let c = fx.cells[pos];
                let p = match kde[pos] {
                    Some(k) => wk * k + wc * cb[c] + wu * uniform,
                    None => (wc * cb[c] + wu * uniform) / (wc + wu).max(1e-300),
                };
                Ok(p.max(1e-300).ln() + geom.log_cell_to_pixel())
            })
            .collect()
    }
}
