//! Spatial prior ("center bias") models and the per-image gold standard.
//!
//! Three fitted variants are supported: a KDE with a uniform component, a
//! centered Gaussian with a uniform component, and a mixture of all three.
//! KDE bandwidths are isotropic in degrees of visual angle; support points are
//! stored in normalized image coordinates so a model renders onto any image.

mod fit;
mod gold;
pub(crate) mod kde;

pub use fit::{fit_centerbias, loo_objective, mixture_objective, optimize_weights, CenterBiasFitConfig, FitReport};
pub use gold::{fit_gold_standard, GoldStandardConfig, GoldStandardImage, GoldStandardMode, GoldStandardModel};

use crate::dataset::FixationDataset;
use crate::error::{data_err, Result, SalError};
use crate::grid::{Grid, GridGeometry, GridKind};
use crate::metrics::SaliencyPredictor;
use kde::{axis_gaussian, KernelTables};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterBiasVariant {
    KdeUniform,
    GaussianUniform,
    KdeGaussianUniform,
}

impl CenterBiasVariant {
    pub fn uses_kde(self) -> bool {
        !matches!(self, CenterBiasVariant::GaussianUniform)
    }
    pub fn uses_gaussian(self) -> bool {
        !matches!(self, CenterBiasVariant::KdeUniform)
    }
}

impl std::str::FromStr for CenterBiasVariant {
    type Err = SalError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kde_uniform" => Ok(Self::KdeUniform),
            "gaussian_uniform" => Ok(Self::GaussianUniform),
            "kde_gaussian_uniform" => Ok(Self::KdeGaussianUniform),
            other => Err(SalError::Config(format!("unknown center bias variant {other}"))),
        }
    }
}

/// Mixture weights on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub kde: f64,
    pub gaussian: f64,
    pub uniform: f64,
}

impl MixtureWeights {
    pub fn as_array(&self) -> [f64; 3] {
        [self.kde, self.gaussian, self.uniform]
    }
    pub fn from_array(w: [f64; 3]) -> Self {
        MixtureWeights {
            kde: w[0],
            gaussian: w[1],
            uniform: w[2],
        }
    }
    pub fn uniform_only() -> Self {
        MixtureWeights {
            kde: 0.0,
            gaussian: 0.0,
            uniform: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureCenterBias {
    pub variant: CenterBiasVariant,
    pub bandwidth_dva: f64,
    /// Gaussian standard deviations in normalized image coordinates.
    pub std_x: f64,
    pub std_y: f64,
    pub weights: MixtureWeights,
    /// KDE support fixations as normalized `(x / width, y / height)`.
    pub support: Vec<[f64; 2]>,
    /// Source stimulus (index into `sources`) of each support point.
    pub support_source: Vec<u32>,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CenterBiasKind {
    Mixture(MixtureCenterBias),
    /// Equal-weight average of member densities.
    Average(Vec<CenterBiasModel>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterBiasModel {
    pub fitted_on: String,
    pub kind: CenterBiasKind,
}

impl CenterBiasModel {
    pub fn uniform(fitted_on: impl Into<String>) -> Self {
        CenterBiasModel {
            fitted_on: fitted_on.into(),
            kind: CenterBiasKind::Mixture(MixtureCenterBias {
                variant: CenterBiasVariant::GaussianUniform,
                bandwidth_dva: 1.0,
                std_x: 0.25,
                std_y: 0.25,
                weights: MixtureWeights::uniform_only(),
                support: Vec::new(),
                support_source: Vec::new(),
                sources: Vec::new(),
            }),
        }
    }

    /// Centered Gaussian plus uniform with explicit parameters.
    pub fn gaussian(fitted_on: impl Into<String>, std_x: f64, std_y: f64, uniform_weight: f64) -> Self {
        CenterBiasModel {
            fitted_on: fitted_on.into(),
            kind: CenterBiasKind::Mixture(MixtureCenterBias {
                variant: CenterBiasVariant::GaussianUniform,
                bandwidth_dva: 1.0,
                std_x,
                std_y,
                weights: MixtureWeights {
                    kde: 0.0,
                    gaussian: 1.0 - uniform_weight,
                    uniform: uniform_weight,
                },
                support: Vec::new(),
                support_source: Vec::new(),
                sources: Vec::new(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            CenterBiasKind::Mixture(m) => {
                let w = m.weights.as_array();
                if w.iter().any(|&v| v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(data_err!("center bias weights {w:?} not on the simplex"));
                }
                if !(m.bandwidth_dva > 0.0 && m.std_x > 0.0 && m.std_y > 0.0) {
                    return Err(data_err!("center bias bandwidths must be positive"));
                }
                if m.support.len() != m.support_source.len() {
                    return Err(data_err!("support sources misaligned"));
                }
                Ok(())
            }
            CenterBiasKind::Average(members) => {
                if members.is_empty() {
                    return Err(data_err!("empty center bias average"));
                }
                members.iter().try_for_each(|m| m.validate())
            }
        }
    }

    /// Normalized probability per grid cell.
    pub fn render_probability(&self, geom: &GridGeometry) -> Vec<f64> {
        self.render_probability_excluding(geom, None)
    }

    /// As [`render_probability`](Self::render_probability) but without the
    /// KDE support contributed by stimulus `exclude`.
    pub fn render_probability_excluding(&self, geom: &GridGeometry, exclude: Option<&str>) -> Vec<f64> {
        match &self.kind {
            CenterBiasKind::Mixture(m) => m.render(geom, exclude),
            CenterBiasKind::Average(members) => {
                let k = members.len() as f64;
                let mut acc = vec![0.0; geom.cells()];
                for m in members {
                    for (a, p) in acc.iter_mut().zip(m.render_probability_excluding(geom, exclude)) {
                        *a += p / k;
                    }
                }
                acc
            }
        }
    }

    /// Log-density grid (`logsumexp = 0`) on the given geometry.
    pub fn render(&self, geom: &GridGeometry) -> Grid {
        self.render_excluding(geom, None)
    }

    pub fn render_excluding(&self, geom: &GridGeometry, exclude: Option<&str>) -> Grid {
        let p = self.render_probability_excluding(geom, exclude);
        Grid::new(geom.grid_h, geom.grid_w, GridKind::LogDensity, p.iter().map(|v| v.max(1e-300).ln()).collect())
            .expect("geometry sized")
    }

    /// Number of scalar hyperparameters (bandwidths, stds, free mixture weights).
    pub fn hyperparameter_count(&self) -> usize {
        match &self.kind {
            CenterBiasKind::Mixture(m) => match m.variant {
                CenterBiasVariant::KdeUniform => 2,
                CenterBiasVariant::GaussianUniform => 3,
                CenterBiasVariant::KdeGaussianUniform => 5,
            },
            CenterBiasKind::Average(members) => members.iter().map(|m| m.hyperparameter_count()).sum(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("centerbias").to_string();
        let dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut counter = 0usize;
        let stored = store(self, &dir, &stem, &mut counter)?;
        crate::io::write_json(path, &stored)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let stored: StoredCenterBias = crate::io::read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        restore(stored, &dir)
    }
}

impl MixtureCenterBias {
    fn render(&self, geom: &GridGeometry, exclude: Option<&str>) -> Vec<f64> {
        let cells = geom.cells();
        let [mut wk, mut wg, wu] = self.weights.as_array();
        let mut out = vec![wu / cells as f64; cells];

        let kde = if wk > 0.0 && !self.support.is_empty() {
            let skip = exclude.and_then(|id| self.sources.iter().position(|s| s == id)).map(|i| i as u32);
            let keep: Vec<usize> = (0..self.support.len())
                .filter(|&i| Some(self.support_source[i]) != skip)
                .collect();
            if keep.is_empty() {
                None
            } else {
                let pts: Vec<[f64; 2]> = keep.iter().map(|&i| self.support[i]).collect();
                let tables = KernelTables::new(geom, self.bandwidth_dva, &pts);
                let mut s = tables.surface(0..pts.len());
                let n = pts.len() as f64;
                s.iter_mut().for_each(|v| *v /= n);
                Some(s)
            }
        } else {
            None
        };
        if kde.is_none() && wk > 0.0 {
            // no support left: spread the KDE mass over the other components
            let rest = wg + wu;
            if rest > 0.0 {
                let scale = 1.0 / rest;
                out.iter_mut().for_each(|v| *v *= scale);
                wg *= scale;
            } else {
                out.iter_mut().for_each(|v| *v = 1.0 / cells as f64);
            }
            wk = 0.0;
        }
        if let Some(s) = kde {
            for (o, v) in out.iter_mut().zip(s) {
                *o += wk * v;
            }
        }
        if wg > 0.0 {
            let gx = axis_gaussian(geom.grid_w, 0.5, self.std_x);
            let gy = axis_gaussian(geom.grid_h, 0.5, self.std_y);
            for (r, &a) in gy.iter().enumerate() {
                for (c, &b) in gx.iter().enumerate() {
                    out[r * geom.grid_w + c] += wg * a * b;
                }
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredCenterBias {
    Mixture {
        fitted_on: String,
        variant: CenterBiasVariant,
        bandwidth_dva: f64,
        std_x: f64,
        std_y: f64,
        weights: MixtureWeights,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support_file: Option<PathBuf>,
    },
    Average {
        fitted_on: String,
        members: Vec<StoredCenterBias>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct SupportRow {
    x: f64,
    y: f64,
    source: String,
}

fn store(model: &CenterBiasModel, dir: &Path, stem: &str, counter: &mut usize) -> Result<StoredCenterBias> {
    match &model.kind {
        CenterBiasKind::Mixture(m) => {
            let support_file = if m.support.is_empty() {
                None
            } else {
                let name = PathBuf::from(format!("{stem}.support{}.csv", *counter));
                *counter += 1;
                let path = dir.join(&name);
                let mut w = csv::Writer::from_writer(Vec::new());
                for (p, &src) in m.support.iter().zip(&m.support_source) {
                    w.serialize(SupportRow {
                        x: p[0],
                        y: p[1],
                        source: m.sources[src as usize].clone(),
                    })
                    .map_err(|e| SalError::csv(&path, e))?;
                }
                let bytes = w.into_inner().map_err(|e| data_err!("csv flush: {e}"))?;
                crate::io::write_atomic(&path, &bytes)?;
                Some(name)
            };
            Ok(StoredCenterBias::Mixture {
                fitted_on: model.fitted_on.clone(),
                variant: m.variant,
                bandwidth_dva: m.bandwidth_dva,
                std_x: m.std_x,
                std_y: m.std_y,
                weights: m.weights,
                support_file,
            })
        }
        CenterBiasKind::Average(members) => Ok(StoredCenterBias::Average {
            fitted_on: model.fitted_on.clone(),
            members: members
                .iter()
                .map(|m| store(m, dir, stem, counter))
                .collect::<Result<_>>()?,
        }),
    }
}

fn restore(stored: StoredCenterBias, dir: &Path) -> Result<CenterBiasModel> {
    match stored {
        StoredCenterBias::Mixture {
            fitted_on,
            variant,
            bandwidth_dva,
            std_x,
            std_y,
            weights,
            support_file,
        } => {
            let mut support = Vec::new();
            let mut support_source = Vec::new();
            let mut sources: Vec<String> = Vec::new();
            if let Some(file) = support_file {
                let path = dir.join(file);
                let mut r = csv::Reader::from_path(&path).map_err(|e| SalError::csv(&path, e))?;
                let mut index = std::collections::HashMap::new();
                for row in r.deserialize::<SupportRow>() {
                    let row = row.map_err(|e| SalError::csv(&path, e))?;
                    let next = sources.len() as u32;
                    let id = *index.entry(row.source.clone()).or_insert_with(|| {
                        sources.push(row.source.clone());
                        next
                    });
                    support.push([row.x, row.y]);
                    support_source.push(id);
                }
            }
            let model = CenterBiasModel {
                fitted_on,
                kind: CenterBiasKind::Mixture(MixtureCenterBias {
                    variant,
                    bandwidth_dva,
                    std_x,
                    std_y,
                    weights,
                    support,
                    support_source,
                    sources,
                }),
            };
            model.validate()?;
            Ok(model)
        }
        StoredCenterBias::Average { fitted_on, members } => Ok(CenterBiasModel {
            fitted_on,
            kind: CenterBiasKind::Average(members.into_iter().map(|m| restore(m, dir)).collect::<Result<_>>()?),
        }),
    }
}

/// Averages center bias models: the rendered density of the result is the
/// arithmetic mean of the member densities on every grid.
pub fn average_centerbias(models: &[CenterBiasModel]) -> Result<CenterBiasModel> {
    match models {
        [] => Err(data_err!("cannot average zero center bias models")),
        [single] => Ok(single.clone()),
        many => Ok(CenterBiasModel {
            fitted_on: many.iter().map(|m| m.fitted_on.as_str()).collect::<Vec<_>>().join("+"),
            kind: CenterBiasKind::Average(many.to_vec()),
        }),
    }
}

/// Collects normalized fixation positions (and their stimulus ids) of a dataset.
pub(crate) fn normalized_support(ds: &FixationDataset) -> (Vec<[f64; 2]>, Vec<u32>, Vec<String>) {
    let index = ds.stimulus_index();
    let mut support = Vec::with_capacity(ds.len());
    let mut source = Vec::with_capacity(ds.len());
    for f in &ds.fixations {
        let i = index[f.stimulus_id.as_str()];
        let s = &ds.stimuli[i];
        support.push([f.x / s.width_px as f64, f.y / s.height_px as f64]);
        source.push(i as u32);
    }
    let sources = ds.stimuli.iter().map(|s| s.stimulus_id.clone()).collect();
    (support, source, sources)
}

/// Center bias used as a saliency model. With `leave_one_out` set, the KDE
/// support of the evaluated stimulus is left out (the standard baseline).
#[derive(Debug, Clone)]
pub struct CenterBiasPredictor {
    pub model: CenterBiasModel,
    pub downscale: usize,
    pub leave_one_out: bool,
}

impl SaliencyPredictor for CenterBiasPredictor {
    fn predict(&self, ds: &FixationDataset, index: usize) -> Result<(Grid, GridGeometry)> {
        let s = &ds.stimuli[index];
        let geom = GridGeometry::downscaled(s.width_px, s.height_px, s.px_per_dva, self.downscale);
        let exclude = self.leave_one_out.then_some(s.stimulus_id.as_str());
        let p = self.model.render_probability_excluding(&geom, exclude);
        Ok((Grid::new(geom.grid_h, geom.grid_w, GridKind::Probability, p)?, geom))
    }
}
