use super::bias::DatasetBiasParams;
use super::features::{average_features, FeatureBank};
use super::readout::{ReadoutParams, ReadoutTrace};
use crate::centerbias::CenterBiasModel;
use crate::dataset::{FixationDataset, StimulusMeta};
use crate::error::{shape_err, Result, SalError};
use crate::grid::{
    bilinear_resize, bilinear_resize_adjoint, blur_sigma_adjoint, gaussian_blur, gaussian_blur_adjoint, softmax_normalize,
    Grid, GridGeometry, GridKind, GridStack,
};
use crate::metrics::SaliencyPredictor;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// The output distribution lives on a grid at half the native resolution.
pub const OUTPUT_DOWNSCALE: usize = 2;

pub fn output_geometry(meta: &StimulusMeta) -> GridGeometry {
    GridGeometry::downscaled(meta.width_px, meta.height_px, meta.px_per_dva, OUTPUT_DOWNSCALE)
}

/// Log center bias renders keyed by output geometry.
#[derive(Debug)]
pub struct CenterBiasCache {
    model: CenterBiasModel,
    renders: Mutex<HashMap<(usize, usize, u64, usize, usize), Arc<Grid>>>,
}

impl CenterBiasCache {
    pub fn new(model: CenterBiasModel) -> Self {
        CenterBiasCache {
            model,
            renders: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &CenterBiasModel {
        &self.model
    }

    pub fn log_density(&self, geom: &GridGeometry) -> Arc<Grid> {
        if let Some(g) = self.renders.lock().expect("cache lock").get(&geom.key()) {
            return g.clone();
        }
        let g = Arc::new(self.model.render(geom));
        self.renders.lock().expect("cache lock").insert(geom.key(), g.clone());
        g
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub geom: GridGeometry,
    pub logits: Grid,
    weights: Vec<f64>,
    readout: ReadoutTrace,
    small_shape: (usize, usize),
    upsampled: Grid,
    scaled: Grid,
    sigma_px: f64,
    log_cb: Arc<Grid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub readout: Vec<f64>,
    /// Same layout as [`DatasetBiasParams::to_flat`].
    pub bias: Vec<f64>,
}

/// Blurs wider than this many output cells are treated as divergence.
const MAX_SIGMA_PX: f64 = 1e4;

/// Logits of the fixation distribution for one stimulus.
///
/// `stacks` are the per-scale features on the 1/8 grid; `log_cb` is the
/// center bias log density on the output grid.
pub fn forward(
    stacks: &[GridStack],
    meta: &StimulusMeta,
    bias: &DatasetBiasParams,
    readout: &ReadoutParams,
    log_cb: Arc<Grid>,
) -> Result<ForwardTrace> {
    let geom = output_geometry(meta);
    if log_cb.shape() != (geom.grid_h, geom.grid_w) {
        return Err(shape_err!("center bias render does not match the output grid"));
    }
    let sigma_px = bias.sigma_dva() * geom.grid_px_per_dva();
    if !(sigma_px > 0.0 && sigma_px <= MAX_SIGMA_PX) || !bias.priority().is_finite() || !bias.cb_weight.is_finite() {
        return Err(SalError::Numerical(format!(
            "bias parameters out of range (sigma {sigma_px} px, priority {}, weight {})",
            bias.priority(),
            bias.cb_weight
        )));
    }
    let weights = bias.scale_weights();
    let fbar = average_features(stacks, &weights)?;
    let (s, readout_trace) = readout.forward_traced(&fbar)?;
    let upsampled = bilinear_resize(&s, geom.grid_h, geom.grid_w);
    let scaled = upsampled.scaled(bias.priority());
    let blurred = gaussian_blur(&scaled, sigma_px);
    let beta = bias.cb_weight;
    let logits = Grid::new(
        geom.grid_h,
        geom.grid_w,
        GridKind::Logits,
        blurred.values().iter().zip(log_cb.values()).map(|(b, c)| b + beta * c).collect(),
    )?;
    if logits.values().iter().any(|v| !v.is_finite()) {
        return Err(SalError::Numerical(format!("non-finite logits for {}", meta.stimulus_id)));
    }
    Ok(ForwardTrace {
        geom,
        logits,
        weights,
        readout: readout_trace,
        small_shape: s.shape(),
        upsampled,
        scaled,
        sigma_px,
        log_cb,
    })
}

/// Gradients of `sum(dlogits * logits)` with respect to readout and bias
/// scalars. `stacks` must be the ones passed to [`forward`].
pub fn backward(
    trace: &ForwardTrace,
    stacks: &[GridStack],
    bias: &DatasetBiasParams,
    readout: &ReadoutParams,
    dlogits: &Grid,
) -> HeadGradients {
    let d_beta: f64 = dlogits.values().iter().zip(trace.log_cb.values()).map(|(g, c)| g * c).sum();
    let d_sigma_px = blur_sigma_adjoint(&trace.scaled, dlogits, trace.sigma_px);
    let d_scaled = gaussian_blur_adjoint(dlogits, trace.sigma_px);
    let p = bias.priority();
    let d_p: f64 = d_scaled.values().iter().zip(trace.upsampled.values()).map(|(a, b)| a * b).sum();
    let d_up = d_scaled.scaled(p);
    let d_s = bilinear_resize_adjoint(&d_up, trace.small_shape.0, trace.small_shape.1);
    let (d_readout, d_fbar) = readout.backward(&trace.readout, &d_s);
    let d_lambda: Vec<f64> = stacks
        .iter()
        .map(|f| f.values().iter().zip(d_fbar.values()).map(|(a, b)| a * b).sum())
        .collect();
    let mean: f64 = trace.weights.iter().zip(&d_lambda).map(|(w, d)| w * d).sum();
    let mut d_bias: Vec<f64> = trace.weights.iter().zip(&d_lambda).map(|(w, d)| w * (d - mean)).collect();
    d_bias.extend([d_p * p, d_sigma_px * trace.sigma_px, d_beta]);
    HeadGradients {
        readout: d_readout,
        bias: d_bias,
    }
}

/// The full model for one dataset's bias parameters.
pub struct BiasedModel<'a> {
    pub readout: &'a ReadoutParams,
    pub bias: &'a DatasetBiasParams,
    pub bank: &'a FeatureBank,
    cache: Arc<CenterBiasCache>,
}

impl<'a> BiasedModel<'a> {
    pub fn new(readout: &'a ReadoutParams, bias: &'a DatasetBiasParams, bank: &'a FeatureBank) -> Self {
        let cache = Arc::new(CenterBiasCache::new(bias.centerbias.clone()));
        BiasedModel {
            readout,
            bias,
            bank,
            cache,
        }
    }

    /// Reuses renders of a cache built from the same center bias model.
    pub fn with_cache(
        readout: &'a ReadoutParams,
        bias: &'a DatasetBiasParams,
        bank: &'a FeatureBank,
        cache: Arc<CenterBiasCache>,
    ) -> Self {
        BiasedModel {
            readout,
            bias,
            bank,
            cache,
        }
    }

    pub fn forward(&self, meta: &StimulusMeta) -> Result<ForwardTrace> {
        let stacks = self.bank.get(&meta.stimulus_id)?;
        let geom = output_geometry(meta);
        forward(stacks, meta, self.bias, self.readout, self.cache.log_density(&geom))
    }

    pub fn predict_meta(&self, meta: &StimulusMeta) -> Result<Grid> {
        softmax_normalize(&self.forward(meta)?.logits)
    }
}

impl SaliencyPredictor for BiasedModel<'_> {
    fn predict(&self, ds: &FixationDataset, index: usize) -> Result<(Grid, GridGeometry)> {
        let meta = &ds.stimuli[index];
        Ok((self.predict_meta(meta)?, output_geometry(meta)))
    }
}
