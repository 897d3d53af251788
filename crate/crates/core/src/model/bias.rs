use crate::centerbias::{average_centerbias, CenterBiasModel};
use crate::error::{config_err, shape_err, Result, SalError};
use serde::{Deserialize, Serialize};

/// Default blur at initialization, in dva.
pub const INIT_SIGMA_DVA: f64 = 0.35;

/// Per-dataset bias parameters of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBiasParams {
    /// One logit per scale; the scale weights are their softmax.
    pub scale_logits: Vec<f64>,
    /// Priority scaling `p = exp(log_priority)`.
    pub log_priority: f64,
    /// Blur `sigma (dva) = exp(log_sigma)`.
    pub log_sigma: f64,
    /// Center bias weight (unconstrained).
    pub cb_weight: f64,
    pub centerbias: CenterBiasModel,
}

/// Scalar part of [`DatasetBiasParams`] as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasScalars {
    pub scale_logits: Vec<f64>,
    pub log_priority: f64,
    pub log_sigma: f64,
    pub cb_weight: f64,
}

pub fn softmax_weights(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Named groups of bias parameters that can be trained or frozen together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasGroup {
    Centerbias,
    Multiscale,
    Priority,
    CbWeight,
    Blur,
}

impl BiasGroup {
    pub const ALL: [BiasGroup; 5] = [
        BiasGroup::Centerbias,
        BiasGroup::Multiscale,
        BiasGroup::Priority,
        BiasGroup::CbWeight,
        BiasGroup::Blur,
    ];

    pub fn short(self) -> &'static str {
        match self {
            BiasGroup::Centerbias => "cb",
            BiasGroup::Multiscale => "ms",
            BiasGroup::Priority => "ps",
            BiasGroup::CbWeight => "cbw",
            BiasGroup::Blur => "bl",
        }
    }
}

impl std::str::FromStr for BiasGroup {
    type Err = SalError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cb" | "centerbias" => Ok(BiasGroup::Centerbias),
            "ms" | "multiscale" => Ok(BiasGroup::Multiscale),
            "ps" | "priority" => Ok(BiasGroup::Priority),
            "cbw" | "cbweight" => Ok(BiasGroup::CbWeight),
            "bl" | "blur" => Ok(BiasGroup::Blur),
            other => Err(config_err!("unknown bias group {other}")),
        }
    }
}

impl DatasetBiasParams {
    pub fn init(n_scales: usize, centerbias: CenterBiasModel) -> Self {
        DatasetBiasParams {
            scale_logits: vec![0.0; n_scales],
            log_priority: 0.0,
            log_sigma: INIT_SIGMA_DVA.ln(),
            cb_weight: 1.0,
            centerbias,
        }
    }

    pub fn scale_weights(&self) -> Vec<f64> {
        softmax_weights(&self.scale_logits)
    }

    pub fn priority(&self) -> f64 {
        self.log_priority.exp()
    }

    pub fn sigma_dva(&self) -> f64 {
        self.log_sigma.exp()
    }

    /// Number of scalar bias parameters (scales + priority + blur + weight).
    pub fn scalar_count(&self) -> usize {
        self.scale_logits.len() + 3
    }

    /// `[scale logits.., log_priority, log_sigma, cb_weight]`
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.scale_logits.clone();
        v.extend([self.log_priority, self.log_sigma, self.cb_weight]);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.scale_logits.len();
        assert_eq!(flat.len(), n + 3);
        self.scale_logits.copy_from_slice(&flat[..n]);
        self.log_priority = flat[n];
        self.log_sigma = flat[n + 1];
        self.cb_weight = flat[n + 2];
    }

    /// Group owning each flat scalar.
    pub fn flat_groups(&self) -> Vec<BiasGroup> {
        let mut g = vec![BiasGroup::Multiscale; self.scale_logits.len()];
        g.extend([BiasGroup::Priority, BiasGroup::Blur, BiasGroup::CbWeight]);
        g
    }

    pub fn scalars(&self) -> BiasScalars {
        BiasScalars {
            scale_logits: self.scale_logits.clone(),
            log_priority: self.log_priority,
            log_sigma: self.log_sigma,
            cb_weight: self.cb_weight,
        }
    }

    pub fn from_scalars(s: BiasScalars, centerbias: CenterBiasModel) -> Self {
        DatasetBiasParams {
            scale_logits: s.scale_logits,
            log_priority: s.log_priority,
            log_sigma: s.log_sigma,
            cb_weight: s.cb_weight,
            centerbias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_logits.is_empty() {
            return Err(shape_err!("bias parameters need at least one scale"));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(SalError::Numerical("non-finite bias parameter".into()));
        }
        self.centerbias.validate()
    }
}

/// Average of bias parameter sets: scale weights averaged and renormalized,
/// priority and blur averaged geometrically, center bias weight arithmetically,
/// center bias densities averaged.
pub fn average_bias_params(sets: &[&DatasetBiasParams]) -> Result<DatasetBiasParams> {
    let first = sets.first().ok_or_else(|| config_err!("no bias parameters to average"))?;
    if sets.len() == 1 {
        return Ok((*first).clone());
    }
    let n = first.scale_logits.len();
    if sets.iter().any(|s| s.scale_logits.len() != n) {
        return Err(shape_err!("bias parameters have different scale sets"));
    }
    let k = sets.len() as f64;
    let mut lambda = vec![0.0; n];
    for s in sets {
        for (a, w) in lambda.iter_mut().zip(s.scale_weights()) {
            *a += w / k;
        }
    }
    let z: f64 = lambda.iter().sum();
    let cbs: Vec<CenterBiasModel> = sets.iter().map(|s| s.centerbias.clone()).collect();
    Ok(DatasetBiasParams {
        scale_logits: lambda.iter().map(|l| (l / z).ln()).collect(),
        log_priority: sets.iter().map(|s| s.log_priority).sum::<f64>() / k,
        log_sigma: sets.iter().map(|s| s.log_sigma).sum::<f64>() / k,
        cb_weight: sets.iter().map(|s| s.cb_weight).sum::<f64>() / k,
        centerbias: average_centerbias(&cbs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(logits: Vec<f64>, sigma: f64) -> DatasetBiasParams {
        let mut p = DatasetBiasParams::init(logits.len(), CenterBiasModel::uniform("u"));
        p.scale_logits = logits;
        p.log_sigma = sigma.ln();
        p
    }

    #[test]
    fn single_average_is_identity() {
        let p = params(vec![0.3, -1.0], 0.7);
        assert_eq!(average_bias_params(&[&p]).unwrap(), p);
    }

    #[test]
    fn geometric_sigma_and_weight_average() {
        let a = params(vec![40.0, 0.0], 0.5);
        let b = params(vec![0.0, 40.0], 2.0);
        let avg = average_bias_params(&[&a, &b]).unwrap();
        assert!((avg.sigma_dva() - 1.0).abs() < 1e-12);
        let w = avg.scale_weights();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        let c = params(vec![0.0], 1.0);
        assert!(average_bias_params(&[&a, &c]).is_err());
    }

    #[test]
    fn weights_on_simplex_for_any_logits() {
        for logits in [vec![1000.0, -1000.0, 3.0], vec![-5.0; 4], vec![0.1, 0.2]] {
            let w = softmax_weights(&logits);
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_names() {
        for g in BiasGroup::ALL {
            assert_eq!(g.short().parse::<BiasGroup>().unwrap(), g);
        }
        assert!("xx".parse::<BiasGroup>().is_err());
    }
}
