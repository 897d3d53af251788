//! The planted-bias dataset pair and the harness settings tuned for it.

use super::{HarnessConfig, HarnessDataset};
use crate::dataset::{synth_dataset, SynthOutput, SynthSpec};
use crate::error::Result;
use crate::model::{FeatureBank, ScaleSpec};

pub fn fixture_scales() -> Vec<ScaleSpec> {
    vec![
        ScaleSpec::absolute(5.0),
        ScaleSpec::absolute(10.0),
        ScaleSpec::absolute(20.0),
        ScaleSpec::relative(24.0),
        ScaleSpec::relative(48.0),
    ]
}

/// Two 200-image datasets sharing a planted readout. They differ in blur
/// (0.5 vs 1.5 dva), center bias weight (0.5 vs 1.0) and scale weights.
pub fn planted_pair() -> Vec<(SynthSpec, u64)> {
    let a = SynthSpec {
        name: "A".into(),
        images: 200,
        scales: fixture_scales(),
        scale_weights: vec![0.4, 0.3, 0.1, 0.1, 0.1],
        priority: 30.0,
        sigma_dva: 0.5,
        cb_weight: 0.5,
        ..Default::default()
    };
    let b = SynthSpec {
        name: "B".into(),
        scale_weights: vec![0.1, 0.1, 0.1, 0.3, 0.4],
        sigma_dva: 1.5,
        cb_weight: 1.0,
        ..a.clone()
    };
    vec![(a, 1), (b, 2)]
}

/// Harness settings for [`planted_pair`]. The small learning rate keeps the
/// final softplus of the readout out of saturation.
pub fn planted_pair_config() -> HarnessConfig {
    let mut cfg = HarnessConfig::default();
    cfg.train.learning_rate = 0.003;
    cfg.train.decay_epochs = vec![10.0, 13.0, 14.0, 15.0];
    cfg.train.steps_per_epoch = Some(300);
    cfg
}

/// Builds harness datasets from synthetic specs with builtin features.
pub fn synth_harness_data(
    specs: &[(SynthSpec, u64)],
    scales: &[ScaleSpec],
    cfg: &HarnessConfig,
) -> Result<(Vec<HarnessDataset>, Vec<SynthOutput>)> {
    let mut data = Vec::new();
    let mut outputs = Vec::new();
    for (spec, seed) in specs {
        let o = synth_dataset(spec, *seed)?;
        let bank = FeatureBank::build(&o.provider(), &o.dataset, scales)?;
        data.push(HarnessDataset::new(o.dataset.clone(), bank, cfg)?);
        outputs.push(o);
    }
    Ok((data, outputs))
}
