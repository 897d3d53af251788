//! The bias-aware multiscale saliency model.
//!
//! Features are extracted at several resolutions, resized to 1/8 of the
//! image, averaged with per-dataset scale weights and decoded by a shared
//! readout into a priority map. The dataset bias head scales, upsamples and
//! blurs the priority map, adds the weighted log center bias and normalizes
//! with a softmax over the half-resolution output grid.

mod bias;
mod checkpoint;
mod features;
mod predict;
mod readout;
mod scales;

pub use bias::{average_bias_params, softmax_weights, BiasGroup, BiasScalars, DatasetBiasParams, INIT_SIGMA_DVA};
pub use checkpoint::{checkpoint_hash, ModelCheckpoint};
pub use features::{
    average_features, extract_and_average, feature_grid_size, lowlevel_features, scale_stacks, BuiltinFeatures,
    FeatureBank, FeatureProvider, PrecomputedFeatures, BUILTIN_CHANNELS,
};
pub use predict::{backward, forward, output_geometry, BiasedModel, CenterBiasCache, ForwardTrace, HeadGradients, OUTPUT_DOWNSCALE};
pub use readout::{ReadoutLayer, ReadoutParams, ReadoutTrace, LAYER_NORM_EPS, READOUT_WIDTHS};
pub use scales::{build_scale_pyramid, default_scales, validate_scales, ScaleKind, ScaleSpec};
