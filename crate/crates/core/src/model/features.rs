use super::scales::ScaleSpec;
use crate::dataset::{FixationDataset, StimulusMeta};
use crate::error::{data_err, shape_err, Result};
use crate::grid::{gaussian_blur, read_fmap, Grid, GridKind, GridStack};
use crate::image::Image;
use rayon::prelude::*;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

/// Deterministic map from (stimulus, scale) to a feature stack.
pub trait FeatureProvider: Sync {
    fn id(&self) -> String;
    fn channels(&self) -> usize;
    /// Features of the stimulus resampled to `scale`, at that scale's resolution
    /// (or whatever resolution the provider works at).
    fn features(&self, meta: &StimulusMeta, scale: &ScaleSpec) -> Result<GridStack>;
}

/// Size of the feature grid of a stimulus: 1/8 of native, rounded up.
pub fn feature_grid_size(meta: &StimulusMeta) -> (usize, usize) {
    (meta.height_px.div_ceil(8), meta.width_px.div_ceil(8))
}

/// Eight hand-crafted channels: intensity, Sobel magnitude, 5x5 local std,
/// three difference-of-Gaussians and two color-opponency maps.
#[derive(Debug, Clone, Default)]
pub struct BuiltinFeatures {
    images: HashMap<String, Arc<Image>>,
}

pub const BUILTIN_CHANNELS: usize = 8;

impl BuiltinFeatures {
    /// Provider that loads images from the stimulus `image_path`.
    pub fn new() -> Self {
        Self::default()
    }

    /// Provider backed by in-memory images keyed by stimulus id.
    pub fn with_images(images: HashMap<String, Arc<Image>>) -> Self {
        BuiltinFeatures { images }
    }

    fn image(&self, meta: &StimulusMeta) -> Result<Arc<Image>> {
        if let Some(img) = self.images.get(&meta.stimulus_id) {
            return Ok(img.clone());
        }
        let path = meta
            .image_path
            .as_ref()
            .ok_or_else(|| data_err!("stimulus {} has no image", meta.stimulus_id))?;
        Ok(Arc::new(Image::load_pnm(path)?))
    }
}

fn clamp_at(v: &[f64], h: usize, w: usize, r: isize, c: isize) -> f64 {
    let r = r.clamp(0, h as isize - 1) as usize;
    let c = c.clamp(0, w as isize - 1) as usize;
    v[r * w + c]
}

fn sobel_magnitude(g: &Grid) -> Grid {
    let (h, w) = g.shape();
    let v = g.values();
    Grid::from_fn(h, w, GridKind::Feature, |r, c| {
        let (r, c) = (r as isize, c as isize);
        let p = |dr: isize, dc: isize| clamp_at(v, h, w, r + dr, c + dc);
        let gx = p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1);
        let gy = p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1);
        (gx * gx + gy * gy).sqrt()
    })
}

fn local_std(g: &Grid, radius: isize) -> Grid {
    let (h, w) = g.shape();
    let v = g.values();
    let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    Grid::from_fn(h, w, GridKind::Feature, |r, c| {
        let window = || {
            (-radius..=radius).flat_map(move |dr| {
                (-radius..=radius).map(move |dc| clamp_at(v, h, w, r as isize + dr, c as isize + dc))
            })
        };
        let m = window().sum::<f64>() / n;
        (window().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
    })
}

fn difference(a: &Grid, b: &Grid) -> Grid {
    Grid::new(
        a.height(),
        a.width(),
        GridKind::Feature,
        a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect(),
    )
    .expect("same shape")
}

/// Builtin channels of an image at its own resolution.
pub fn lowlevel_features(img: &Image) -> GridStack {
    let gray = img.gray().with_kind(GridKind::Feature);
    let blurred: Vec<Grid> = [1.0, 2.0, 4.0, 8.0].iter().map(|&s| gaussian_blur(&gray, s)).collect();
    let (h, w) = gray.shape();
    let (rg, by) = if img.is_color() {
        let p = img.planes();
        let rg = difference(&p[0], &p[1]);
        let by = Grid::from_fn(h, w, GridKind::Feature, |r, c| {
            p[2].get(r, c) - 0.5 * (p[0].get(r, c) + p[1].get(r, c))
        });
        (rg, by)
    } else {
        (
            Grid::filled(h, w, GridKind::Feature, 0.0),
            Grid::filled(h, w, GridKind::Feature, 0.0),
        )
    };
    let channels = vec![
        sobel_magnitude(&gray),
        local_std(&gray, 2),
        difference(&blurred[0], &blurred[1]),
        difference(&blurred[1], &blurred[2]),
        difference(&blurred[2], &blurred[3]),
        rg,
        by,
    ];
    let mut all = vec![gray];
    all.extend(channels);
    GridStack::from_grids(&all).expect("same shape")
}

impl FeatureProvider for BuiltinFeatures {
    fn id(&self) -> String {
        "builtin_lowlevel".into()
    }

    fn channels(&self) -> usize {
        BUILTIN_CHANNELS
    }

    fn features(&self, meta: &StimulusMeta, scale: &ScaleSpec) -> Result<GridStack> {
        let img = self.image(meta)?;
        if img.width != meta.width_px || img.height != meta.height_px {
            return Err(data_err!("image of {} does not match its declared size", meta.stimulus_id));
        }
        let (w, h) = scale.target_size(meta)?;
        Ok(lowlevel_features(&img.resized(w, h)))
    }
}

/// Features read from `<dir>/<stimulus_id>/<scale_tag>.fmap`.
#[derive(Debug, Clone)]
pub struct PrecomputedFeatures {
    pub dir: PathBuf,
    pub channels: usize,
}

impl PrecomputedFeatures {
    /// Opens a feature directory; the channel count is taken from the first
    /// file found unless given.
    pub fn open(dir: impl Into<PathBuf>, ds: &FixationDataset, scales: &[ScaleSpec]) -> Result<Self> {
        let dir = dir.into();
        let (Some(s), Some(scale)) = (ds.stimuli.first(), scales.first()) else {
            return Err(data_err!("no stimuli or scales to probe features"));
        };
        let probe = read_fmap(&dir.join(&s.stimulus_id).join(format!("{}.fmap", scale.tag())))?;
        Ok(PrecomputedFeatures {
            dir,
            channels: probe.channels(),
        })
    }
}

impl FeatureProvider for PrecomputedFeatures {
    fn id(&self) -> String {
        format!("precomputed:{}", self.dir.display())
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn features(&self, meta: &StimulusMeta, scale: &ScaleSpec) -> Result<GridStack> {
        let path = self.dir.join(&meta.stimulus_id).join(format!("{}.fmap", scale.tag()));
        let stack = read_fmap(&path)?;
        if stack.channels() != self.channels {
            return Err(shape_err!(
                "{} has {} channels, expected {}",
                path.display(),
                stack.channels(),
                self.channels
            ));
        }
        Ok(stack)
    }
}

/// Convex combination of per-scale stacks (all of one shape).
pub fn average_features(stacks: &[GridStack], weights: &[f64]) -> Result<GridStack> {
    let first = stacks.first().ok_or_else(|| data_err!("no scales"))?;
    if stacks.len() != weights.len() {
        return Err(shape_err!("{} scales but {} weights", stacks.len(), weights.len()));
    }
    let mut out = GridStack::zeros(first.channels(), first.height(), first.width());
    for (s, &w) in stacks.iter().zip(weights) {
        if s.values().len() != out.values().len() || s.channels() != first.channels() {
            return Err(shape_err!("per-scale feature stacks differ in shape"));
        }
        for (o, v) in out.values_mut().iter_mut().zip(s.values()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Provider features of one stimulus at every scale, resized to the
/// 1/8 feature grid.
pub fn scale_stacks(provider: &dyn FeatureProvider, meta: &StimulusMeta, scales: &[ScaleSpec]) -> Result<Vec<GridStack>> {
    let (h8, w8) = feature_grid_size(meta);
    scales
        .iter()
        .map(|s| {
            let f = provider.features(meta, s)?;
            if f.channels() != provider.channels() {
                return Err(shape_err!(
                    "provider returned {} channels for {} at {s}, expected {}",
                    f.channels(),
                    meta.stimulus_id,
                    provider.channels()
                ));
            }
            Ok(f.resized(h8, w8))
        })
        .collect()
}

/// Averaged features of one stimulus under the given scale weights.
pub fn extract_and_average(
    provider: &dyn FeatureProvider,
    meta: &StimulusMeta,
    scales: &[ScaleSpec],
    weights: &[f64],
) -> Result<GridStack> {
    average_features(&scale_stacks(provider, meta, scales)?, weights)
}

/// Per-scale feature stacks of every stimulus, computed once.
#[derive(Debug, Clone, Default)]
pub struct FeatureBank {
    pub scales: Vec<ScaleSpec>,
    pub channels: usize,
    entries: HashMap<String, Arc<Vec<GridStack>>>,
}

impl FeatureBank {
    pub fn build(provider: &dyn FeatureProvider, ds: &FixationDataset, scales: &[ScaleSpec]) -> Result<Self> {
        let stacks: Vec<Vec<GridStack>> = ds
            .stimuli
            .par_iter()
            .map(|m| scale_stacks(provider, m, scales))
            .collect::<Result<_>>()?;
        Ok(FeatureBank {
            scales: scales.to_vec(),
            channels: provider.channels(),
            entries: ds
                .stimuli
                .iter()
                .zip(stacks)
                .map(|(m, s)| (m.stimulus_id.clone(), Arc::new(s)))
                .collect(),
        })
    }

    /// Adds another dataset's entries (same scales and channels required).
    pub fn extend(&mut self, other: FeatureBank) -> Result<()> {
        if self.entries.is_empty() {
            *self = other;
            return Ok(());
        }
        if other.scales != self.scales || other.channels != self.channels {
            return Err(shape_err!("feature banks differ in scales or channels"));
        }
        self.entries.extend(other.entries);
        Ok(())
    }

    pub fn get(&self, stimulus_id: &str) -> Result<&[GridStack]> {
        self.entries
            .get(stimulus_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| data_err!("no features for stimulus {stimulus_id}"))
    }
}
