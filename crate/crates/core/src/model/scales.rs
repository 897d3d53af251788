use crate::dataset::StimulusMeta;
use crate::error::{config_err, data_err, Result, SalError};
use crate::image::Image;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    /// Image resampled to a fixed number of pixels per dva.
    AbsolutePxPerDva,
    /// Image resampled so its larger side has a fixed pixel count.
    RelativePx,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub kind: ScaleKind,
    pub value: f64,
}

impl ScaleSpec {
    pub fn absolute(px_per_dva: f64) -> Self {
        ScaleSpec {
            kind: ScaleKind::AbsolutePxPerDva,
            value: px_per_dva,
        }
    }

    pub fn relative(px: f64) -> Self {
        ScaleSpec {
            kind: ScaleKind::RelativePx,
            value: px,
        }
    }

    /// File-name tag, e.g. `abs_17.5` or `rel_512`.
    pub fn tag(&self) -> String {
        self.to_string()
    }

    /// Size of the image resampled to this scale.
    pub fn target_size(&self, meta: &StimulusMeta) -> Result<(usize, usize)> {
        let factor = match self.kind {
            ScaleKind::AbsolutePxPerDva => self.value / meta.px_per_dva,
            ScaleKind::RelativePx => self.value / meta.width_px.max(meta.height_px) as f64,
        };
        let w = (meta.width_px as f64 * factor).round();
        let h = (meta.height_px as f64 * factor).round();
        if w < 1.0 || h < 1.0 {
            return Err(data_err!("scale {self} shrinks {} below one pixel", meta.stimulus_id));
        }
        Ok((w as usize, h as usize))
    }
}

impl fmt::Display for ScaleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScaleKind::AbsolutePxPerDva => write!(f, "abs_{}", self.value),
            ScaleKind::RelativePx => write!(f, "rel_{}", self.value),
        }
    }
}

impl std::str::FromStr for ScaleSpec {
    type Err = SalError;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, v) = s
            .split_once('_')
            .ok_or_else(|| config_err!("scale tag {s} is not of the form abs_<v> or rel_<v>"))?;
        let value: f64 = v.parse().map_err(|_| config_err!("bad scale value in {s}"))?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(config_err!("scale value must be positive in {s}"));
        }
        match kind {
            "abs" => Ok(ScaleSpec::absolute(value)),
            "rel" => Ok(ScaleSpec::relative(value)),
            _ => Err(config_err!("unknown scale kind in {s}")),
        }
    }
}

/// The ten resolutions of the full model.
pub fn default_scales() -> Vec<ScaleSpec> {
    [5.0, 10.0, 17.5, 24.0, 30.0]
        .into_iter()
        .map(ScaleSpec::absolute)
        .chain([128.0, 256.0, 512.0, 768.0, 1024.0].into_iter().map(ScaleSpec::relative))
        .collect()
}

pub fn validate_scales(scales: &[ScaleSpec]) -> Result<()> {
    if scales.is_empty() {
        return Err(config_err!("at least one scale must be enabled"));
    }
    for s in scales {
        if !(s.value > 0.0 && s.value.is_finite()) {
            return Err(config_err!("scale value must be positive, got {}", s.value));
        }
    }
    Ok(())
}

/// Resamples `image` to each scale (bilinear, aspect preserved).
pub fn build_scale_pyramid(image: &Image, meta: &StimulusMeta, scales: &[ScaleSpec]) -> Result<Vec<Image>> {
    if image.width != meta.width_px || image.height != meta.height_px {
        return Err(data_err!(
            "image {}x{} does not match stimulus {} ({}x{})",
            image.width,
            image.height,
            meta.stimulus_id,
            meta.width_px,
            meta.height_px
        ));
    }
    scales
        .iter()
        .map(|s| {
            let (w, h) = s.target_size(meta)?;
            Ok(image.resized(w, h))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absolute_half_resolution() {
        let meta = StimulusMeta::new("a", 1024, 768, 35.0);
        assert_eq!(ScaleSpec::absolute(17.5).target_size(&meta).unwrap(), (512, 384));
    }

    #[test]
    fn relative_max_side() {
        let meta = StimulusMeta::new("a", 800, 600, 30.0);
        assert_eq!(ScaleSpec::relative(256.0).target_size(&meta).unwrap(), (256, 192));
    }

    #[test]
    fn native_scale_is_identity() {
        let meta = StimulusMeta::new("a", 12, 10, 20.0);
        let data: Vec<f64> = (0..120).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let img = Image::new(12, 10, 1, data).unwrap();
        let p = build_scale_pyramid(&img, &meta, &[ScaleSpec::absolute(20.0), ScaleSpec::relative(12.0)]).unwrap();
        assert_eq!(p[0], img);
        assert_eq!(p[1], img);
    }

    #[test]
    fn tags_roundtrip() {
        for s in default_scales() {
            assert_eq!(s.tag().parse::<ScaleSpec>().unwrap(), s);
        }
        assert_eq!(ScaleSpec::absolute(17.5).tag(), "abs_17.5");
        assert_eq!(ScaleSpec::relative(512.0).tag(), "rel_512");
        assert!("abs_-1".parse::<ScaleSpec>().is_err());
        assert!("xyz_3".parse::<ScaleSpec>().is_err());
    }

    #[test]
    fn too_small_rejected() {
        let meta = StimulusMeta::new("a", 16, 16, 40.0);
        assert!(ScaleSpec::absolute(1.0).target_size(&meta).is_err());
    }
}
