//! Dense 2D numeric primitives used along the prediction and training path.
//!
//! Every linear operation on the training path has an explicit adjoint
//! (`*_adjoint`) so the loss gradient can be assembled by hand without a
//! general autodiff graph.

mod blur;
mod fmap;
mod resize;
pub(crate) mod sample;
mod softmax;

pub use blur::{blur_sigma_adjoint, gaussian_blur, gaussian_blur_adjoint, gaussian_blur_dva, GaussianKernel, MIN_SIGMA_PX};
pub use fmap::{encode_fmap, read_fmap, write_fmap};
pub use resize::{bilinear_resize, bilinear_resize_adjoint};
pub use sample::sample_fixations;
pub use softmax::{log_softmax, logsumexp, softmax_nll, softmax_nll_grad, softmax_normalize};

use crate::error::{data_err, shape_err, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Feature,
    Priority,
    Logits,
    LogDensity,
    Probability,
}

/// Row-major 2D field of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    kind: GridKind,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, kind: GridKind, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(shape_err!("grid dimensions must be positive, got {height}x{width}"));
        }
        if values.len() != height * width {
            return Err(shape_err!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            ));
        }
        Ok(Grid {
            height,
            width,
            kind,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, kind: GridKind, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Grid {
            height,
            width,
            kind,
            values: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, kind: GridKind, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Grid {
            height,
            width,
            kind,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn kind(&self) -> GridKind {
        self.kind
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn with_kind(mut self, kind: GridKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn map(&self, kind: GridKind, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            kind,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Grid {
        self.map(self.kind, |v| v * factor)
    }

    pub fn ensure_same_shape(&self, other: &Grid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }

    /// Checks the invariant attached to the grid's kind.
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| v.is_nan()) {
            return Err(data_err!("grid contains NaN"));
        }
        match self.kind {
            GridKind::Probability => {
                if self.values.iter().any(|&v| v < 0.0) {
                    return Err(data_err!("probability grid has negative entries"));
                }
                let s = self.sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(data_err!("probability grid sums to {s}"));
                }
            }
            GridKind::LogDensity => {
                let l = logsumexp(&self.values);
                if l.abs() > 1e-6 {
                    return Err(data_err!("log-density grid has logsumexp {l}"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Natural-log density at continuous pixel coordinates of this grid.
    ///
    /// Coordinates are floored to the containing pixel. Probability grids are
    /// clamped at `1e-300` before taking the log.
    pub fn log_density_at(&self, x: f64, y: f64) -> Result<f64> {
        if !(x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64) {
            return Err(data_err!(
                "coordinate ({x}, {y}) outside {}x{} grid",
                self.height,
                self.width
            ));
        }
        let v = self.get(y.floor() as usize, x.floor() as usize);
        match self.kind {
            GridKind::Probability => Ok(v.max(1e-300).ln()),
            _ => Ok(v),
        }
    }
}

/// Maps a native-resolution coordinate onto a cell index of a grid that spans
/// the same image at a different resolution.
pub fn cell_index(coord: f64, native_extent: usize, grid_extent: usize) -> usize {
    let i = (coord * grid_extent as f64 / native_extent as f64).floor();
    (i.max(0.0) as usize).min(grid_extent - 1)
}

/// A stack of equally shaped channels stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl GridStack {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(shape_err!("stack dimensions must be positive"));
        }
        if values.len() != channels * height * width {
            return Err(shape_err!(
                "stack {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                values.len()
            ));
        }
        Ok(GridStack {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        GridStack {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn from_grids(grids: &[Grid]) -> Result<Self> {
        let first = grids.first().ok_or_else(|| shape_err!("empty grid list"))?;
        let (h, w) = first.shape();
        let mut values = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            first.ensure_same_shape(g)?;
            if g.kind() != first.kind() {
                return Err(shape_err!("stack members differ in kind"));
            }
            values.extend_from_slice(g.values());
        }
        GridStack::new(grids.len(), h, w, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.pixels();
        &self.values[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.pixels();
        &mut self.values[c * p..(c + 1) * p]
    }

    pub fn channel_grid(&self, c: usize) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            kind: GridKind::Feature,
            values: self.channel(c).to_vec(),
        }
    }

    /// Resizes every channel bilinearly.
    pub fn resized(&self, out_h: usize, out_w: usize) -> GridStack {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let mut values = Vec::with_capacity(self.channels * out_h * out_w);
        for c in 0..self.channels {
            values.extend(bilinear_resize(&self.channel_grid(c), out_h, out_w).into_values());
        }
        GridStack {
            channels: self.channels,
            height: out_h,
            width: out_w,
            values,
        }
    }
}


/// How an image of `width_px x height_px` maps onto a (possibly coarser)
/// density grid of `grid_w x grid_h` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width_px: usize,
    pub height_px: usize,
    pub px_per_dva: f64,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl GridGeometry {
    /// Grid at `1/downscale` of native resolution (dimensions rounded up).
    pub fn downscaled(width_px: usize, height_px: usize, px_per_dva: f64, downscale: usize) -> Self {
        let d = downscale.max(1);
        GridGeometry {
            width_px,
            height_px,
            px_per_dva,
            grid_w: width_px.div_ceil(d),
            grid_h: height_px.div_ceil(d),
        }
    }

    pub fn cells(&self) -> usize {
        self.grid_w * self.grid_h
    }

    /// Cell index of a native-resolution coordinate.
    pub fn cell_of(&self, x: f64, y: f64) -> usize {
        cell_index(y, self.height_px, self.grid_h) * self.grid_w + cell_index(x, self.width_px, self.grid_w)
    }

    /// Pixels per dva measured on the grid.
    pub fn grid_px_per_dva(&self) -> f64 {
        self.px_per_dva * self.grid_w as f64 / self.width_px as f64
    }

    /// Added to a cell log-probability it gives the log density per native
    /// pixel, assuming mass is uniform within each cell.
    pub fn log_cell_to_pixel(&self) -> f64 {
        (self.cells() as f64 / (self.width_px * self.height_px) as f64).ln()
    }

    /// Key usable for caching renders across stimuli of equal geometry.
    pub fn key(&self) -> (usize, usize, u64, usize, usize) {
        (self.width_px, self.height_px, self.px_per_dva.to_bits(), self.grid_w, self.grid_h)
    }
}
