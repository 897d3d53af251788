//! Gaussian kernel sums on a density grid.
//!
//! Every support point contributes a kernel integrated over each grid cell
//! and normalized over the image on its own, so a KDE over `n` points is the
//! average of `n` unit-mass bumps on any grid, and nested grids agree after
//! summing blocks. Kernels are isotropic in dva and separable, which turns
//! the surface into a sum of rank-one products.

use crate::grid::GridGeometry;
use libm::{erf, erfc};

/// Mass of a Gaussian with the given mean and std over `[a, b]`, evaluated
/// on the tail side so far-away cells keep relative precision.
fn interval_mass(a: f64, b: f64, mean: f64, std: f64) -> f64 {
    let k = std::f64::consts::FRAC_1_SQRT_2 / std;
    let (za, zb) = ((a - mean) * k, (b - mean) * k);
    if za >= 0.0 {
        0.5 * (erfc(za) - erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (erfc(-zb) - erfc(-za))
    } else {
        0.5 * (erf(zb) - erf(za))
    }
}

/// Gaussian mass of each of `n_cells` equal cells tiling the unit interval,
/// renormalized to sum 1. `mean` and `std` are in unit-interval coordinates.
pub(crate) fn axis_gaussian(n_cells: usize, mean: f64, std: f64) -> Vec<f64> {
    let n = n_cells as f64;
    let mut w: Vec<f64> = (0..n_cells)
        .map(|c| interval_mass(c as f64 / n, (c + 1) as f64 / n, mean, std))
        .collect();
    let z: f64 = w.iter().sum();
    if z > 0.0 {
        w.iter_mut().for_each(|v| *v /= z);
    } else {
        // mean far outside the interval: all mass on the nearest end cell
        let i = if mean < 0.5 { 0 } else { n_cells - 1 };
        w[i] = 1.0;
    }
    w
}

/// One row of per-point normalized 1D kernel masses per support point.
fn axis_kernels(coords: impl Iterator<Item = f64>, n_cells: usize, extent_px: usize, ppd: f64, bandwidth_dva: f64) -> Vec<f64> {
    let std = bandwidth_dva * ppd / extent_px as f64;
    coords.flat_map(|s| axis_gaussian(n_cells, s, std)).collect()
}

/// Separable kernel tables for a set of support points on one geometry.
pub(crate) struct KernelTables {
    pub grid_w: usize,
    pub grid_h: usize,
    /// `[point][column]`
    pub cols: Vec<f64>,
    /// `[point][row]`
    pub rows: Vec<f64>,
}

impl KernelTables {
    pub fn new(geom: &GridGeometry, bandwidth_dva: f64, support: &[[f64; 2]]) -> Self {
        let cols = axis_kernels(support.iter().map(|p| p[0]), geom.grid_w, geom.width_px, geom.px_per_dva, bandwidth_dva);
        let rows = axis_kernels(support.iter().map(|p| p[1]), geom.grid_h, geom.height_px, geom.px_per_dva, bandwidth_dva);
        KernelTables {
            grid_w: geom.grid_w,
            grid_h: geom.grid_h,
            cols,
            rows,
        }
    }

    /// Kernel mass of support point `s` in cell `cell`.
    #[inline]
    pub fn value(&self, s: usize, cell: usize) -> f64 {
        let r = cell / self.grid_w;
        let c = cell % self.grid_w;
        self.rows[s * self.grid_h + r] * self.cols[s * self.grid_w + c]
    }

    /// Sum of the kernels of the selected points over all cells.
    pub fn surface(&self, points: impl Iterator<Item = usize>) -> Vec<f64> {
        let (gw, gh) = (self.grid_w, self.grid_h);
        let mut out = vec![0.0; gw * gh];
        for s in points {
            let cols = &self.cols[s * gw..(s + 1) * gw];
            for (r, &b) in self.rows[s * gh..(s + 1) * gh].iter().enumerate() {
                if b < 1e-300 {
                    continue;
                }
                let dst = &mut out[r * gw..(r + 1) * gw];
                for (d, &a) in dst.iter_mut().zip(cols) {
                    *d += b * a;
                }
            }
        }
        out
    }
}
