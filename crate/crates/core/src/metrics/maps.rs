use crate::dataset::FixationDataset;
use crate::error::Result;
use crate::grid::{gaussian_blur, Grid, GridGeometry, GridKind};

/// Fixation histogram of one stimulus on `geom`, blurred with `sigma_dva`
/// and normalized to sum 1.
pub fn empirical_map(ds: &FixationDataset, index: usize, geom: &GridGeometry, sigma_dva: f64) -> Grid {
    let id = &ds.stimuli[index].stimulus_id;
    let mut h = Grid::filled(geom.grid_h, geom.grid_w, GridKind::Probability, 0.0);
    for f in ds.fixations.iter().filter(|f| &f.stimulus_id == id) {
        h.values_mut()[geom.cell_of(f.x, f.y)] += 1.0;
    }
    let b = gaussian_blur(&h, sigma_dva * geom.grid_px_per_dva());
    let z = b.sum();
    if z > 0.0 {
        b.scaled(1.0 / z).with_kind(GridKind::Probability)
    } else {
        Grid::filled(geom.grid_h, geom.grid_w, GridKind::Probability, 1.0 / geom.cells() as f64)
    }
}

/// Mean and standard deviation; the deviation is exactly 0 for maps whose
/// spread is only rounding noise of the mean.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let s = var.sqrt();
    if v.iter().all(|&x| x == v[0]) || s <= 1e-12 * m.abs() {
        (m, 0.0)
    } else {
        (m, s)
    }
}

/// Z-scored prediction at each fixation cell; zeros for a constant map.
pub fn nss_values(pred: &Grid, cells: &[usize]) -> Vec<f64> {
    let (m, s) = mean_std(pred.values());
    if s == 0.0 {
        return vec![0.0; cells.len()];
    }
    cells.iter().map(|&c| (pred.values()[c] - m) / s).collect()
}

/// Pearson correlation of two maps (0 if either is constant).
pub fn cc(a: &Grid, b: &Grid) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (ma, sa) = mean_std(a.values());
    let (mb, sb) = mean_std(b.values());
    if sa == 0.0 || sb == 0.0 {
        return Ok(0.0);
    }
    let cov = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len() as f64;
    Ok(cov / (sa * sb))
}

/// `sum q ln(q / (p + 1e-12))` after normalizing both maps to unit sum.
pub fn kldiv(empirical: &Grid, pred: &Grid) -> Result<f64> {
    empirical.ensure_same_shape(pred)?;
    let zq = empirical.sum();
    let zp = pred.sum();
    Ok(empirical
        .values()
        .iter()
        .zip(pred.values())
        .filter(|(q, _)| **q > 0.0)
        .map(|(q, p)| {
            let q = q / zq;
            q * (q / (p / zp + 1e-12)).ln()
        })
        .sum())
}

/// Histogram intersection of the two sum-normalized maps.
pub fn sim(a: &Grid, b: &Grid) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let za = a.sum();
    let zb = b.sum();
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x / za).min(y / zb)).sum())
}
