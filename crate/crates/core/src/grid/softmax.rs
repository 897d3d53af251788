use super::{Grid, GridKind};
use crate::error::{data_err, Result};

pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_finite(logits: &Grid) -> Result<()> {
    if let Some(v) = logits.values().iter().find(|v| !v.is_finite()) {
        return Err(data_err!("non-finite logit {v}"));
    }
    Ok(())
}

/// `l - logsumexp(l)` as a normalized log-density grid.
pub fn log_softmax(logits: &Grid) -> Result<Grid> {
    check_finite(logits)?;
    let lse = logsumexp(logits.values());
    Ok(logits.map(GridKind::LogDensity, |v| v - lse))
}

/// Softmax over all pixels of the grid (max-subtracted).
pub fn softmax_normalize(logits: &Grid) -> Result<Grid> {
    check_finite(logits)?;
    let m = logits.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(GridKind::Probability, |v| (v - m).exp());
    let z = p.sum();
    p.values_mut().iter_mut().for_each(|v| *v /= z);
    Ok(p)
}

/// Weighted negative log-likelihood `-sum_i w_i log softmax(l)[cell_i]`.
pub fn softmax_nll(logits: &Grid, cells: &[(usize, f64)]) -> Result<f64> {
    let logq = log_softmax(logits)?;
    Ok(-cells.iter().map(|&(c, w)| w * logq.values()[c]).sum::<f64>())
}

/// Gradient of [`softmax_nll`] with respect to the logits:
/// `(sum_i w_i) softmax(l) - sum_i w_i e_{cell_i}`.
pub fn softmax_nll_grad(logits: &Grid, cells: &[(usize, f64)]) -> Result<Grid> {
    let q = softmax_normalize(logits)?;
    let total: f64 = cells.iter().map(|&(_, w)| w).sum();
    let mut g = q.map(GridKind::Logits, |v| v * total);
    for &(c, w) in cells {
        g.values_mut()[c] -= w;
    }
    Ok(g)
}
