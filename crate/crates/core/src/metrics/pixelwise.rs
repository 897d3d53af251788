use super::{per_image_log_densities, SaliencyPredictor};
use crate::dataset::FixationDataset;
use crate::error::{data_err, Result};
use crate::grid::{Grid, GridKind, GridStack};
use serde::Serialize;
use std::f64::consts::LN_2;
use std::path::Path;

/// `p_gold * (ln p_a - ln p_b)` per cell.
pub fn pixelwise_ig_difference(gold: &Grid, a: &Grid, b: &Grid) -> Result<Grid> {
    gold.ensure_same_shape(a)?;
    gold.ensure_same_shape(b)?;
    let v = gold
        .values()
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(&g, (&pa, &pb))| if g == 0.0 { 0.0 } else { g * (pa.max(1e-300).ln() - pb.max(1e-300).ln()) })
        .collect();
    Grid::new(gold.height(), gold.width(), GridKind::Feature, v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub stimulus_id: String,
    pub fixations: usize,
    /// IG of the gold standard minus IG of model a (bits/fix).
    pub deficit_a: f64,
    pub deficit_b: f64,
}

/// Per-image IG-to-gold deficits of two models. The shared IG baseline
/// cancels, so deficits are log-likelihood differences.
pub fn prediction_error_scatter(
    ds: &FixationDataset,
    indices: &[usize],
    a: &dyn SaliencyPredictor,
    b: &dyn SaliencyPredictor,
    gold: &dyn SaliencyPredictor,
) -> Result<Vec<ScatterRow>> {
    let per = ds.fixations_per_stimulus();
    let indices: Vec<usize> = indices.iter().copied().filter(|&i| !per[i].is_empty()).collect();
    let la = per_image_log_densities(a, ds, &indices)?;
    let lb = per_image_log_densities(b, ds, &indices)?;
    let lg = per_image_log_densities(gold, ds, &indices)?;
    Ok(indices
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let n = per[i].len() as f64;
            let deficit = |m: &[f64]| lg[k].iter().zip(m).map(|(g, x)| g - x).sum::<f64>() / n / LN_2;
            ScatterRow {
                stimulus_id: ds.stimuli[i].stimulus_id.clone(),
                fixations: per[i].len(),
                deficit_a: deficit(&la[k]),
                deficit_b: deficit(&lb[k]),
            }
        })
        .collect())
}

/// Writes a signed map as an 8-bit PGM (128 = zero, symmetric range) and as a
/// one-channel FMAP carrying the raw values.
pub fn write_signed_heatmap(g: &Grid, pgm: &Path, fmap: &Path) -> Result<()> {
    let m = g.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !m.is_finite() {
        return Err(data_err!("heatmap contains non-finite values"));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", g.width(), g.height()).into_bytes();
    bytes.extend(g.values().iter().map(|&v| {
        let t = if m > 0.0 { v / m } else { 0.0 };
        (127.5 + 127.5 * t).round().clamp(0.0, 255.0) as u8
    }));
    crate::io::write_atomic(pgm, &bytes)?;
    crate::grid::write_fmap(fmap, &GridStack::from_grids(std::slice::from_ref(g))?)
}
