use crate::dataset::FixationDataset;
use crate::grid::{Grid, GridGeometry};
use crate::rng::SeededRng;

/// Mann-Whitney AUC of positives against negatives with midranks for ties.
pub fn auc_from_values(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&v| (v, true)).chain(neg.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// AUC with fixated cells (one entry per fixation) as positives and every
/// non-fixated cell as a negative.
pub fn image_auc(g: &Grid, fixation_cells: &[usize]) -> f64 {
    let mut fixated = vec![false; g.len()];
    for &c in fixation_cells {
        fixated[c] = true;
    }
    let pos: Vec<f64> = fixation_cells.iter().map(|&c| g.values()[c]).collect();
    let neg: Vec<f64> = g
        .values()
        .iter()
        .zip(&fixated)
        .filter(|(_, &f)| !f)
        .map(|(&v, _)| v)
        .collect();
    auc_from_values(&pos, &neg)
}

/// Cells of `geom` hit by fixations of the other selected images, mapped
/// through normalized coordinates. When more than `max` exist a seeded
/// subset is drawn.
pub fn shuffled_auc_negatives(
    ds: &FixationDataset,
    indices: &[usize],
    target: usize,
    geom: &GridGeometry,
    seed: u64,
    max: usize,
) -> Vec<usize> {
    let per = ds.fixations_per_stimulus();
    let mut pool: Vec<usize> = indices
        .iter()
        .filter(|&&i| i != target)
        .flat_map(|&i| per[i].iter().copied())
        .collect();
    if pool.len() > max {
        let mut rng = SeededRng::derived(seed, target as u64);
        let mut picked = rng.sample_indices(pool.len(), max);
        picked.sort_unstable();
        pool = picked.into_iter().map(|k| pool[k]).collect();
    }
    let index = ds.stimulus_index();
    pool.iter()
        .map(|&j| {
            let f = &ds.fixations[j];
            let s = &ds.stimuli[index[f.stimulus_id.as_str()]];
            let x = f.x / s.width_px as f64 * geom.width_px as f64;
            let y = f.y / s.height_px as f64 * geom.height_px as f64;
            geom.cell_of(x, y)
        })
        .collect()
}
