use super::Grid;
use crate::rng::SeededRng;

/// Draws `n` i.i.d. positions from a normalized probability grid.
///
/// Each draw picks a pixel from the categorical distribution (inverse CDF on
/// one uniform) and then jitters uniformly inside it. Positions are returned
/// in the grid's own pixel coordinates.
pub fn sample_fixations(g: &Grid, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = SeededRng::new(seed);
    sample_with(g, n, &mut rng)
}

pub(crate) fn sample_with(g: &Grid, n: usize, rng: &mut SeededRng) -> Vec<(f64, f64)> {
    let mut cdf = Vec::with_capacity(g.len());
    let mut acc = 0.0;
    for &p in g.values() {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    let total = acc;
    (0..n)
        .map(|_| {
            let u = rng.uniform() * total;
            let mut idx = cdf.partition_point(|&c| c <= u);
            // skip zero-mass cells that share the boundary value
            while idx < cdf.len() - 1 && g.values()[idx] <= 0.0 {
                idx += 1;
            }
            let idx = idx.min(cdf.len() - 1);
            let r = idx / g.width();
            let c = idx % g.width();
            let x = c as f64 + rng.uniform();
            let y = r as f64 + rng.uniform();
            (x, y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridKind;

    #[test]
    fn delta_map_hits_single_pixel() {
        let mut g = Grid::filled(6, 6, GridKind::Probability, 0.0);
        g.set(4, 1, 1.0);
        for (x, y) in sample_fixations(&g, 500, 11) {
            assert_eq!((x.floor() as usize, y.floor() as usize), (1, 4));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let g = Grid::filled(3, 3, GridKind::Probability, 1.0 / 9.0);
        assert_eq!(sample_fixations(&g, 50, 5), sample_fixations(&g, 50, 5));
        assert_ne!(sample_fixations(&g, 50, 5), sample_fixations(&g, 50, 6));
    }

    #[test]
    fn uniform_counts_within_multinomial_bounds() {
        let (h, w) = (5, 4);
        let g = Grid::filled(h, w, GridKind::Probability, 1.0 / (h * w) as f64);
        let n = 100_000;
        let mut counts = vec![0usize; h * w];
        for (x, y) in sample_fixations(&g, n, 99) {
            counts[y as usize * w + x as usize] += 1;
        }
        let p = 1.0 / (h * w) as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for &c in &counts {
            assert!((c as f64 - mean).abs() < 5.0 * sd);
            chi2 += (c as f64 - mean).powi(2) / mean;
        }
        // 19 dof, p < 1e-4 threshold
        assert!(chi2 < 50.0, "chi2 = {chi2}");
    }
}
