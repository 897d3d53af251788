//! Brute-force references for the metrics.

use super::Check;
use salbias::dataset::{Fixation, FixationDataset, StimulusMeta};
use salbias::grid::{Grid, GridKind};
use salbias::metrics::{
    cc, evaluate, image_auc, information_gain, kldiv, pixelwise_ig_difference, sim, EvalConfig, MapPredictor,
    UniformPredictor,
};
use salbias::rng::SeededRng;

/// Pairwise AUC: a positive above a negative counts 1, a tie 1/2.
pub fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                s += 1.0;
            } else if p == n {
                s += 0.5;
            }
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Random 5x5 probability map whose values come from a few levels, so ties
/// are common.
pub fn tied_map(rng: &mut SeededRng) -> Grid {
    let levels = 1 + rng.below(4);
    let raw: Vec<f64> = (0..25).map(|_| 1.0 + rng.below(levels) as f64).collect();
    let z: f64 = raw.iter().sum();
    Grid::new(5, 5, GridKind::Probability, raw.into_iter().map(|v| v / z).collect()).unwrap()
}

/// Random strictly positive probability map.
pub fn random_map(rng: &mut SeededRng, h: usize, w: usize) -> Grid {
    let raw: Vec<f64> = (0..h * w).map(|_| rng.uniform_range(0.05, 1.0).powi(3)).collect();
    let z: f64 = raw.iter().sum();
    Grid::new(h, w, GridKind::Probability, raw.into_iter().map(|v| v / z).collect()).unwrap()
}

/// Toy dataset of `images` stimuli with 5x5 maps. Stimulus sizes vary so
/// shuffled negatives need rescaling.
pub fn toy_dataset(rng: &mut SeededRng, images: usize) -> FixationDataset {
    let mut stimuli = Vec::new();
    let mut fixations = Vec::new();
    for i in 0..images {
        let (w, h) = (5 * (2 + rng.below(4)), 5 * (2 + rng.below(4)));
        let id = format!("img{i}");
        stimuli.push(StimulusMeta::new(id.clone(), w, h, 10.0));
        let n = 1 + rng.below(8);
        for k in 0..n {
            fixations.push(Fixation {
                stimulus_id: id.clone(),
                subject_id: format!("s{}", k % 3),
                x: rng.uniform_range(0.0, w as f64 - 1e-9),
                y: rng.uniform_range(0.0, h as f64 - 1e-9),
                ordinal: k as u32,
            });
        }
    }
    FixationDataset::new("toy", stimuli, fixations).unwrap()
}

fn cell5(x: f64, y: f64, w: usize, h: usize) -> usize {
    let c = ((x / w as f64) * 5.0).floor().min(4.0) as usize;
    let r = ((y / h as f64) * 5.0).floor().min(4.0) as usize;
    r * 5 + c
}

/// Largest deviation of per-image AUC and sAUC from the pairwise reference
/// over `trials` toy datasets with tied 5x5 maps.
pub fn auc_deviation(trials: u64) -> (f64, f64) {
    let mut worst_auc: f64 = 0.0;
    let mut worst_sauc: f64 = 0.0;
    for t in 0..trials {
        let mut rng = SeededRng::new(1000 + t);
        let images = 2 + rng.below(4);
        let ds = toy_dataset(&mut rng, images);
        let maps: Vec<Grid> = ds.stimuli.iter().map(|_| tied_map(&mut rng)).collect();
        let pred = MapPredictor { maps: maps.clone() };
        let all: Vec<usize> = (0..ds.stimuli.len()).collect();
        let cfg = EvalConfig {
            sauc_max_negatives: usize::MAX,
            ..EvalConfig::default()
        };
        let ev = evaluate(&pred, None, &ds, &all, &cfg).unwrap();
        let per = ds.fixations_per_stimulus();
        for (k, row) in ev.per_image.iter().enumerate() {
            let s = &ds.stimuli[k];
            let g = maps[k].values();
            let cells: Vec<usize> = per[k]
                .iter()
                .map(|&j| cell5(ds.fixations[j].x, ds.fixations[j].y, s.width_px, s.height_px))
                .collect();
            let pos: Vec<f64> = cells.iter().map(|&c| g[c]).collect();
            let neg: Vec<f64> = (0..25).filter(|c| !cells.contains(c)).map(|c| g[c]).collect();
            worst_auc = worst_auc.max((row.auc - pairwise_auc(&pos, &neg)).abs());
            worst_auc = worst_auc.max((image_auc(&maps[k], &cells) - pairwise_auc(&pos, &neg)).abs());

            let mut sneg = Vec::new();
            for (o, other) in ds.stimuli.iter().enumerate() {
                if o == k {
                    continue;
                }
                for &j in &per[o] {
                    let f = &ds.fixations[j];
                    let x = f.x / other.width_px as f64 * s.width_px as f64;
                    let y = f.y / other.height_px as f64 * s.height_px as f64;
                    sneg.push(g[cell5(x, y, s.width_px, s.height_px)]);
                }
            }
            let sauc = row.sauc.expect("several images");
            worst_sauc = worst_sauc.max((sauc - pairwise_auc(&pos, &sneg)).abs());
        }
    }
    (worst_auc, worst_sauc)
}

/// Largest `|IG(a,c) - IG(a,b) - IG(b,c)|` and whether `IG(p,p)` was exactly 0 every time.
pub fn ig_identities(trials: u64) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut self_zero = true;
    for t in 0..trials {
        let mut rng = SeededRng::new(2000 + t);
        let ds = toy_dataset(&mut rng, 3);
        let all: Vec<usize> = (0..ds.stimuli.len()).collect();
        let mk = |rng: &mut SeededRng| MapPredictor {
            maps: ds.stimuli.iter().map(|_| random_map(rng, 5, 5)).collect(),
        };
        let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        self_zero &= information_gain(&a, &a, &ds, &all).unwrap() == 0.0;
        let ac = information_gain(&a, &c, &ds, &all).unwrap();
        let ab = information_gain(&a, &b, &ds, &all).unwrap();
        let bc = information_gain(&b, &c, &ds, &all).unwrap();
        worst = worst.max((ac - ab - bc).abs());
    }
    (worst, self_zero)
}

/// Largest deviation of the summed pixelwise IG map from `sum g ln(a/b)`.
pub fn pixelwise_deviation(trials: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = SeededRng::new(3000 + t);
        let (h, w) = (2 + rng.below(8), 2 + rng.below(8));
        let (g, a, b) = (random_map(&mut rng, h, w), random_map(&mut rng, h, w), random_map(&mut rng, h, w));
        let map = pixelwise_ig_difference(&g, &a, &b).unwrap();
        let direct: f64 = (0..h * w)
            .map(|i| g.values()[i] * (a.values()[i] / b.values()[i]).ln())
            .sum();
        worst = worst.max((map.sum() - direct).abs());
    }
    worst
}

/// `(max |NSS(uniform)|, max |CC(p,p)-1|, max |SIM(p,p)-1|, max |KLDiv(p,p)|)`.
pub fn self_comparisons(trials: u64) -> (f64, f64, f64, f64) {
    let (mut nss, mut c, mut s, mut k): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for t in 0..trials {
        let mut rng = SeededRng::new(4000 + t);
        let ds = toy_dataset(&mut rng, 3);
        let all: Vec<usize> = (0..ds.stimuli.len()).collect();
        let ev = evaluate(&UniformPredictor { downscale: 1 }, None, &ds, &all, &EvalConfig::default()).unwrap();
        nss = nss.max(ev.summary.nss.abs());
        let (h, w) = (2 + rng.below(8), 2 + rng.below(8));
        let p = random_map(&mut rng, h, w);
        c = c.max((cc(&p, &p).unwrap() - 1.0).abs());
        s = s.max((sim(&p, &p).unwrap() - 1.0).abs());
        k = k.max(kldiv(&p, &p).unwrap().abs());
    }
    (nss, c, s, k)
}

/// Every metric oracle comparison, one check each.
pub fn metric_checks() -> Vec<Check> {
    let (auc, sauc) = auc_deviation(200);
    let (tele, self_zero) = ig_identities(200);
    let pix = pixelwise_deviation(200);
    let (nss, c, s, k) = self_comparisons(100);
    vec![
        Check::new("auc vs pairwise (5x5, ties)", auc <= 1e-12, format!("max dev {auc:.2e} <= 1e-12")),
        Check::new("sauc vs pairwise (5x5, ties)", sauc <= 1e-12, format!("max dev {sauc:.2e} <= 1e-12")),
        Check::new("IG(p,p) == 0", self_zero, "exact zero on 200 instances".into()),
        // differences of per-fixation logs associate only up to rounding
        Check::new("IG telescoping", tele <= 1e-12, format!("max dev {tele:.2e} <= 1e-12")),
        Check::new("pixelwise IG sum", pix <= 1e-9, format!("max dev {pix:.2e} <= 1e-9")),
        Check::new("NSS(uniform) == 0", nss == 0.0, format!("max |nss| {nss:.2e}")),
        Check::new("CC(p,p) == 1", c <= 1e-12, format!("max dev {c:.2e} <= 1e-12")),
        Check::new("SIM(p,p) == 1", s <= 1e-12, format!("max dev {s:.2e} <= 1e-12")),
        // the 1e-12 regularizer of KLDiv leaves a residue of about cells * 1e-12
        Check::new("KLDiv(p,p) == 0", k <= 1e-9, format!("max dev {k:.2e} <= 1e-9")),
    ]
}
