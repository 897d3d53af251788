use serde::{Deserialize, Serialize};

/// Information gains (bits/fix) of the five evaluation settings for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub dataset: String,
    pub ig_full: f64,
    pub ig_single_transfer: f64,
    pub ig_loo_naive: f64,
    pub ig_loo_generalized: f64,
    pub ig_loo_adapted: f64,
}

impl GapRow {
    pub fn inter_dataset_gap(&self) -> f64 {
        self.ig_full - self.ig_single_transfer
    }

    pub fn generalization_gap(&self) -> f64 {
        self.ig_full - self.ig_loo_generalized
    }

    pub fn fraction_remaining(&self) -> f64 {
        self.generalization_gap() / self.inter_dataset_gap()
    }

    pub fn fraction_closed_by_adaptation(&self) -> f64 {
        (self.ig_loo_adapted - self.ig_loo_generalized) / self.generalization_gap()
    }

    /// True when a fraction is non-finite or outside [0, 1].
    pub fn flagged(&self) -> bool {
        [self.fraction_remaining(), self.fraction_closed_by_adaptation()]
            .iter()
            .any(|f| !f.is_finite() || !(0.0..=1.0).contains(f))
    }

    pub fn all_finite(&self) -> bool {
        [
            self.ig_full,
            self.ig_single_transfer,
            self.ig_loo_naive,
            self.ig_loo_generalized,
            self.ig_loo_adapted,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
}

impl GapReport {
    /// Row of IGs averaged across targets; fractions follow from the averages.
    pub fn mean(&self) -> GapRow {
        let n = self.rows.len() as f64;
        let avg = |f: fn(&GapRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        GapRow {
            dataset: "mean".into(),
            ig_full: avg(|r| r.ig_full),
            ig_single_transfer: avg(|r| r.ig_single_transfer),
            ig_loo_naive: avg(|r| r.ig_loo_naive),
            ig_loo_generalized: avg(|r| r.ig_loo_generalized),
            ig_loo_adapted: avg(|r| r.ig_loo_adapted),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "dataset,ig_full,ig_single_transfer,ig_loo_naive,ig_loo_generalized,ig_loo_adapted,\
             inter_dataset_gap,generalization_gap,fraction_remaining,fraction_closed_by_adaptation,flagged\n",
        );
        for r in self.rows.iter().chain(std::iter::once(&self.mean())) {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.dataset,
                fmt(r.ig_full),
                fmt(r.ig_single_transfer),
                fmt(r.ig_loo_naive),
                fmt(r.ig_loo_generalized),
                fmt(r.ig_loo_adapted),
                fmt(r.inter_dataset_gap()),
                fmt(r.generalization_gap()),
                fmt(r.fraction_remaining()),
                fmt(r.fraction_closed_by_adaptation()),
                r.flagged()
            ));
        }
        s
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.10}")
}
