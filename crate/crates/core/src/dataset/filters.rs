use super::FixationDataset;
use std::collections::HashSet;

pub const DROP_INITIAL_TAG: &str = "drop_initial_fixations";

/// Removes the ordinal-0 fixation of every scanpath and renumbers the rest
/// from zero. Scanpaths whose ordinals are all zero carry no order and are
/// left alone (a single-fixation scanpath is removed). Applying the filter a
/// second time is a no-op.
pub fn drop_initial_fixations(ds: &FixationDataset) -> FixationDataset {
    if ds.has_provenance(DROP_INITIAL_TAG) {
        return ds.clone();
    }
    let mut keep = vec![true; ds.fixations.len()];
    let mut new_ordinal = vec![0u32; ds.fixations.len()];
    let mut removed = 0usize;
    let mut emptied = 0usize;
    for (_, idx) in ds.scanpaths() {
        let unordered = idx.len() > 1 && idx.iter().all(|&i| ds.fixations[i].ordinal == 0);
        if unordered {
            continue;
        }
        let mut next = 0u32;
        let mut sorted = idx.clone();
        sorted.sort_by_key(|&i| ds.fixations[i].ordinal);
        for &i in &sorted {
            if ds.fixations[i].ordinal == 0 {
                keep[i] = false;
                removed += 1;
            } else {
                new_ordinal[i] = next;
                next += 1;
            }
        }
        if next == 0 {
            emptied += 1;
        }
    }
    let fixations = ds
        .fixations
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(i, f)| {
            let mut f = f.clone();
            f.ordinal = new_ordinal[i];
            f
        })
        .collect();
    let mut provenance = ds.provenance.clone();
    provenance.push(format!(
        "{DROP_INITIAL_TAG}: removed {removed} fixations, {emptied} scanpaths emptied"
    ));
    FixationDataset {
        name: ds.name.clone(),
        stimuli: ds.stimuli.clone(),
        fixations,
        provenance,
    }
}

/// Removes every scanpath of `subject` whose mean y position exceeds
/// `y_threshold` pixels (eye-tracking artifact cleanup).
pub fn filter_cat2000_artifacts(ds: &FixationDataset, subject: &str, y_threshold: f64) -> FixationDataset {
    let mut drop: HashSet<usize> = HashSet::new();
    let mut paths = 0usize;
    for ((_, subj), idx) in ds.scanpaths() {
        if subj != subject {
            continue;
        }
        let mean_y = idx.iter().map(|&i| ds.fixations[i].y).sum::<f64>() / idx.len() as f64;
        if mean_y > y_threshold {
            paths += 1;
            drop.extend(idx);
        }
    }
    let fixations = ds
        .fixations
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, f)| f.clone())
        .collect();
    let mut provenance = ds.provenance.clone();
    if paths > 0 || !ds.has_provenance("artifact_filter") {
        provenance.push(format!(
            "artifact_filter(subject={subject}, mean_y>{y_threshold}): removed {paths} scanpaths"
        ));
    }
    FixationDataset {
        name: ds.name.clone(),
        stimuli: ds.stimuli.clone(),
        fixations,
        provenance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Fixation, StimulusMeta};

    fn fx(s: &str, subj: &str, x: f64, y: f64, o: u32) -> Fixation {
        Fixation {
            stimulus_id: s.into(),
            subject_id: subj.into(),
            x,
            y,
            ordinal: o,
        }
    }

    fn tall() -> FixationDataset {
        let stimuli = vec![StimulusMeta::new("s", 1920, 1080, 38.0)];
        let fixations = vec![
            fx("s", "20", 100.0, 970.0, 0),
            fx("s", "20", 200.0, 990.0, 1),
            fx("s", "7", 100.0, 980.0, 0),
            fx("s", "7", 300.0, 980.0, 1),
            fx("s", "21", 100.0, 100.0, 0),
        ];
        FixationDataset::new("cat", stimuli, fixations).unwrap()
    }

    #[test]
    fn drops_first_and_reindexes() {
        let ds = crate::dataset::tests::toy();
        let out = drop_initial_fixations(&ds);
        let a1: Vec<(f64, u32)> = out
            .fixations
            .iter()
            .filter(|f| f.stimulus_id == "a" && f.subject_id == "1")
            .map(|f| (f.x, f.ordinal))
            .collect();
        assert_eq!(a1, vec![(2.0, 0), (5.5, 1)]);
        // single-fixation scanpaths vanish
        assert!(!out.fixations.iter().any(|f| f.stimulus_id == "a" && f.subject_id == "2"));
        out.validate().unwrap();
    }

    #[test]
    fn drop_count_is_n_minus_scanpaths() {
        let ds = crate::dataset::tests::toy();
        let s = ds.scanpaths().len();
        assert_eq!(drop_initial_fixations(&ds).len(), ds.len() - s);
    }

    #[test]
    fn drop_is_idempotent() {
        let ds = crate::dataset::tests::toy();
        let once = drop_initial_fixations(&ds);
        assert_eq!(drop_initial_fixations(&once), once);
    }

    #[test]
    fn unordered_scanpaths_are_exempt() {
        let stimuli = vec![StimulusMeta::new("s", 10, 10, 5.0)];
        let fixations = vec![fx("s", "1", 1.0, 1.0, 0), fx("s", "1", 2.0, 2.0, 0)];
        let ds = FixationDataset::new("flat", stimuli, fixations).unwrap();
        assert_eq!(drop_initial_fixations(&ds).len(), 2);
    }

    #[test]
    fn artifact_filter_rules() {
        let out = filter_cat2000_artifacts(&tall(), "20", 950.0);
        // subject 20 with mean y 980 removed, subject 7 at the same height kept
        assert!(!out.fixations.iter().any(|f| f.subject_id == "20"));
        assert_eq!(out.fixations.iter().filter(|f| f.subject_id == "7").count(), 2);

        let mut low = tall();
        for f in low.fixations.iter_mut() {
            f.y -= 40.0;
        }
        // mean y 940 stays
        assert_eq!(filter_cat2000_artifacts(&low, "20", 950.0).len(), 5);
    }

    #[test]
    fn artifact_filter_is_idempotent() {
        let once = filter_cat2000_artifacts(&tall(), "20", 950.0);
        assert_eq!(filter_cat2000_artifacts(&once, "20", 950.0), once);
    }
}
