//! Subject-exclusive dataset splitting and grouped k-fold cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::mix_seed;

/// Scan identity used by the splitters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRef {
    pub scan_id: String,
    pub subject_id: String,
}

/// One train/validation/test partition of scan ids. Subject-exclusive by
/// construction: all scans of a subject land in the same part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn all_scans(&self) -> impl Iterator<Item = &String> {
        self.train
            .iter()
            .chain(self.validation.iter())
            .chain(self.test.iter())
    }
}

fn group_by_subject(scans: &[ScanRef]) -> Vec<(String, Vec<String>)> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in scans {
        map.entry(s.subject_id.clone())
            .or_default()
            .push(s.scan_id.clone());
    }
    map.into_iter().collect()
}

/// Greedy grouped split: subjects are shuffled by seed and each assigned to
/// the partition with the largest remaining scan-count deficit (ties go to
/// the earlier partition), so achieved fractions track the targets without
/// ever splitting a subject.
pub fn split_grouped(
    scans: &[ScanRef],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|&f| f < 0.0) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "fractions {fr:?} must be non-negative and sum to 1"
        )));
    }
    let mut subjects = group_by_subject(scans);
    let n_parts_wanted = fr.iter().filter(|&&f| f > 0.0).count();
    if subjects.len() < n_parts_wanted {
        return Err(Error::Split(format!(
            "{} subjects cannot fill {n_parts_wanted} partitions",
            subjects.len()
        )));
    }
    let total: usize = subjects.iter().map(|(_, s)| s.len()).sum();
    let largest_fraction = fr.iter().cloned().fold(0.0, f64::max);
    if let Some((id, s)) = subjects
        .iter()
        .find(|(_, s)| s.len() as f64 > largest_fraction * total as f64)
    {
        return Err(Error::Split(format!(
            "subject {id:?} holds {} of {total} scans, more than the largest partition",
            s.len()
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);

    let targets = [
        fr[0] * total as f64,
        fr[1] * total as f64,
        fr[2] * total as f64,
    ];
    let mut assigned = [0usize; 3];
    let mut parts: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (_, subject_scans) in subjects {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for p in 0..3 {
            if fr[p] == 0.0 {
                continue;
            }
            let deficit = targets[p] - assigned[p] as f64;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = p;
            }
        }
        assigned[best] += subject_scans.len();
        parts[best].extend(subject_scans);
    }
    let [train, validation, test] = parts;
    Ok(DatasetSplit {
        fold_id: 0,
        train,
        validation,
        test,
    })
}

/// Grouped five-fold scheme: subjects are shuffled and dealt to the fold
/// with the fewest scans; fold i becomes the test set while the remaining
/// subjects are re-split into train/validation at the 70:15 ratio.
pub fn kfold_grouped(scans: &[ScanRef], k: usize, seed: u64) -> Result<Vec<DatasetSplit>> {
    if k < 2 {
        return Err(Error::Split(format!("k = {k} must be at least 2")));
    }
    let mut subjects = group_by_subject(scans);
    if subjects.len() < k {
        return Err(Error::Split(format!(
            "{} subjects cannot form {k} folds",
            subjects.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);

    let mut fold_scans: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut fold_subjects: Vec<Vec<String>> = vec![Vec::new(); k];
    for (subject, subject_scans) in subjects {
        let target = (0..k)
            .min_by_key(|&f| (fold_scans[f].len(), f))
            .expect("k >= 2");
        fold_scans[target].extend(subject_scans);
        fold_subjects[target].push(subject);
    }

    let mut splits = Vec::with_capacity(k);
    for fold in 0..k {
        let rest: Vec<ScanRef> = scans
            .iter()
            .filter(|s| !fold_subjects[fold].contains(&s.subject_id))
            .cloned()
            .collect();
        // Inner 70:15 ratio, normalized over the remaining scans.
        let ratio = 0.70 / 0.85;
        let inner = split_grouped(&rest, (ratio, 1.0 - ratio, 0.0), mix_seed(seed, fold as u64))?;
        splits.push(DatasetSplit {
            fold_id: fold,
            train: inner.train,
            validation: inner.validation,
            test: fold_scans[fold].clone(),
        });
    }
    Ok(splits)
}

/// Hard check: no subject may appear in two partitions of a split.
pub fn assert_subject_exclusive(split: &DatasetSplit, scans: &[ScanRef]) -> Result<()> {
    let by_scan: BTreeMap<&str, &str> = scans
        .iter()
        .map(|s| (s.scan_id.as_str(), s.subject_id.as_str()))
        .collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (part, ids) in [(0, &split.train), (1, &split.validation), (2, &split.test)] {
        for id in ids {
            let subject = by_scan
                .get(id.as_str())
                .ok_or_else(|| Error::Split(format!("unknown scan {id:?} in split")))?;
            if let Some(&prev) = seen.get(subject) {
                if prev != part {
                    return Err(Error::Split(format!(
                        "subject {subject:?} spans partitions {prev} and {part}"
                    )));
                }
            } else {
                seen.insert(subject, part);
            }
        }
    }
    Ok(())
}
