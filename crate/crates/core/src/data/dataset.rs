//! Phantom dataset generation, subject-disjoint splitting and the
//! contrast-variant derivation.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image_file::{read_slice, write_slice};
use super::manifest::{DatasetManifest, ScanRecord, Split};
use super::phantom::{generate_subject, render_scan};
use super::MIN_DAY_GAP;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// How subjects are distributed over train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Target fractions of scans; whole subjects are assigned greedily.
    ScanFractions { train: f64, val: f64, test: f64 },
    /// Exact subject counts per split, subjects chosen by seeded shuffle.
    SubjectCounts {
        train: usize,
        val: usize,
        test: usize,
    },
}

impl Default for SplitPolicy {
    /// 588 / 65 / 142 scans out of 795.
    fn default() -> Self {
        SplitPolicy::ScanFractions {
            train: 588.0 / 795.0,
            val: 65.0 / 795.0,
            test: 142.0 / 795.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_subjects: usize,
    pub scans_per_subject_mean: usize,
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub split: SplitPolicy,
}

impl DatasetSpec {
    pub fn new(n_subjects: usize, scans_per_subject_mean: usize, size: usize, seed: u64) -> Self {
        Self {
            n_subjects,
            scans_per_subject_mean,
            size,
            seed,
            split: SplitPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 subjects, got {}",
                self.n_subjects
            )));
        }
        if self.scans_per_subject_mean < 2 {
            return Err(Error::invalid("scans_per_subject_mean must be at least 2"));
        }
        if self.size < super::phantom::MIN_RENDER_SIZE {
            return Err(Error::invalid(format!(
                "image size must be at least {}",
                super::phantom::MIN_RENDER_SIZE
            )));
        }
        match self.split {
            SplitPolicy::ScanFractions { train, val, test } => {
                let fr = [train, val, test];
                if fr.iter().any(|f| !f.is_finite() || *f <= 0.0) {
                    return Err(Error::invalid("split fractions must be positive"));
                }
            }
            SplitPolicy::SubjectCounts { train, val, test } => {
                if train + val + test != self.n_subjects || train == 0 || val == 0 || test == 0 {
                    return Err(Error::invalid(format!(
                        "subject counts {train}+{val}+{test} must be positive and sum to {}",
                        self.n_subjects
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Assigns each subject (given with its scan count) to one split.
///
/// For [`SplitPolicy::ScanFractions`], subjects are visited in descending
/// scan-count order (ties in seeded-shuffle order). Each goes to the split
/// with the largest unmet scan quota, except that when the remaining subjects
/// are only just enough to give every still-empty split one subject, they go
/// to the empty splits. Once all quotas are met, the least-overfull split
/// (assigned / quota) receives the subject. Quotas are `max(1, round(f·N))`.
pub fn assign_splits(
    subjects: &[(String, usize)],
    policy: &SplitPolicy,
    seed: u64,
) -> Result<HashMap<String, Split>> {
    if subjects.len() < 3 {
        return Err(Error::invalid("need at least 3 subjects to fill three splits"));
    }
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.shuffle(&mut seed::rng(&[stream::SPLIT, seed]));

    let mut out = HashMap::with_capacity(subjects.len());
    match *policy {
        SplitPolicy::SubjectCounts { train, val, test } => {
            if train + val + test != subjects.len() {
                return Err(Error::invalid("subject counts do not match subject total"));
            }
            for (pos, &i) in order.iter().enumerate() {
                let split = if pos < train {
                    Split::Train
                } else if pos < train + val {
                    Split::Val
                } else {
                    Split::Test
                };
                out.insert(subjects[i].0.clone(), split);
            }
        }
        SplitPolicy::ScanFractions { train, val, test } => {
            order.sort_by(|&a, &b| subjects[b].1.cmp(&subjects[a].1));
            let total: usize = subjects.iter().map(|s| s.1).sum();
            let fractions = [train, val, test];
            let norm: f64 = fractions.iter().sum();
            let quota: Vec<f64> = fractions
                .iter()
                .map(|f| ((f / norm) * total as f64).round().max(1.0))
                .collect();
            let mut scans = [0usize; 3];
            let mut members = [0usize; 3];
            for (pos, &i) in order.iter().enumerate() {
                let remaining = subjects.len() - pos;
                let empty: Vec<usize> = (0..3).filter(|&s| members[s] == 0).collect();
                let target = if remaining <= empty.len() {
                    argmax(empty.iter().map(|&s| (s, quota[s])))
                } else {
                    let deficits = (0..3)
                        .map(|s| (s, quota[s] - scans[s] as f64))
                        .filter(|&(_, d)| d > 0.0);
                    match argmax(deficits.clone()) {
                        Some(s) => Some(s),
                        None => argmax((0..3).map(|s| (s, -(scans[s] as f64) / quota[s]))),
                    }
                }
                .expect("three splits");
                scans[target] += subjects[i].1;
                members[target] += 1;
                out.insert(subjects[i].0.clone(), Split::ALL[target]);
            }
        }
    }
    Ok(out)
}

/// First index with the largest key; `None` on an empty iterator.
fn argmax(items: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn subject_id(index: usize) -> String {
    format!("S{index:04}")
}

/// Generates a phantom dataset into `out_dir` and returns its manifest.
///
/// Each subject gets `mean ± mean/2` scans (at least 2), the first taken in
/// the first year and each later one 180 to 545 days after the previous.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let mean = spec.scans_per_subject_mean;
    let half = mean / 2;

    let mut records = Vec::new();
    let mut counts = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let sid = subject_id(s);
        let phenotype = generate_subject(seed::derive(&[spec.seed, s as u64]));
        let mut rng = seed::rng(&[stream::SCAN_COUNT, spec.seed, s as u64]);
        let n_scans = rng.random_range(mean - half..=mean + half).max(2);
        let mut day: i64 = rng.random_range(0..365);
        for j in 0..n_scans {
            if j > 0 {
                day += MIN_DAY_GAP + rng.random_range(0..365);
            }
            let scan_id = format!("{sid}_{j:02}");
            let slice_path = format!("slices/{scan_id}.dbpimg");
            let noise_seed = seed::derive(&[spec.seed, s as u64, j as u64]);
            let slice = render_scan(&phenotype, day, noise_seed, spec.size)?;
            write_slice(&out_dir.join(&slice_path), &slice)?;
            records.push(ScanRecord {
                scan_id,
                subject_id: sid.clone(),
                acquisition_day: day,
                slice_path,
            });
        }
        counts.push((sid, n_scans));
    }

    let by_subject = assign_splits(&counts, &spec.split, spec.seed)?;
    let split = records
        .iter()
        .map(|r| (r.scan_id.clone(), by_subject[&r.subject_id]))
        .collect();
    let manifest = DatasetManifest { records, split };
    manifest.validate()?;
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Per-scan contrast perturbation used for the contrast-variant dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContrastChange {
    Unchanged,
    /// `v -> 1 - v` on the [0, 1] phantom range.
    Negative,
    /// `v -> v + delta`, delta in [-0.25, 0.25].
    Shift(f64),
}

impl ContrastChange {
    /// Draws the change for the scan at position `index` of a manifest.
    pub fn sample(seed: u64, index: usize) -> Self {
        let mut rng = seed::rng(&[stream::CONTRAST, seed, index as u64]);
        match rng.random_range(0..3u8) {
            0 => ContrastChange::Negative,
            1 => ContrastChange::Shift(rng.random_range(-0.25..=0.25)),
            _ => ContrastChange::Unchanged,
        }
    }

    pub fn apply(self, v: f32) -> f32 {
        match self {
            ContrastChange::Unchanged => v,
            ContrastChange::Negative => 1.0 - v,
            ContrastChange::Shift(d) => (v as f64 + d) as f32,
        }
    }
}

/// Writes a contrast-variant copy of the dataset in `src_dir` into `out_dir`.
/// Scan ids, subjects, days, paths and splits are preserved.
pub fn derive_synt_contr(
    manifest: &DatasetManifest,
    src_dir: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    for (i, r) in manifest.records.iter().enumerate() {
        let src = read_slice(&src_dir.join(&r.slice_path))?;
        let change = ContrastChange::sample(seed, i);
        write_slice(&out_dir.join(&r.slice_path), &src.map(|v| change.apply(v)))?;
    }
    let derived = manifest.clone();
    derived.write(out_dir)?;
    Ok(derived)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn counts(ns: &[usize]) -> Vec<(String, usize)> {
        ns.iter()
            .enumerate()
            .map(|(i, &n)| (subject_id(i), n))
            .collect()
    }

    #[test]
    fn three_small_subjects_fill_every_split() {
        let a = assign_splits(&counts(&[2, 2, 2]), &SplitPolicy::default(), 0).unwrap();
        let used: HashSet<Split> = a.values().copied().collect();
        assert_eq!(used.len(), 3);
    }

    #[test]
    fn fractions_are_approximated() {
        let ns: Vec<usize> = (0..271).map(|i| 2 + (i * 7) % 3).collect();
        let total: usize = ns.iter().sum();
        let a = assign_splits(&counts(&ns), &SplitPolicy::default(), 5).unwrap();
        let mut per = HashMap::new();
        for (i, &n) in ns.iter().enumerate() {
            *per.entry(a[&subject_id(i)]).or_insert(0usize) += n;
        }
        let frac = |s| per[&s] as f64 / total as f64;
        assert!((frac(Split::Train) - 0.74).abs() < 0.02);
        assert!((frac(Split::Val) - 0.082).abs() < 0.02);
        assert!((frac(Split::Test) - 0.179).abs() < 0.02);
    }

    #[test]
    fn subject_counts_are_exact() {
        let policy = SplitPolicy::SubjectCounts {
            train: 6,
            val: 2,
            test: 2,
        };
        let a = assign_splits(&counts(&[3; 10]), &policy, 1).unwrap();
        let n = |s| a.values().filter(|&&v| v == s).count();
        assert_eq!((n(Split::Train), n(Split::Val), n(Split::Test)), (6, 2, 2));
    }

    #[test]
    fn contrast_changes_cover_all_kinds() {
        let mut kinds = [0usize; 3];
        for i in 0..300 {
            match ContrastChange::sample(4, i) {
                ContrastChange::Negative => kinds[0] += 1,
                ContrastChange::Shift(d) => {
                    assert!((-0.25..=0.25).contains(&d));
                    kinds[1] += 1
                }
                ContrastChange::Unchanged => kinds[2] += 1,
            }
        }
        assert!(kinds.iter().all(|&k| k > 60), "{kinds:?}");
        assert_eq!(ContrastChange::Negative.apply(0.25), 0.75);
    }
}
