//! Class-balanced batches: `b/m` distinct subjects, `m` scans each.

use rand::seq::index::sample;
use rand::Rng;

use crate::data::{DatasetManifest, ScanRecord, Split};
use crate::error::{Error, Result};

/// Groups record indices by subject in first-appearance order.
pub fn group_by_subject<'a>(subjects: impl IntoIterator<Item = &'a str>) -> Vec<Vec<usize>> {
    let mut order: indexmap::IndexMap<&str, Vec<usize>> = indexmap::IndexMap::new();
    for (i, s) in subjects.into_iter().enumerate() {
        order.entry(s).or_default().push(i);
    }
    order.into_values().collect()
}

/// Picks `b/m` subjects among groups with at least `m` members and `m`
/// members of each, all without replacement. Returns indices, grouped by
/// subject.
pub fn sample_groups<R: Rng + ?Sized>(groups: &[Vec<usize>], rng: &mut R, b: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || !b.is_multiple_of(m) {
        return Err(Error::invalid(format!("batch {b} is not a multiple of {m}")));
    }
    let eligible: Vec<&Vec<usize>> = groups.iter().filter(|g| g.len() >= m).collect();
    let need = b / m;
    if eligible.len() < need {
        return Err(Error::invalid(format!(
            "need {need} subjects with at least {m} scans, have {}",
            eligible.len()
        )));
    }
    let mut out = Vec::with_capacity(b);
    for gi in sample(rng, eligible.len(), need) {
        let g = eligible[gi];
        out.extend(sample(rng, g.len(), m).into_iter().map(|k| g[k]));
    }
    Ok(out)
}

pub fn sample_batch<'a, R: Rng + ?Sized>(
    manifest: &'a DatasetManifest,
    rng: &mut R,
    b: usize,
    m: usize,
) -> Result<Vec<&'a ScanRecord>> {
    let train: Vec<&ScanRecord> = manifest.records_in(Split::Train).collect();
    let groups = group_by_subject(train.iter().map(|r| r.subject_id.as_str()));
    Ok(sample_groups(&groups, rng, b, m)?
        .into_iter()
        .map(|i| train[i])
        .collect())
}
