//! Retrieval metrics over ranked lists of subject labels.

use crate::error::{Error, Result};

/// Average precision over a top-`R` list, normalized by `R`:
/// `(Σᵢ 𝟙[match at i] · precision@i) / R`.
pub fn ap_at_r<S: PartialEq>(query: &S, retrieved: &[S]) -> Result<f64> {
    if retrieved.is_empty() {
        return Err(Error::invalid("AP@R needs at least one retrieved item"));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, s) in retrieved.iter().enumerate() {
        if s == query {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(total / retrieved.len() as f64)
}

/// Whether any of the retrieved items matches.
pub fn hit_at_k<S: PartialEq>(query: &S, retrieved: &[S]) -> bool {
    retrieved.iter().any(|s| s == query)
}

/// Mean of per-query values (mAP@R from AP values, R@K from hit
/// indicators as 0/1).
pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("mean over an empty query set"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn map_at_r(aps: &[f64]) -> Result<f64> {
    mean(aps)
}

pub fn recall_at_k(hits: &[bool]) -> Result<f64> {
    mean(&hits.iter().map(|&h| f64::from(u8::from(h))).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        assert_eq!(ap_at_r(&'a', &['a', 'a', 'a']).unwrap(), 1.0);
        assert_eq!(ap_at_r(&'a', &['b', 'c', 'd']).unwrap(), 0.0);
        let ap = ap_at_r(&'a', &['a', 'b', 'a']).unwrap();
        assert!((ap - 5.0 / 9.0).abs() < 1e-15);
        assert!(ap_at_r::<char>(&'a', &[]).is_err());
    }

    #[test]
    fn recall_and_mean() {
        assert!(hit_at_k(&1, &[0, 0, 1]));
        assert!(!hit_at_k(&1, &[0, 0, 2]));
        assert_eq!(recall_at_k(&[true, true, false, true]).unwrap(), 0.75);
        assert_eq!(map_at_r(&[1.0, 0.0]).unwrap(), 0.5);
    }
}
