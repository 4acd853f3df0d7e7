//! Easy-positive / semi-hard-negative triplet mining.

use super::losses::{Triplet, NORM_EPS};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Pairwise cosine similarities of the rows of a `b`×`s` matrix.
pub fn cosine_matrix(embeddings: &Tensor) -> Result<Vec<f64>> {
    let (b, s) = match *embeddings.shape() {
        [b, s] => (b, s),
        _ => return Err(Error::ShapeMismatch("embeddings must be 2D".into())),
    };
    let units: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            let row = &embeddings.data()[i * s..(i + 1) * s];
            let n = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter().map(|&v| v as f64 / n).collect()
        })
        .collect();
    let mut sim = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            sim[i * b + j] = units[i].iter().zip(&units[j]).map(|(x, y)| x * y).sum();
        }
    }
    Ok(sim)
}

/// Mines one triplet per anchor that has a same-subject partner.
///
/// The positive is the most similar same-subject sample. The negative is
/// the most similar other-subject sample that is still less similar than
/// the positive, or the least similar other-subject sample when none is.
/// Ties go to the lowest index.
pub fn mine_triplets<L: PartialEq>(embeddings: &Tensor, labels: &[L]) -> Result<Vec<Triplet>> {
    let b = labels.len();
    if embeddings.shape().first() != Some(&b) {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for embeddings {:?}",
            b,
            embeddings.shape()
        )));
    }
    let sim = mine_from_similarities(&cosine_matrix(embeddings)?, labels);
    if sim.is_empty() {
        return Err(Error::invalid("batch has no valid triplet"));
    }
    Ok(sim)
}

/// Mining rule on a precomputed `b`×`b` similarity matrix.
pub fn mine_from_similarities<L: PartialEq>(sim: &[f64], labels: &[L]) -> Vec<Triplet> {
    let b = labels.len();
    let mut out = Vec::new();
    for a in 0..b {
        let s = |j: usize| sim[a * b + j];
        let mut positive: Option<usize> = None;
        for j in (0..b).filter(|&j| j != a && labels[j] == labels[a]) {
            if positive.is_none_or(|p| s(j) > s(p)) {
                positive = Some(j);
            }
        }
        let Some(p) = positive else { continue };
        let sp = s(p);
        let mut semi_hard: Option<usize> = None;
        let mut easiest: Option<usize> = None;
        for j in (0..b).filter(|&j| labels[j] != labels[a]) {
            if s(j) < sp && semi_hard.is_none_or(|n| s(j) > s(n)) {
                semi_hard = Some(j);
            }
            if easiest.is_none_or(|n| s(j) < s(n)) {
                easiest = Some(j);
            }
        }
        if let Some(n) = semi_hard.or(easiest) {
            out.push(Triplet {
                anchor: a,
                positive: p,
                negative: n,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim4(pairs: &[((usize, usize), f64)]) -> Vec<f64> {
        let mut s = vec![0.0; 16];
        for i in 0..4 {
            s[i * 4 + i] = 1.0;
        }
        for &((i, j), v) in pairs {
            s[i * 4 + j] = v;
            s[j * 4 + i] = v;
        }
        s
    }

    #[test]
    fn hand_assigned_batch() {
        // subjects A A B B
        let sim = sim4(&[
            ((0, 1), 0.8),
            ((0, 2), 0.5),
            ((0, 3), 0.9),
            ((1, 2), 0.1),
            ((1, 3), 0.2),
            ((2, 3), 0.3),
        ]);
        let t = mine_from_similarities(&sim, &['A', 'A', 'B', 'B']);
        let got: Vec<_> = t.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
        // anchor 0: p=1 (0.8); negatives 0.5 and 0.9, semi-hard → 2
        // anchor 1: p=0 (0.8); negatives 0.1, 0.2 → 3
        // anchor 2: p=3 (0.3); negatives 0.5, 0.1 → 1
        // anchor 3: p=2 (0.3); negatives 0.9, 0.2 → 1
        assert_eq!(got, vec![(0, 1, 2), (1, 0, 3), (2, 3, 1), (3, 2, 1)]);
    }

    #[test]
    fn fallback_to_least_similar_negative() {
        let sim = sim4(&[
            ((0, 1), 0.1),
            ((0, 2), 0.7),
            ((0, 3), 0.4),
            ((1, 2), 0.0),
            ((1, 3), 0.0),
            ((2, 3), 0.9),
        ]);
        let t = mine_from_similarities(&sim, &[0, 0, 1, 1]);
        assert_eq!((t[0].positive, t[0].negative), (1, 3));
    }

    #[test]
    fn singletons_are_skipped() {
        let e = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0]).unwrap();
        let t = mine_triplets(&e, &["a", "a", "b"]).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|t| t.anchor != 2));
        let err = mine_triplets(&e, &["a", "b", "c"]);
        assert!(err.is_err());
    }
}
