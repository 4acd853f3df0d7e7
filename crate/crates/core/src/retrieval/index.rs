//! Exact and inverted-file cosine search over unit fingerprints.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;

use super::fingerprint::Fingerprint;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_KMEANS_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub scan_id: String,
    pub subject_id: String,
    pub similarity: f64,
}

/// Coarse k-means partition of the entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Ivf {
    /// `n_cells`×`dim`, row-major, unit rows.
    pub centroids: Vec<f32>,
    /// Entry indices per cell, ascending.
    pub cells: Vec<Vec<u32>>,
}

impl Ivf {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintIndex {
    pub dim: usize,
    pub entries: Vec<Fingerprint>,
    pub ivf: Option<Ivf>,
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn rank(a: &Hit, b: &Hit) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.scan_id.cmp(&b.scan_id))
}

/// Default cell count: `round(√N)`, at least 1.
pub fn default_cells(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(1)
}

impl FingerprintIndex {
    /// Stores the fingerprints as-is. A query scans every entry:
    /// `O(N·dim)` similarity work plus an `O(N log N)` sort.
    pub fn build_exact(entries: Vec<Fingerprint>) -> Result<Self> {
        let dim = entries
            .first()
            .map(Fingerprint::dim)
            .ok_or_else(|| Error::invalid("cannot index an empty fingerprint set"))?;
        if dim == 0 {
            return Err(Error::invalid("fingerprints have zero dimension"));
        }
        let mut ids = HashSet::new();
        for e in &entries {
            if e.dim() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "fingerprint {} has dim {}, expected {dim}",
                    e.scan_id,
                    e.dim()
                )));
            }
            if !ids.insert(e.scan_id.as_str()) {
                return Err(Error::invalid(format!("duplicate scan_id {}", e.scan_id)));
            }
        }
        Ok(Self {
            dim,
            entries,
            ivf: None,
        })
    }

    /// Exact index plus a spherical k-means partition into `n_cells`
    /// (default `round(√N)`).
    pub fn build_ivf(entries: Vec<Fingerprint>, n_cells: Option<usize>, kmeans_iters: usize, seed_value: u64) -> Result<Self> {
        let mut index = Self::build_exact(entries)?;
        let n = index.len();
        let cells = n_cells.unwrap_or_else(|| default_cells(n));
        if cells == 0 || cells > n {
            return Err(Error::invalid(format!("n_cells must lie in 1..={n}, got {cells}")));
        }
        index.ivf = Some(spherical_kmeans(&index.entries, index.dim, cells, kmeans_iters, seed_value));
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, scan_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.scan_id == scan_id)
    }

    fn check_query(&self, q: &[f32], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if q.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "query has dim {}, index has {}",
                q.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn rank_candidates(&self, q: &[f32], k: usize, exclude: Option<&str>, candidates: impl Iterator<Item = usize>) -> Result<Vec<Hit>> {
        let mut hits: Vec<Hit> = candidates
            .map(|i| &self.entries[i])
            .filter(|e| Some(e.scan_id.as_str()) != exclude)
            .map(|e| Hit {
                scan_id: e.scan_id.clone(),
                subject_id: e.subject_id.clone(),
                similarity: dot(q, &e.vector),
            })
            .collect();
        if hits.is_empty() {
            return Err(Error::invalid("no entries left to search"));
        }
        hits.sort_by(rank);
        hits.truncate(k);
        Ok(hits)
    }

    /// Top-`k` entries by cosine similarity, descending, ties by ascending
    /// scan_id; `exclude` never appears.
    pub fn query(&self, q: &[f32], k: usize, exclude: Option<&str>) -> Result<Vec<Hit>> {
        self.check_query(q, k)?;
        self.rank_candidates(q, k, exclude, 0..self.len())
    }

    /// Like [`query`](Self::query) but only over the `n_probe` cells whose
    /// centroids are most similar to `q`.
    pub fn query_ivf(&self, q: &[f32], k: usize, n_probe: usize, exclude: Option<&str>) -> Result<Vec<Hit>> {
        self.check_query(q, k)?;
        let ivf = self
            .ivf
            .as_ref()
            .ok_or_else(|| Error::invalid("index has no inverted-file structure"))?;
        if n_probe == 0 || n_probe > ivf.n_cells() {
            return Err(Error::invalid(format!(
                "n_probe must lie in 1..={}, got {n_probe}",
                ivf.n_cells()
            )));
        }
        let probe = nearest_cells(&ivf.centroids, self.dim, q, n_probe);
        let candidates = probe.into_iter().flat_map(|c| ivf.cells[c].iter().map(|&i| i as usize));
        self.rank_candidates(q, k, exclude, candidates)
    }

    /// Number of entries an IVF query with `n_probe` would score.
    pub fn candidate_count(&self, q: &[f32], n_probe: usize) -> Result<usize> {
        let ivf = self
            .ivf
            .as_ref()
            .ok_or_else(|| Error::invalid("index has no inverted-file structure"))?;
        let probe = nearest_cells(&ivf.centroids, self.dim, q, n_probe.min(ivf.n_cells()));
        Ok(probe.iter().map(|&c| ivf.cells[c].len()).sum())
    }
}

/// Cells ordered by centroid similarity (ties to the lower cell), first `n`.
fn nearest_cells(centroids: &[f32], dim: usize, q: &[f32], n: usize) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = centroids
        .chunks_exact(dim)
        .map(|c| dot(q, c))
        .enumerate()
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().take(n).map(|(c, _)| c).collect()
}

fn argmax_cell(centroids: &[f32], dim: usize, v: &[f32]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(v, row);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

fn normalize_into(acc: &[f64], out: &mut [f32]) -> bool {
    let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return false;
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = (a / n) as f32;
    }
    true
}

/// k-means on the unit sphere with k-means++ seeding (distance `1 − cos`).
/// Cells that end up empty keep their previous centroid.
fn spherical_kmeans(entries: &[Fingerprint], dim: usize, k: usize, iters: usize, seed_value: u64) -> Ivf {
    let n = entries.len();
    let mut rng = seed::rng(&[seed_value, seed::stream::KMEANS]);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = entries
        .iter()
        .map(|e| (1.0 - dot(&e.vector, &entries[chosen[0]].vector)).max(0.0))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive total")
        } else {
            // all remaining points coincide with a centre: take unused ones
            let used: HashSet<usize> = chosen.iter().copied().collect();
            let free: Vec<usize> = (0..n).filter(|i| !used.contains(i)).collect();
            free[sample(&mut rng, free.len(), 1).index(0)]
        };
        chosen.push(next);
        for (d, e) in dist.iter_mut().zip(entries) {
            *d = d.min((1.0 - dot(&e.vector, &entries[next].vector)).max(0.0));
        }
    }
    let mut centroids: Vec<f32> = chosen
        .iter()
        .flat_map(|&i| entries[i].vector.iter().copied())
        .collect();
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (a, e) in assign.iter_mut().zip(entries) {
            *a = argmax_cell(&centroids, dim, &e.vector);
        }
        let mut sums = vec![0.0f64; k * dim];
        for (&a, e) in assign.iter().zip(entries) {
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(&e.vector) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            normalize_into(&sums[c * dim..(c + 1) * dim], &mut centroids[c * dim..(c + 1) * dim]);
        }
    }
    let mut cells = vec![Vec::new(); k];
    for (i, e) in entries.iter().enumerate() {
        cells[argmax_cell(&centroids, dim, &e.vector)].push(i as u32);
    }
    Ivf { centroids, cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_entries(n: usize, dim: usize, seed_value: u64) -> Vec<Fingerprint> {
        let mut rng = seed::rng(&[seed_value]);
        (0..n)
            .map(|i| {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                Fingerprint::new(format!("s{i:04}"), format!("p{}", i % 7), &v).unwrap()
            })
            .collect()
    }

    #[test]
    fn singleton_and_duplicates() {
        let e = random_entries(1, 4, 0);
        let idx = FingerprintIndex::build_exact(e.clone()).unwrap();
        let hits = idx.query(&e[0].vector, 3, None).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].scan_id, "s0000");
        assert!(idx.query(&e[0].vector, 3, Some("s0000")).is_err());
        assert!(FingerprintIndex::build_exact(vec![e[0].clone(), e[0].clone()]).is_err());
        assert!(FingerprintIndex::build_exact(vec![]).is_err());
    }

    #[test]
    fn ties_break_by_scan_id() {
        let e = vec![
            Fingerprint::new("b", "x", &[1.0, 0.0]).unwrap(),
            Fingerprint::new("a", "y", &[1.0, 0.0]).unwrap(),
            Fingerprint::new("c", "z", &[0.0, 1.0]).unwrap(),
        ];
        let idx = FingerprintIndex::build_exact(e).unwrap();
        let ids: Vec<_> = idx.query(&[1.0, 0.0], 5, None).unwrap().into_iter().map(|h| h.scan_id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn ivf_partitions_and_full_probe_matches_exact() {
        let e = random_entries(120, 8, 5);
        let idx = FingerprintIndex::build_ivf(e.clone(), None, 20, 1).unwrap();
        let ivf = idx.ivf.as_ref().unwrap();
        assert_eq!(ivf.n_cells(), 11);
        let mut all: Vec<u32> = ivf.cells.concat();
        all.sort();
        assert_eq!(all, (0..120).collect::<Vec<u32>>());
        for q in e.iter().take(20) {
            let exact = idx.query(&q.vector, 10, Some(&q.scan_id)).unwrap();
            let ivfq = idx.query_ivf(&q.vector, 10, 11, Some(&q.scan_id)).unwrap();
            assert_eq!(exact, ivfq);
        }
        let single = FingerprintIndex::build_ivf(e.clone(), Some(1), 20, 1).unwrap();
        assert_eq!(single.ivf.unwrap().cells[0].len(), 120);
        assert!(FingerprintIndex::build_ivf(e, Some(121), 20, 1).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let e = random_entries(50, 6, 2);
        let a = FingerprintIndex::build_ivf(e.clone(), Some(5), 20, 3).unwrap();
        let b = FingerprintIndex::build_ivf(e, Some(5), 20, 3).unwrap();
        assert_eq!(a, b);
    }
}
