//! Leave-one-out retrieval over one split.

use std::collections::HashMap;
use std::fmt::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{ap_at_r, hit_at_k, map_at_r, recall_at_k};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::retrieval::{fingerprints, Fingerprint, FingerprintIndex};
use crate::transforms::LoadedScan;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub scan_id: String,
    pub subject_id: String,
    pub ap_at_k: f64,
    pub hit_at_k: bool,
    pub retrieved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Mean fingerprint extraction time per scan.
    pub extraction_ms: f64,
    /// Mean exact query time.
    pub query_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub n_queries: usize,
    /// Queries whose subject has no other scan in the gallery.
    pub excluded_queries: usize,
    pub map_at_k: f64,
    pub recall_at_k: f64,
    pub per_query: Vec<QueryResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<Timing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl EvalReport {
    pub fn ap_values(&self) -> Vec<f64> {
        self.per_query.iter().map(|q| q.ap_at_k).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Runs every fingerprint as a query against the rest.
pub fn evaluate_fingerprints(gallery: &[Fingerprint], k: usize) -> Result<EvalReport> {
    Ok(evaluate_timed(gallery, k)?.0)
}

fn evaluate_timed(gallery: &[Fingerprint], k: usize) -> Result<(EvalReport, f64)> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let index = FingerprintIndex::build_exact(gallery.to_vec())?;
    let mut per_subject: HashMap<&str, usize> = HashMap::new();
    for f in gallery {
        *per_subject.entry(&f.subject_id).or_default() += 1;
    }
    let mut per_query = Vec::new();
    let mut excluded = 0;
    let start = Instant::now();
    for q in gallery {
        if per_subject[q.subject_id.as_str()] < 2 {
            excluded += 1;
            continue;
        }
        let hits = index.query(&q.vector, k, Some(&q.scan_id))?;
        let subjects: Vec<&str> = hits.iter().map(|h| h.subject_id.as_str()).collect();
        per_query.push(QueryResult {
            scan_id: q.scan_id.clone(),
            subject_id: q.subject_id.clone(),
            ap_at_k: ap_at_r(&q.subject_id.as_str(), &subjects)?,
            hit_at_k: hit_at_k(&q.subject_id.as_str(), &subjects),
            retrieved: hits.into_iter().map(|h| h.scan_id).collect(),
        });
    }
    let query_ms = start.elapsed().as_secs_f64() * 1e3 / per_query.len().max(1) as f64;
    if per_query.is_empty() {
        return Err(Error::invalid("no query has a same-subject scan in the gallery"));
    }
    let aps: Vec<f64> = per_query.iter().map(|q| q.ap_at_k).collect();
    let hits: Vec<bool> = per_query.iter().map(|q| q.hit_at_k).collect();
    let report = EvalReport {
        k,
        split: None,
        n_queries: per_query.len(),
        excluded_queries: excluded,
        map_at_k: map_at_r(&aps)?,
        recall_at_k: recall_at_k(&hits)?,
        per_query,
        timing_ms: None,
        config: None,
    };
    Ok((report, query_ms))
}

/// Fingerprints every scan with `store` and evaluates retrieval at `k`.
/// Wall-clock timings are only recorded when `timed` is set, so untimed
/// reports are reproducible byte for byte.
pub fn evaluate(store: &ParamStore, scans: &[LoadedScan], k: usize, timed: bool) -> Result<EvalReport> {
    if scans.is_empty() {
        return Err(Error::invalid("split has no scans"));
    }
    let start = Instant::now();
    let fps = fingerprints(
        store,
        scans
            .iter()
            .map(|s| (s.record.scan_id.as_str(), s.record.subject_id.as_str(), &s.slice)),
    )?;
    let extraction_ms = start.elapsed().as_secs_f64() * 1e3 / scans.len() as f64;
    let (mut report, query_ms) = evaluate_timed(&fps, k)?;
    if timed {
        report.timing_ms = Some(Timing {
            extraction_ms,
            query_ms,
        });
    }
    Ok(report)
}

/// Fixed-width `method  R@k  mAP@k` table, values in percent.
pub fn summary_table(rows: &[(&str, &EvalReport)]) -> String {
    let k = rows.first().map_or(DEFAULT_K, |(_, r)| r.k);
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let r_head = format!("R@{k}");
    let m_head = format!("mAP@{k}");
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", "method", r_head, m_head);
    for (method, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}  {:>8.2}",
            method,
            r.recall_at_k * 100.0,
            r.map_at_k * 100.0
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(id: &str, subject: &str, v: &[f32]) -> Fingerprint {
        Fingerprint::new(id, subject, v).unwrap()
    }

    #[test]
    fn perfect_toy_gallery() {
        let mut g = Vec::new();
        for (s, dir) in [("A", [1.0, 0.0, 0.0]), ("B", [0.0, 1.0, 0.0]), ("C", [0.0, 0.0, 1.0])] {
            for i in 0..4 {
                g.push(fp(&format!("{s}{i}"), s, &dir));
            }
        }
        let r = evaluate_fingerprints(&g, 3).unwrap();
        assert_eq!(r.map_at_k, 1.0);
        assert_eq!(r.recall_at_k, 1.0);
        assert_eq!(r.n_queries, 12);
    }

    #[test]
    fn singleton_subjects_are_excluded() {
        let g = vec![
            fp("a0", "A", &[1.0, 0.0]),
            fp("a1", "A", &[0.9, 0.1]),
            fp("b0", "B", &[0.0, 1.0]),
        ];
        let r = evaluate_fingerprints(&g, 3).unwrap();
        assert_eq!((r.n_queries, r.excluded_queries), (2, 1));
        let mean = r.per_query.iter().map(|q| q.ap_at_k).sum::<f64>() / 2.0;
        assert_eq!(r.map_at_k, mean);
    }

    #[test]
    fn table_layout() {
        let g = vec![fp("a0", "A", &[1.0, 0.0]), fp("a1", "A", &[0.9, 0.1])];
        let r = evaluate_fingerprints(&g, 3).unwrap();
        let t = summary_table(&[("combined", &r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "method         R@3     mAP@3");
        assert_eq!(lines[1], "combined    100.00    100.00");
    }
}
