//! Top-N ranking metrics with binary relevance.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indices sorted by descending score; ties go to the lower index.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// [`rank_desc`] restricted to `candidates`.
pub fn rank_subset(scores: &[f64], candidates: &[usize]) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub r_precision: f64,
    pub ndcg: f64,
    pub map_at_k: f64,
    pub precision_at_k: f64,
    pub recall_at_k: f64,
}

impl MetricReport {
    /// Mean of several reports with the same `k`.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            k: first.k,
            r_precision: avg(|r| r.r_precision),
            ndcg: avg(|r| r.ndcg),
            map_at_k: avg(|r| r.map_at_k),
            precision_at_k: avg(|r| r.precision_at_k),
            recall_at_k: avg(|r| r.recall_at_k),
        })
    }
}

/// Metrics of an already ranked list against a relevant set.
pub fn metrics_from_ranking(ranking: &[usize], relevant: &[usize], k: usize) -> Result<MetricReport> {
    if relevant.is_empty() {
        return Err(Error::Config("relevant set is empty".into()));
    }
    if k == 0 {
        return Err(Error::Config("cutoff k must be positive".into()));
    }
    let mut rel = relevant.to_vec();
    rel.sort_unstable();
    rel.dedup();
    let is_rel = |i: usize| rel.binary_search(&i).is_ok();
    let n_rel = rel.len();

    let r_hits = ranking.iter().take(n_rel).filter(|&&i| is_rel(i)).count();
    let mut dcg = 0.0;
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (pos, &item) in ranking.iter().take(k).enumerate() {
        if is_rel(item) {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).log2();
            ap += hits as f64 / (pos + 1) as f64;
        }
    }
    let ideal: f64 = (0..n_rel.min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    Ok(MetricReport {
        k,
        r_precision: r_hits as f64 / n_rel as f64,
        ndcg: dcg / ideal,
        map_at_k: ap / n_rel.min(k) as f64,
        precision_at_k: hits as f64 / k as f64,
        recall_at_k: hits as f64 / n_rel as f64,
    })
}

/// Ranks every index of `scores` and scores the ranking. NDCG is cut at `k`.
pub fn rank_metrics(scores: &[f64], relevant: &[usize], k: usize) -> Result<MetricReport> {
    rank_metrics_excluding(scores, relevant, k, &[])
}

/// As [`rank_metrics`] with `excluded` indices removed from the ranking
/// (e.g. items already seen in training).
pub fn rank_metrics_excluding(
    scores: &[f64],
    relevant: &[usize],
    k: usize,
    excluded: &[usize],
) -> Result<MetricReport> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("scores must be finite".into()));
    }
    if relevant.iter().any(|&i| i >= scores.len()) {
        return Err(Error::dim("relevant index out of range"));
    }
    let mut skip = vec![false; scores.len()];
    for &e in excluded {
        if e < skip.len() {
            skip[e] = true;
        }
    }
    let ranking: Vec<usize> = rank_desc(scores).into_iter().filter(|&i| !skip[i]).collect();
    metrics_from_ranking(&ranking, relevant, k)
}

/// Keyphrase-explanation quality: the predicted keyphrase scores against
/// the user's mentioned keyphrases.
pub fn explanation_metrics(k_hat: &[f64], k_true: &[usize], k: usize) -> Result<MetricReport> {
    if k_true.is_empty() {
        return Err(Error::Config("true keyphrase set is empty".into()));
    }
    rank_metrics(k_hat, k_true, k)
}
