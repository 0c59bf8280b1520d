//! Retrieval and reconstruction metrics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::mimo_channel::ChannelTrace;
use crate::{Error, Result};

/// One query's ranked gallery and the indices relevant to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub ranking: Vec<usize>,
    pub relevant: Vec<usize>,
}

impl RankingResult {
    pub fn new(ranking: Vec<usize>, relevant: Vec<usize>) -> Result<Self> {
        let n = ranking.len();
        let mut seen = vec![false; n];
        for &i in &ranking {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::input("ranking is not a permutation of gallery indices"));
            }
        }
        Ok(Self { ranking, relevant })
    }
}

/// Gallery indices sorted by descending score; equal scores keep index order.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn average_precision(ranking: &[usize], relevant: &[usize]) -> Result<f64> {
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    if rel.is_empty() {
        return Err(Error::UndefinedMetric("average precision with no relevant items".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, idx) in ranking.iter().enumerate() {
        if rel.contains(idx) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / rel.len() as f64)
}

pub fn map_score(results: &[RankingResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::UndefinedMetric("mAP over zero queries".into()));
    }
    let mut total = 0.0;
    for r in results {
        total += average_precision(&r.ranking, &r.relevant)?;
    }
    Ok(total / results.len() as f64)
}

/// Fraction of queries with a relevant item among the first `k` (clamped to the gallery size).
pub fn rank_at_k(results: &[RankingResult], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if results.is_empty() {
        return Err(Error::UndefinedMetric("Rank@k over zero queries".into()));
    }
    let hits = results
        .iter()
        .filter(|r| {
            let k = k.min(r.ranking.len());
            r.ranking[..k].iter().any(|i| r.relevant.contains(i))
        })
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// `‖pred − truth‖²_F / ‖truth‖²_F` over whole traces.
pub fn nmse_metric(pred: &ChannelTrace, truth: &ChannelTrace) -> Result<f64> {
    if pred.len() != truth.len() || pred.dims() != truth.dims() {
        return Err(Error::shape("prediction and truth traces differ in shape"));
    }
    let mut err = 0.0;
    let mut norm = 0.0;
    for (p, t) in pred.realizations().iter().zip(truth.realizations()) {
        err += (&p.h - &t.h).norm_squared();
        norm += t.h.norm_squared();
    }
    if norm == 0.0 {
        return Err(Error::UndefinedMetric("NMSE against an all-zero reference".into()));
    }
    Ok(err / norm)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of fractional ranks).
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::input("spearman_rho needs two sequences of equal length >= 3"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in rank correlation".into()));
    }
    let rx = fractional_ranks(xs);
    let ry = fractional_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedMetric("rank correlation of a constant sequence".into()));
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}
