use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::MetricError;

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> impl Iterator<Item = Vec<&str>> {
    tokens
        .windows(n)
        .map(|w| w.iter().map(AsRef::as_ref).collect())
}

fn counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    for g in ngrams(tokens, n) {
        *out.entry(g).or_insert(0) += 1;
    }
    out
}

/// Cumulative BLEU with uniform weights over orders `1..=min(n, |candidate|)`.
///
/// Orders with no clipped match contribute precision `1 / (2 · total)` so a
/// single missing order does not zero the score. A candidate shorter than
/// the reference pays the brevity penalty `exp(1 − |ref| / |cand|)`.
pub fn bleu_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::InvalidOrder(n));
    }
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let orders = n.min(candidate.len());
    let mut log_sum = 0.0;
    for k in 1..=orders {
        let cand = counts(candidate, k);
        let refc = counts(reference, k);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched == 0 {
            1.0 / (2.0 * total as f64)
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(bp * (log_sum / orders as f64).exp())
}

/// Distinct n-grams over total n-grams, pooled across all candidates.
pub fn dist_n<S: AsRef<str>>(candidates: &[Vec<S>], n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::InvalidOrder(n));
    }
    let mut distinct = HashSet::new();
    let mut total = 0usize;
    for c in candidates {
        for g in ngrams(c, n) {
            total += 1;
            distinct.insert(g);
        }
    }
    if total == 0 {
        return Err(MetricError::NoNgrams(n));
    }
    Ok(distinct.len() as f64 / total as f64)
}

/// Harmonic mean of multiset-overlap precision and recall.
pub fn token_f1<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let cand = counts(candidate, 1);
    let refc = counts(reference, 1);
    let overlap: usize = cand
        .iter()
        .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / candidate.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

fn gold_set<S: AsRef<str>>(gold: &[S]) -> Result<HashSet<&str>, MetricError> {
    let set: HashSet<&str> = gold.iter().map(|g| g.as_ref().trim()).collect();
    if set.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    Ok(set)
}

/// 1-based ranks within the top `k` at which a not-yet-seen gold item appears.
fn hit_ranks<S: AsRef<str>, T: AsRef<str>>(
    ranked: &[S],
    gold: &[T],
    k: usize,
) -> Result<(Vec<usize>, usize), MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidCutoff);
    }
    let gold = gold_set(gold)?;
    let mut seen: HashSet<&str> = HashSet::new();
    let mut hits = Vec::new();
    for (i, item) in ranked.iter().take(k).enumerate() {
        let item = item.as_ref().trim();
        if gold.contains(item) && seen.insert(item) {
            hits.push(i + 1);
        }
    }
    Ok((hits, gold.len()))
}

/// NDCG@k with binary relevance; items match by trimmed string equality.
pub fn ndcg_at_k<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], gold: &[T], k: usize) -> Result<f64, MetricError> {
    let (hits, n_gold) = hit_ranks(ranked, gold, k)?;
    let gain = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = hits.into_iter().map(gain).sum();
    let idcg: f64 = (1..=k.min(n_gold)).map(gain).sum();
    Ok(dcg / idcg)
}

/// Reciprocal rank of the first gold item within the top `k`, else 0.
pub fn mrr_at_k<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], gold: &[T], k: usize) -> Result<f64, MetricError> {
    let (hits, _) = hit_ranks(ranked, gold, k)?;
    Ok(hits.first().map_or(0.0, |&r| 1.0 / r as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Exact-set accuracy and micro-averaged precision, recall and F1.
///
/// When nothing is predicted (or nothing is gold) anywhere, precision
/// (recall) is 1 if the other side is empty too and 0 otherwise.
pub fn classification_prf<L: Ord>(
    predictions: &[BTreeSet<L>],
    golds: &[BTreeSet<L>],
) -> Result<Prf, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::NoExamples);
    }
    let (mut exact, mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(golds) {
        if p == g {
            exact += 1;
        }
        let hit = p.intersection(g).count();
        tp += hit;
        fp += p.len() - hit;
        fn_ += g.len() - hit;
    }
    let ratio = |num: usize, den: usize, other_empty: bool| {
        if den == 0 {
            if other_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp, tp + fn_ == 0);
    let recall = ratio(tp, tp + fn_, tp + fp == 0);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf {
        accuracy: exact as f64 / golds.len() as f64,
        precision,
        recall,
        f1,
    })
}
