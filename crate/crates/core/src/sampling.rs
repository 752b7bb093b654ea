//! Active-learning samplers: given one model prediction, decide whether to
//! spend an exposure on collecting a label for it.
//!
//! Every sampler reduces to a single acceptance probability compared
//! against one seeded uniform draw, so raising the configured rate can
//! never turn an accept into a reject for the same seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::u01_from_seed;
use crate::model::DecisionContext;

/// One scored model prediction arriving at an active-learning target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInput {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl PredictionInput {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidInput(format!("score must be in [0, 1], got {s}")));
            }
        }
        if let Some(probs) = &self.class_probs {
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidInput("class_probs entries must be >= 0".into()));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("class_probs sum {sum} != 1")));
            }
        }
        Ok(())
    }

    fn score_required(&self) -> Result<f64> {
        self.validate()?;
        self.score
            .ok_or_else(|| Error::InvalidInput(format!("prediction {:?} has no score", self.item_id)))
    }
}

pub fn check_intervals(intervals: &[[f64; 2]]) -> Result<()> {
    for iv in intervals {
        // NaN bounds fail the `contains` checks, so the direct comparison is safe.
        if iv[0] > iv[1] || !(0.0..=1.0).contains(&iv[0]) || !(0.0..=1.0).contains(&iv[1]) {
            return Err(Error::InvalidInput(format!(
                "interval [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                iv[0], iv[1]
            )));
        }
    }
    let mut sorted: Vec<&[f64; 2]> = intervals.iter().collect();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
    for pair in sorted.windows(2) {
        if pair[1][0] <= pair[0][1] {
            return Err(Error::InvalidInput(format!(
                "intervals [{}, {}] and [{}, {}] overlap",
                pair[0][0], pair[0][1], pair[1][0], pair[1][1]
            )));
        }
    }
    Ok(())
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
        return Err(Error::InvalidInput(format!("rate must be in [0, 1], got {rate}")));
    }
    Ok(())
}

fn accept(probability: f64, ctx: &DecisionContext) -> bool {
    u01_from_seed(ctx.rng_seed) < probability
}

/// Accept scores falling in any of the closed intervals, thinned by `rate`.
pub fn sample_with_interval(
    p: &PredictionInput,
    intervals: &[[f64; 2]],
    rate: f64,
    ctx: &DecisionContext,
) -> Result<bool> {
    let score = p.score_required()?;
    check_intervals(intervals)?;
    check_rate(rate)?;
    let inside = intervals.iter().any(|iv| iv[0] <= score && score <= iv[1]);
    Ok(inside && accept(rate, ctx))
}

/// Like `sample_with_interval`, but scores outside the interval are still
/// accepted with probability `rate * exp(-lambda * distance)` where
/// distance is to the nearest bound.
pub fn sample_with_interval_decay(
    p: &PredictionInput,
    interval: [f64; 2],
    rate: f64,
    lambda: f64,
    ctx: &DecisionContext,
) -> Result<bool> {
    let score = p.score_required()?;
    check_intervals(std::slice::from_ref(&interval))?;
    check_rate(rate)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("decay_lambda must be >= 0, got {lambda}")));
    }
    let d = if score < interval[0] {
        interval[0] - score
    } else if score > interval[1] {
        score - interval[1]
    } else {
        0.0
    };
    Ok(accept(rate * (-lambda * d).exp(), ctx))
}

/// Binary entropy in bits, with `0 * log2(0) := 0`.
pub fn binary_entropy(s: f64) -> f64 {
    let f = |x: f64| if x == 0.0 { 0.0 } else { -x * x.log2() };
    f(s) + f(1.0 - s)
}

/// Entropy in bits normalized by `log2(K)`, so the result lives in [0, 1].
pub fn normalized_entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs.iter().map(|&p| if p == 0.0 { 0.0 } else { -p * p.log2() }).sum();
    h / (probs.len() as f64).log2()
}

/// Accept predictions the binary model is unsure about: binary entropy of
/// the score at or above `threshold`, thinned by `rate`.
pub fn sample_with_entropy(
    p: &PredictionInput,
    threshold: f64,
    rate: f64,
    ctx: &DecisionContext,
) -> Result<bool> {
    let score = p.score_required()?;
    check_rate(rate)?;
    Ok(binary_entropy(score) >= threshold && accept(rate, ctx))
}

/// Multiclass uncertainty sampling on normalized entropy.
pub fn sample_with_entropy_multiclass(
    p: &PredictionInput,
    threshold: f64,
    rate: f64,
    ctx: &DecisionContext,
) -> Result<bool> {
    p.validate()?;
    check_rate(rate)?;
    let probs = p
        .class_probs
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("prediction {:?} has no class_probs", p.item_id)))?;
    if probs.len() < 2 {
        return Err(Error::InvalidInput("class_probs needs at least 2 classes".into()));
    }
    Ok(normalized_entropy(probs) >= threshold && accept(rate, ctx))
}

/// Per-score-bin acceptance quotas, reset every `window_decisions`
/// decisions so the accepted set keeps matching the configured shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedState {
    /// Ascending edges partitioning [0, 1]; bin b is
    /// [edges[b], edges[b+1]), last bin closed at 1.
    pub bin_edges: Vec<f64>,
    pub accepted_counts: Vec<u64>,
    pub quota: u64,
    pub window_decisions: u64,
    /// Index of the decision that opened the current window.
    pub window_start: u64,
    /// Decisions seen so far, accepted or not.
    pub decisions: u64,
}

impl StratifiedState {
    pub fn new(bin_edges: Vec<f64>, quota: u64, window_decisions: u64) -> Result<Self> {
        if bin_edges.len() < 2 {
            return Err(Error::Config("bin_edges needs at least two entries".into()));
        }
        if bin_edges[0] != 0.0 || *bin_edges.last().unwrap() != 1.0 {
            return Err(Error::Config("bin_edges must start at 0 and end at 1".into()));
        }
        // partial_cmp keeps NaN edges on the rejecting side of the check.
        if bin_edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Config("bin_edges must be strictly ascending".into()));
        }
        if quota == 0 {
            return Err(Error::Config("bin_quota must be positive".into()));
        }
        if window_decisions == 0 {
            return Err(Error::Config("window_decisions must be positive".into()));
        }
        let bins = bin_edges.len() - 1;
        Ok(StratifiedState {
            bin_edges,
            accepted_counts: vec![0; bins],
            quota,
            window_decisions,
            window_start: 0,
            decisions: 0,
        })
    }

    fn bin_of(&self, score: f64) -> usize {
        let bins = self.accepted_counts.len();
        for b in 0..bins {
            if score < self.bin_edges[b + 1] {
                return b;
            }
        }
        bins - 1
    }
}

/// Accept while the score's bin is under quota in the current window.
pub fn stratified_sample(
    p: &PredictionInput,
    state: &StratifiedState,
    _ctx: &DecisionContext,
) -> Result<(bool, StratifiedState)> {
    let score = p.score_required()?;
    let mut st = state.clone();
    if st.decisions - st.window_start >= st.window_decisions {
        st.accepted_counts.iter_mut().for_each(|c| *c = 0);
        st.window_start = st.decisions;
    }
    st.decisions += 1;
    let bin = st.bin_of(score);
    let accepted = st.accepted_counts[bin] < st.quota;
    if accepted {
        st.accepted_counts[bin] += 1;
    }
    debug_assert!(st.accepted_counts.iter().all(|c| *c <= st.quota));
    Ok((accepted, st))
}

/// Cosine similarity; errors on dimension mismatch or zero-norm input.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput("zero-norm embedding".into()));
    }
    Ok(dot / (na * nb))
}

/// Accept predictions whose embedding is close (max cosine over the seed
/// set at or above `threshold`) to data points we want more labels near.
pub fn sample_with_semantic_similarity(
    p: &PredictionInput,
    seeds: &[Vec<f64>],
    threshold: f64,
    rate: f64,
    ctx: &DecisionContext,
) -> Result<bool> {
    p.validate()?;
    check_rate(rate)?;
    let embedding = p
        .embedding
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("prediction {:?} has no embedding", p.item_id)))?;
    if seeds.is_empty() {
        return Err(Error::InvalidInput("seed vector set is empty".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for seed in seeds {
        best = best.max(cosine_similarity(embedding, seed)?);
    }
    Ok(best >= threshold && accept(rate, ctx))
}

/// Load seed embeddings: one vector per line, space-separated reals.
pub fn load_seed_vectors(path: &std::path::Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut vectors = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vector: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("{}:{}: bad number {tok:?}: {e}", path.display(), lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = vectors.first() {
            let first: &Vec<f64> = first;
            if first.len() != vector.len() {
                return Err(Error::InvalidInput(format!(
                    "{}:{}: dimension {} != {}",
                    path.display(),
                    lineno + 1,
                    vector.len(),
                    first.len()
                )));
            }
        }
        vectors.push(vector);
    }
    if vectors.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no seed vectors", path.display())));
    }
    Ok(vectors)
}
