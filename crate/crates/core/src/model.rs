//! Shared domain types and the deterministic selection primitives every
//! operator builds on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash;

/// One selectable option: a threshold value, an action name, a content item.
///
/// Payloads are opaque to the engine. Numeric parsing happens once at
/// ingestion; operators that need a number (binary search) read
/// `numeric_value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub payload: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_value: Option<f64>,
}

impl Candidate {
    /// Build a candidate, parsing the payload as a number when possible.
    pub fn new(id: impl Into<String>, payload: serde_json::Value) -> Self {
        let numeric_value = parse_numeric(&payload);
        Candidate {
            id: id.into(),
            payload,
            numeric_value,
        }
    }

    /// Candidate whose payload is its own id string.
    pub fn from_id(id: impl Into<String>) -> Self {
        let id = id.into();
        Self::new(id.clone(), serde_json::Value::String(id))
    }
}

fn parse_numeric(payload: &serde_json::Value) -> Option<f64> {
    match payload {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
}

/// Ordered candidates with optional parallel scores; the unit flowing
/// through a transformer chain. `decided` marks a final selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidateSet {
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided: Option<usize>,
}

impl ScoredCandidateSet {
    pub fn new(candidates: Vec<Candidate>) -> Self {
        ScoredCandidateSet {
            candidates,
            scores: None,
            decided: None,
        }
    }

    /// Check the structural invariants; candidate ids must be non-empty and
    /// unique, scores parallel, `decided` in range.
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidInput("candidate set is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.candidates {
            if c.id.is_empty() {
                return Err(Error::InvalidInput("candidate id is empty".into()));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate candidate id {:?}", c.id)));
            }
        }
        if let Some(scores) = &self.scores {
            if scores.len() != self.candidates.len() {
                return Err(Error::InvalidInput(format!(
                    "scores length {} != candidates length {}",
                    scores.len(),
                    self.candidates.len()
                )));
            }
        }
        if let Some(d) = self.decided {
            if d >= self.candidates.len() {
                return Err(Error::InvalidInput(format!("decided index {d} out of range")));
            }
        }
        Ok(())
    }

    /// The candidate a passthrough reproduces: the decided one if set,
    /// otherwise the first.
    pub fn default_candidate(&self) -> Option<&Candidate> {
        match self.decided {
            Some(i) => self.candidates.get(i),
            None => self.candidates.first(),
        }
    }

    pub fn decided_candidate(&self) -> Option<&Candidate> {
        self.decided.and_then(|i| self.candidates.get(i))
    }
}

/// Per-candidate pull and reward counters consumed by bandit operators.
///
/// `pulls` counts explorations (the real-time exposure counter); `trials`
/// and `successes` come from the asynchronous feedback join, so the mean
/// reward is only defined once feedback has landed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub candidate_id: String,
    pub pulls: u64,
    pub reward_sum: f64,
    pub trials: u64,
    pub successes: u64,
}

impl ArmStats {
    pub fn zero(candidate_id: impl Into<String>) -> Self {
        ArmStats {
            candidate_id: candidate_id.into(),
            pulls: 0,
            reward_sum: 0.0,
            trials: 0,
            successes: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.successes > self.trials {
            return Err(Error::InvalidInput(format!(
                "candidate {:?}: successes {} > trials {}",
                self.candidate_id, self.successes, self.trials
            )));
        }
        Ok(())
    }

    /// Mean reward `r_t(a)`, defined only when at least one trial landed.
    pub fn mean_reward(&self) -> Option<f64> {
        if self.trials == 0 {
            None
        } else {
            Some(self.successes as f64 / self.trials as f64)
        }
    }
}

/// Per-decision context threaded through every operator.
///
/// `round` is the current round `t`; `total_rounds` is `T`, the number of
/// rounds of interactive learning performed so far for the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub unit_id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub rng_seed: u64,
    pub round: u64,
    pub total_rounds: u64,
}

impl DecisionContext {
    /// Context as the registry builds it for one decision: the seed is a
    /// stable function of `(unit_id, target_id, counter)`.
    pub fn for_decision(
        unit_id: impl Into<String>,
        attributes: BTreeMap<String, String>,
        target_id: &str,
        counter: u64,
    ) -> Self {
        let unit_id = unit_id.into();
        let rng_seed = hash::decision_seed(&unit_id, target_id, counter);
        DecisionContext {
            unit_id,
            attributes,
            rng_seed,
            round: counter,
            total_rounds: counter + 1,
        }
    }

    /// Bare context with an explicit seed, for direct operator calls.
    pub fn with_seed(seed: u64) -> Self {
        DecisionContext {
            unit_id: String::new(),
            attributes: BTreeMap::new(),
            rng_seed: seed,
            round: 0,
            total_rounds: 1,
        }
    }

    /// Same decision, different random stream: chained operators each get
    /// a derived seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        DecisionContext { rng_seed: seed, ..self.clone() }
    }
}

/// Tie-breaking rule for argmax. Deterministic lowest-index is the default;
/// seeded random choice among maximal entries is opt-in per operator config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tiebreak {
    #[default]
    LowestIndex,
    SeededRandom,
}

/// Index of a maximal value. NaN entries never win.
pub fn argmax_with_tiebreak(values: &[f64], tiebreak: Tiebreak, seed: Option<u64>) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::InvalidInput("argmax over empty list".into()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut ties: Vec<usize> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if v > best {
            best = v;
            ties.clear();
            ties.push(i);
        } else if v == best {
            ties.push(i);
        }
    }
    if ties.is_empty() {
        // All entries NaN; fall back to the first index.
        return Ok(0);
    }
    match tiebreak {
        Tiebreak::LowestIndex => Ok(ties[0]),
        Tiebreak::SeededRandom => {
            let seed = seed.ok_or_else(|| {
                Error::InvalidInput("seeded_random tiebreak requires a seed".into())
            })?;
            let pick = (hash::splitmix64(seed) % ties.len() as u64) as usize;
            Ok(ties[pick])
        }
    }
}

/// Softmax with max-shift; output sums to 1 and preserves score order.
pub fn softmax_normalize(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("softmax over empty list".into()));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidInput(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {bad}")));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Sample an index from a probability vector with a single uniform draw.
pub(crate) fn sample_index(probs: &[f64], seed: u64) -> usize {
    let r = hash::u01_from_seed(seed);
    let mut cdf = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cdf += p.max(0.0);
        if r < cdf {
            return i;
        }
    }
    probs.len() - 1
}
