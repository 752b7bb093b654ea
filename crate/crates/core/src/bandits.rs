//! Candidate-selection operators: the deciders that end a transformer
//! chain by picking one candidate.
//!
//! Every operator is a pure function of (candidate set, stats snapshot,
//! context, config, explicit state); repeated calls with the same inputs
//! decide the same index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{splitmix64, u01_from_seed};
use crate::model::{
    argmax_with_tiebreak, sample_index, softmax_normalize, ArmStats, Candidate, DecisionContext,
    ScoredCandidateSet, Tiebreak,
};

/// Injected predictor for `rl_action_select`: model inference lives outside
/// the engine, only its scores flow in.
pub trait CandidateScorer: Send + Sync {
    fn score(&self, candidate: &Candidate, ctx: &DecisionContext) -> Result<f64>;
}

impl<F> CandidateScorer for F
where
    F: Fn(&Candidate, &DecisionContext) -> Result<f64> + Send + Sync,
{
    fn score(&self, candidate: &Candidate, ctx: &DecisionContext) -> Result<f64> {
        self(candidate, ctx)
    }
}

/// Tuning for target-reward steering.
///
/// `target` is the reward to steer toward, `w` scales the exploration
/// bonus, `delta` sets how much harder below-target deviations are punished
/// than above-target ones, and `min_pulls` is how many pulls a candidate
/// needs before its reward estimate is trusted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UCB1EnhancedConfig {
    pub target: f64,
    pub w: f64,
    pub delta: f64,
    pub min_pulls: u64,
}

impl UCB1EnhancedConfig {
    pub fn new(target: f64) -> Self {
        UCB1EnhancedConfig {
            target,
            w: 1.0,
            delta: 1.0,
            min_pulls: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.target.is_finite() {
            return Err(Error::Config(format!("target_reward must be finite, got {}", self.target)));
        }
        if self.w < 0.0 || !self.w.is_finite() {
            return Err(Error::Config(format!(
                "exploration_weight must be non-negative, got {}",
                self.w
            )));
        }
        // delta multiplies one branch and divides the other, so zero and
        // negatives are both meaningless.
        if self.delta <= 0.0 || !self.delta.is_finite() {
            return Err(Error::Config(format!("penalty_delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

fn check_alignment(set: &ScoredCandidateSet, stats: &[ArmStats]) -> Result<()> {
    set.validate()?;
    if stats.len() != set.candidates.len() {
        return Err(Error::InvalidInput(format!(
            "stats length {} != candidates length {}",
            stats.len(),
            set.candidates.len()
        )));
    }
    for (c, s) in set.candidates.iter().zip(stats) {
        if c.id != s.candidate_id {
            return Err(Error::InvalidInput(format!(
                "stats misaligned: candidate {:?} paired with stats for {:?}",
                c.id, s.candidate_id
            )));
        }
        s.validate()?;
    }
    Ok(())
}

/// Indices that must be pulled before their reward is trusted, ordered
/// fewest-pulls-first so a cold start cycles through every candidate
/// instead of hammering index 0 while feedback is still in flight.
fn forced_pull(stats: &[ArmStats], min_pulls: u64) -> Option<usize> {
    let floor = min_pulls.max(1);
    stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.pulls < floor || s.trials == 0)
        .min_by_key(|(i, s)| (s.pulls, *i))
        .map(|(i, _)| i)
}

fn uniform_index(k: usize, seed: u64) -> usize {
    ((u01_from_seed(seed) * k as f64) as usize).min(k - 1)
}

/// Pick the candidate maximizing exploration bonus minus asymmetric
/// distance from the target reward.
///
/// Score per candidate: `w*u - dev/delta` when the reward meets the target,
/// `w*u - delta*dev` when it falls short, with `u = sqrt(2*ln(T)/pulls)`
/// and `dev = |reward - target|`. Candidates below `min_pulls` or without
/// feedback get an infinite bonus and are served first.
pub fn ucb1_enhanced_select(
    set: &ScoredCandidateSet,
    stats: &[ArmStats],
    ctx: &DecisionContext,
    cfg: &UCB1EnhancedConfig,
) -> Result<ScoredCandidateSet> {
    check_alignment(set, stats)?;
    cfg.validate()?;

    let forced = forced_pull(stats, cfg.min_pulls);
    if forced.is_none() && ctx.total_rounds == 0 {
        return Err(Error::InvalidState(
            "total_rounds is 0 but every candidate has been pulled".into(),
        ));
    }

    let t = ctx.total_rounds as f64;
    let scores: Vec<f64> = stats
        .iter()
        .map(|s| {
            if s.pulls < cfg.min_pulls.max(1) || s.trials == 0 {
                return f64::INFINITY;
            }
            let u = (2.0 * t.ln() / s.pulls as f64).sqrt();
            let r = s.successes as f64 / s.trials as f64;
            let dev = (r - cfg.target).abs();
            let penalty = if r >= cfg.target { dev / cfg.delta } else { cfg.delta * dev };
            cfg.w * u - penalty
        })
        .collect();

    let decided = match forced {
        Some(i) => i,
        None => argmax_with_tiebreak(&scores, Tiebreak::LowestIndex, None)?,
    };

    let mut out = set.clone();
    out.scores = Some(scores);
    out.decided = Some(decided);
    Ok(out)
}

/// With probability epsilon pick uniformly at random, otherwise pick the
/// best mean reward. Candidates without feedback rank as infinite and are
/// greedily tried first, fewest pulls first.
pub fn epsilon_greedy_select(
    set: &ScoredCandidateSet,
    stats: &[ArmStats],
    ctx: &DecisionContext,
    epsilon: f64,
) -> Result<ScoredCandidateSet> {
    check_alignment(set, stats)?;
    if !(0.0..=1.0).contains(&epsilon) || !epsilon.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be in [0, 1], got {epsilon}")));
    }

    let k = set.candidates.len();
    let decided = if u01_from_seed(ctx.rng_seed) < epsilon {
        uniform_index(k, splitmix64(ctx.rng_seed ^ 0x5bd1_e995))
    } else {
        match forced_pull(stats, 0) {
            Some(i) => i,
            None => {
                let means: Vec<f64> =
                    stats.iter().map(|s| s.mean_reward().unwrap_or(f64::INFINITY)).collect();
                argmax_with_tiebreak(&means, Tiebreak::LowestIndex, None)?
            }
        }
    };

    let mut out = set.clone();
    out.scores = None;
    out.decided = Some(decided);
    Ok(out)
}

/// Sample each candidate's reward rate from Beta(1 + successes,
/// 1 + trials - successes) and pick the largest draw.
pub fn thompson_sampling_select(
    set: &ScoredCandidateSet,
    stats: &[ArmStats],
    ctx: &DecisionContext,
) -> Result<ScoredCandidateSet> {
    check_alignment(set, stats)?;

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.rng_seed);
    let draws: Vec<f64> = stats
        .iter()
        .map(|s| {
            let alpha = 1.0 + s.successes as f64;
            let beta = 1.0 + (s.trials - s.successes) as f64;
            Beta::new(alpha, beta)
                .map_err(|e| Error::InvalidInput(format!("beta({alpha}, {beta}): {e}")))
                .map(|d| d.sample(&mut rng))
        })
        .collect::<Result<_>>()?;

    let mut out = set.clone();
    out.scores = None;
    out.decided = Some(argmax_with_tiebreak(&draws, Tiebreak::LowestIndex, None)?);
    Ok(out)
}

/// Score every candidate with the injected predictor. Terminal mode picks
/// the argmax; non-terminal mode only writes scores so a downstream
/// operator (softmax, typically) can sample from them.
pub fn rl_action_select(
    set: &ScoredCandidateSet,
    ctx: &DecisionContext,
    scorer: &dyn CandidateScorer,
    terminal: bool,
) -> Result<ScoredCandidateSet> {
    set.validate()?;

    let scores: Vec<f64> = set
        .candidates
        .iter()
        .map(|c| {
            let s = scorer
                .score(c, ctx)
                .map_err(|e| Error::Scorer(format!("candidate {:?}: {e}", c.id)))?;
            if !s.is_finite() {
                return Err(Error::Scorer(format!("candidate {:?}: non-finite score {s}", c.id)));
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;

    let mut out = set.clone();
    out.decided = if terminal {
        Some(argmax_with_tiebreak(&scores, Tiebreak::LowestIndex, None)?)
    } else {
        None
    };
    out.scores = Some(scores);
    Ok(out)
}

/// Sample proportionally to softmax of the upstream scores; output scores
/// are the selection probabilities.
pub fn softmax_select(
    set: &ScoredCandidateSet,
    ctx: &DecisionContext,
    temperature: f64,
) -> Result<ScoredCandidateSet> {
    set.validate()?;
    let scores = set
        .scores
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("softmax_select requires upstream scores".into()))?;

    let probs = softmax_normalize(scores, temperature)?;
    let decided = sample_index(&probs, ctx.rng_seed);

    let mut out = set.clone();
    out.scores = Some(probs);
    out.decided = Some(decided);
    Ok(out)
}

/// Seeded uniform choice.
pub fn uniform_select(set: &ScoredCandidateSet, ctx: &DecisionContext) -> Result<ScoredCandidateSet> {
    set.validate()?;
    let mut out = set.clone();
    out.scores = None;
    out.decided = Some(uniform_index(set.candidates.len(), ctx.rng_seed));
    Ok(out)
}

/// Where a reward-monotone search over sorted candidates currently stands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchPhase {
    /// Measuring the low endpoint.
    ProbeLo,
    /// Measuring the high endpoint.
    ProbeHi,
    /// Bisecting the interval.
    Bisect,
    /// Interval collapsed; `current` is served forever.
    Settled,
}

/// Mutable state for `binary_search_select`, owned by the registry and
/// updated once per decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySearchState {
    pub lo: usize,
    pub hi: usize,
    pub current: usize,
    pub settled: bool,
    pub samples_at_current: u64,
    pub phase: SearchPhase,
    /// +1 when reward rises with numeric_value, -1 when it falls; set once
    /// both endpoints are measured.
    pub direction: Option<i8>,
    /// Last observed mean reward per visited index.
    pub visited: std::collections::BTreeMap<usize, f64>,
    pub restarts: u32,
}

impl BinarySearchState {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidInput("candidate set is empty".into()));
        }
        let settled = len == 1;
        Ok(BinarySearchState {
            lo: 0,
            hi: len - 1,
            current: 0,
            settled,
            samples_at_current: 0,
            phase: if settled { SearchPhase::Settled } else { SearchPhase::ProbeLo },
            direction: None,
            visited: std::collections::BTreeMap::new(),
            restarts: 0,
        })
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.hi >= len || self.lo > self.hi || self.current < self.lo || self.current > self.hi {
            return Err(Error::InvalidState(format!(
                "search interval lo={} current={} hi={} invalid for {len} candidates",
                self.lo, self.current, self.hi
            )));
        }
        if self.settled && self.lo != self.hi {
            return Err(Error::InvalidState("settled search with open interval".into()));
        }
        Ok(())
    }

    fn settle(&mut self, index: usize) {
        self.lo = index;
        self.hi = index;
        self.current = index;
        self.settled = true;
        self.phase = SearchPhase::Settled;
    }

    /// Visited index with minimal |reward - target|, lowest index on ties.
    fn best_visited(&self, target: f64) -> Option<usize> {
        self.visited
            .iter()
            .min_by(|(ia, ra), (ib, rb)| {
                let da = (*ra - target).abs();
                let db = (*rb - target).abs();
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(ia.cmp(ib))
            })
            .map(|(i, _)| *i)
    }
}

/// Config for `binary_search_select`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarySearchConfig {
    pub target: f64,
    pub min_samples: u64,
}

impl BinarySearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.target.is_finite() {
            return Err(Error::Config(format!("target_reward must be finite, got {}", self.target)));
        }
        if self.min_samples == 0 {
            return Err(Error::Config("min_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Serve candidates along a bisection of the numeric_value axis until the
/// observed reward brackets the target, then settle on the visited
/// candidate whose reward deviates least from it.
///
/// Rewards are assumed monotone in numeric_value; the direction is read
/// off the endpoints once both have `min_samples` trials. A midpoint whose
/// reward escapes the endpoint envelope contradicts monotonicity: the
/// search restarts once and, on a second contradiction, settles on the
/// best visited candidate.
pub fn binary_search_select(
    set: &ScoredCandidateSet,
    stats: &[ArmStats],
    state: &BinarySearchState,
    cfg: &BinarySearchConfig,
) -> Result<(ScoredCandidateSet, BinarySearchState)> {
    check_alignment(set, stats)?;
    cfg.validate()?;
    state.validate(set.candidates.len())?;

    let values: Vec<f64> = set
        .candidates
        .iter()
        .map(|c| {
            c.numeric_value.ok_or_else(|| {
                Error::InvalidInput(format!("candidate {:?} has no numeric value", c.id))
            })
        })
        .collect::<Result<_>>()?;
    // partial_cmp keeps NaN values on the rejecting side of the check.
    if values.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::InvalidInput(
            "candidates must be sorted ascending by numeric value".into(),
        ));
    }

    let mut st = state.clone();
    let last = set.candidates.len() - 1;

    // Advance through every step already supported by the stats snapshot;
    // in the steady state this loop runs zero or one iterations per call.
    let mut guard = 0usize;
    while !st.settled {
        guard += 1;
        if guard > 4 * (set.candidates.len() + 2) {
            return Err(Error::InvalidState("binary search failed to make progress".into()));
        }

        let cur = &stats[st.current];
        st.samples_at_current = cur.trials;
        if cur.trials < cfg.min_samples {
            break; // keep serving `current` until feedback accrues
        }
        let r = cur.successes as f64 / cur.trials as f64;
        st.visited.insert(st.current, r);

        match st.phase {
            SearchPhase::ProbeLo => {
                st.phase = SearchPhase::ProbeHi;
                st.current = last;
            }
            SearchPhase::ProbeHi => {
                let r_lo = st.visited[&0];
                // Equal endpoint rewards carry no direction; call it rising
                // and let the envelope check below catch any contradiction.
                st.direction = Some(if r >= r_lo { 1 } else { -1 });
                st.phase = SearchPhase::Bisect;
                st.current = (st.lo + st.hi) / 2;
            }
            SearchPhase::Bisect => {
                if r == cfg.target {
                    st.settle(st.current);
                    break;
                }
                let r_lo = st.visited[&0];
                let r_hi = st.visited[&last];
                let (env_min, env_max) = (r_lo.min(r_hi), r_lo.max(r_hi));
                if st.current != 0 && st.current != last && (r < env_min || r > env_max) {
                    log::warn!(
                        "non-monotone rewards: r({})={r} outside endpoint envelope [{env_min}, {env_max}]",
                        set.candidates[st.current].id
                    );
                    if st.restarts == 0 {
                        st.restarts = 1;
                        st.lo = 0;
                        st.hi = last;
                        st.current = 0;
                        st.phase = SearchPhase::ProbeLo;
                        st.direction = None;
                        continue;
                    }
                    let best = st.best_visited(cfg.target).unwrap_or(st.current);
                    st.settle(best);
                    break;
                }

                let rising = st.direction == Some(1);
                let go_up = (cfg.target > r) == rising;
                if go_up {
                    st.lo = st.current + 1;
                } else if st.current == 0 {
                    st.lo = 1; // can't move below index 0; mark crossing
                    st.hi = 0;
                } else {
                    st.hi = st.current - 1;
                }

                if st.lo > st.hi {
                    let best = st.best_visited(cfg.target).unwrap_or(st.current);
                    st.settle(best);
                    break;
                }
                st.current = (st.lo + st.hi) / 2;
                if st.lo == st.hi && st.visited.contains_key(&st.lo) {
                    let best = st.best_visited(cfg.target).unwrap_or(st.lo);
                    st.settle(best);
                    break;
                }
            }
            SearchPhase::Settled => unreachable!("loop exits when settled"),
        }
    }

    if st.settled && set.candidates.len() == 1 {
        st.visited.entry(0).or_insert_with(|| {
            stats[0].mean_reward().unwrap_or(f64::NAN)
        });
    }

    let mut out = set.clone();
    out.scores = None;
    out.decided = Some(st.current);
    Ok((out, st))
}
