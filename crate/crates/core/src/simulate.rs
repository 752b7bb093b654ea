//! Bernoulli environment simulator: drives a registered target with
//! synthetic traffic, posts display/click feedback, and reports per-epoch
//! convergence.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::error::{Error, Result};
use crate::feedback::FeedbackEvent;
use crate::registry::{Engine, ExploreRequest};

/// Synthetic timestamps start here and advance one millisecond per round.
const BASE_TS_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimCandidate {
    pub id: String,
    pub true_ctr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimEnvironment {
    pub candidates: Vec<SimCandidate>,
    pub target_reward: f64,
    pub rounds: u64,
    pub epoch_size: u64,
    pub seed: u64,
}

impl SimEnvironment {
    pub fn from_json(json: &str) -> Result<Self> {
        let env: SimEnvironment = serde_json::from_str(json)
            .map_err(|e| Error::InvalidInput(format!("simulation environment: {e}")))?;
        env.validate()?;
        Ok(env)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidInput("environment has no candidates".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.candidates {
            if c.id.is_empty() {
                return Err(Error::InvalidInput("candidate id is empty".into()));
            }
            if !seen.insert(&c.id) {
                return Err(Error::InvalidInput(format!("duplicate candidate id {:?}", c.id)));
            }
            if !(c.true_ctr.is_finite() && (0.0..=1.0).contains(&c.true_ctr)) {
                return Err(Error::InvalidInput(format!(
                    "candidate {:?}: true_ctr must be in [0, 1], got {}",
                    c.id, c.true_ctr
                )));
            }
        }
        if self.epoch_size == 0 {
            return Err(Error::InvalidInput("epoch_size must be positive".into()));
        }
        if self.rounds > 0 && self.epoch_size > self.rounds {
            return Err(Error::InvalidInput(format!(
                "epoch_size {} exceeds rounds {}",
                self.epoch_size, self.rounds
            )));
        }
        Ok(())
    }
}

/// Convergence report for one completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    /// 1-based epoch index.
    pub epoch: u64,
    /// Fraction of this epoch's decisions that chose each candidate.
    pub display_share: BTreeMap<String, f64>,
    /// |cumulative observed CTR − target_reward|; absent before the first
    /// display for a candidate.
    pub deviation: BTreeMap<String, Option<f64>>,
    pub cumulative_decisions: u64,
}

/// Drive `rounds` decisions through the engine. Each round explores one
/// synthetic unit, posts a display event for the served candidate, and
/// draws a click from that candidate's true rate. Trailing rounds short of
/// a full epoch are not reported; zero rounds yield no reports.
pub fn run_simulation(
    engine: &Engine,
    target_id: &str,
    env: &SimEnvironment,
) -> Result<Vec<EpochReport>> {
    env.validate()?;
    if !engine.has_target(target_id) {
        return Err(Error::NotFound(format!("target {target_id:?}")));
    }
    if engine.task_type(target_id)? != crate::config::TaskType::CandidateSelection {
        return Err(Error::InvalidInput(format!(
            "simulation needs a candidate_selection target; {target_id:?} is not one"
        )));
    }
    engine.subscribe(target_id)?;
    // Satisfy the target's trigger by construction.
    let attributes = engine.trigger(target_id)?;

    let data: Value = json!({
        "candidates": env
            .candidates
            .iter()
            .map(|c| json!({"id": c.id, "payload": c.id}))
            .collect::<Vec<_>>()
    });
    let ctr_of: BTreeMap<&str, f64> =
        env.candidates.iter().map(|c| (c.id.as_str(), c.true_ctr)).collect();
    let default_choice = env.candidates[0].id.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
    let mut epoch_displays: BTreeMap<String, u64> = BTreeMap::new();
    let mut cum_displays: BTreeMap<String, u64> = BTreeMap::new();
    let mut cum_clicks: BTreeMap<String, u64> = BTreeMap::new();
    let mut reports = Vec::new();

    for t in 0..env.rounds {
        let ts = BASE_TS_MS + t;
        let resp = engine.explore(&ExploreRequest {
            target_id: target_id.to_owned(),
            unit_id: format!("sim-unit-{t}"),
            attributes: attributes.clone(),
            transformer_id: None,
            data: data.clone(),
            timestamp_ms: Some(ts),
        })?;
        // Passthroughs still serve something: the caller's default, the
        // first candidate.
        let chosen = resp.chosen_candidate_id.unwrap_or_else(|| default_choice.clone());

        // One click draw per round regardless of outcome keeps the random
        // stream aligned across traffic rates.
        let clicked = rng.random::<f64>() < ctr_of[chosen.as_str()];

        engine.ingest_event(&FeedbackEvent {
            decision_id: resp.decision_id.clone(),
            event_type: "display".into(),
            timestamp_ms: ts,
        })?;
        if clicked {
            engine.ingest_event(&FeedbackEvent {
                decision_id: resp.decision_id,
                event_type: "click".into(),
                timestamp_ms: ts,
            })?;
        }

        *epoch_displays.entry(chosen.clone()).or_default() += 1;
        *cum_displays.entry(chosen.clone()).or_default() += 1;
        if clicked {
            *cum_clicks.entry(chosen).or_default() += 1;
        }

        if (t + 1) % env.epoch_size == 0 {
            let mut display_share = BTreeMap::new();
            let mut deviation = BTreeMap::new();
            for c in &env.candidates {
                let epoch_count = epoch_displays.get(&c.id).copied().unwrap_or(0);
                display_share.insert(c.id.clone(), epoch_count as f64 / env.epoch_size as f64);
                let displays = cum_displays.get(&c.id).copied().unwrap_or(0);
                let dev = (displays > 0).then(|| {
                    let clicks = cum_clicks.get(&c.id).copied().unwrap_or(0);
                    (clicks as f64 / displays as f64 - env.target_reward).abs()
                });
                deviation.insert(c.id.clone(), dev);
            }
            reports.push(EpochReport {
                epoch: (t + 1) / env.epoch_size,
                display_share,
                deviation,
                cumulative_decisions: t + 1,
            });
            epoch_displays.clear();
        }
    }
    Ok(reports)
}

/// Write reports as CSV, one row per (epoch, candidate) in environment
/// order. Deviation is empty until a candidate has trials.
pub fn write_csv<W: io::Write>(
    reports: &[EpochReport],
    env: &SimEnvironment,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "candidate_id", "display_share", "deviation", "cumulative_decisions"])
        .map_err(csv_err)?;
    for report in reports {
        for c in &env.candidates {
            let share = report.display_share.get(&c.id).copied().unwrap_or(0.0);
            let dev = report
                .deviation
                .get(&c.id)
                .copied()
                .flatten()
                .map_or(String::new(), |d| format!("{d:.6}"));
            w.write_record([
                report.epoch.to_string(),
                c.id.clone(),
                format!("{share:.6}"),
                dev,
                report.cumulative_decisions.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidState(format!("csv write: {e}"))
}
