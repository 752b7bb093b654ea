//! Exposure logging and feedback joins.
//!
//! Every explored decision is appended to an offline JSONL log and counted
//! in real-time, in-process counters. Feedback events join against
//! exposures by decision_id; named metrics (numerator event over
//! denominator event) turn the joined counts into per-candidate reward
//! snapshots for the bandits.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clock-skew tolerance before a click-timestamped-before-display pair is
/// counted as an ordering violation.
const ORDER_SKEW_MS: u64 = 5_000;

/// What happened in the run-time service after an exposure.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum EventType {
    Display,
    Click,
    Custom(String),
}

impl EventType {
    pub fn as_str(&self) -> &str {
        match self {
            EventType::Display => "display",
            EventType::Click => "click",
            EventType::Custom(s) => s,
        }
    }
}

impl From<String> for EventType {
    fn from(s: String) -> Self {
        match s.as_str() {
            "display" => EventType::Display,
            "click" => EventType::Click,
            _ => EventType::Custom(s),
        }
    }
}

impl From<EventType> for String {
    fn from(e: EventType) -> Self {
        e.as_str().to_owned()
    }
}

impl From<&str> for EventType {
    fn from(s: &str) -> Self {
        EventType::from(s.to_owned())
    }
}

/// One explored decision, as written to the offline log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureRecord {
    pub decision_id: String,
    pub target_id: String,
    pub transformer_id: String,
    pub unit_id: String,
    pub chosen_candidate_id: String,
    pub operator: String,
    pub timestamp_ms: u64,
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

/// One run-time service event referencing a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub decision_id: String,
    pub event_type: EventType,
    pub timestamp_ms: u64,
}

/// Aggregation window for a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricWindow {
    #[default]
    AllTime,
    SlidingMinutes(u64),
}

/// A named reward definition: successes are `numerator_event`s, trials are
/// `denominator_event`s, both joined per decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub numerator_event: EventType,
    pub denominator_event: EventType,
    #[serde(default)]
    pub window: MetricWindow,
}

impl MetricSpec {
    pub fn ratio(numerator: &str, denominator: &str) -> Self {
        MetricSpec {
            numerator_event: numerator.into(),
            denominator_event: denominator.into(),
            window: MetricWindow::AllTime,
        }
    }
}

/// Per-candidate reward numbers as of one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeedback {
    pub trials: u64,
    pub successes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

impl CandidateFeedback {
    fn from_tally(t: &Tally) -> Self {
        CandidateFeedback {
            trials: t.trials,
            successes: t.successes,
            reward: if t.trials > 0 { Some(t.successes as f64 / t.trials as f64) } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSnapshot {
    pub per_candidate: BTreeMap<String, CandidateFeedback>,
    pub as_of_ms: u64,
    pub window: MetricWindow,
}

/// Whether the offline append made it to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogAck {
    Logged,
    /// The log file could not be written; the real-time counters still
    /// incremented, so serving continues on stale persistence.
    CounterOnlyDegraded,
}

/// Counters kept per (target, transformer): stats for one operator chain.
pub type StatsKey = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub trials: u64,
    pub successes: u64,
}

/// Joined counts for one (metric, key, candidate).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricCandidateTally {
    pub all_time: Tally,
    /// Minute bucket (timestamp_ms / 60_000) → tally, pruned to the
    /// retention horizon; backs sliding-window snapshots.
    pub minutes: BTreeMap<u64, Tally>,
    /// Per-unit all-time tallies for user-level feedback.
    pub per_unit: BTreeMap<String, Tally>,
}

/// Monitoring counters; compared in replay tests, exported for operators.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StoreCounters {
    pub exposures_logged: u64,
    pub duplicate_exposures: u64,
    pub events_ingested: u64,
    pub duplicate_events: u64,
    pub orphaned_events: u64,
    pub ordering_violations: u64,
    pub matched_events: BTreeMap<String, u64>,
    pub malformed_lines: u64,
    pub degraded_appends: u64,
}

/// Everything a crash recovery must reproduce: the joined counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataState {
    pub pulls: BTreeMap<StatsKey, BTreeMap<String, u64>>,
    pub metrics: BTreeMap<String, BTreeMap<StatsKey, BTreeMap<String, MetricCandidateTally>>>,
    pub max_ts: u64,
}

/// Full comparable store state (join counts + monitoring counters).
#[derive(Debug, Clone, PartialEq)]
pub struct StoreDigest {
    pub data: DataState,
    pub monitoring: StoreCounters,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub exposure_log: Option<PathBuf>,
    pub events_log: Option<PathBuf>,
    /// How long an event may wait for its exposure before it is orphaned,
    /// measured against the newest ingested timestamp.
    pub grace_ms: u64,
    /// Minute buckets kept for sliding windows.
    pub retention_minutes: u64,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            exposure_log: None,
            events_log: None,
            grace_ms: 10 * 60 * 1000,
            retention_minutes: 24 * 60,
        }
    }
}

struct ExposureMeta {
    key: StatsKey,
    unit_id: String,
    candidate_id: String,
}

struct LogWriter {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl LogWriter {
    fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(LogWriter { path: path.to_owned(), writer: BufWriter::new(file) })
    }

    fn append_line(&mut self, line: &str) -> std::io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }
}

struct Inner {
    state: DataState,
    counters: StoreCounters,
    metrics: BTreeMap<String, MetricSpec>,
    exposures: BTreeMap<String, ExposureMeta>,
    /// decision_id → event type → timestamp of the already-joined event.
    seen: BTreeMap<String, BTreeMap<String, u64>>,
    /// Events whose exposure has not arrived yet.
    pending: BTreeMap<String, Vec<FeedbackEvent>>,
    exposure_writer: Option<LogWriter>,
    events_writer: Option<LogWriter>,
    grace_ms: u64,
    retention_minutes: u64,
}

/// Thread-safe exposure log + counter service + metric snapshots.
///
/// Ships with two metrics: `ctr` (click/display) and `acceptance_rate`
/// (accept/display); more register via [`FeedbackStore::register_metric`].
pub struct FeedbackStore {
    inner: Mutex<Inner>,
}

impl FeedbackStore {
    pub fn new(options: StoreOptions) -> Result<Self> {
        let exposure_writer = options.exposure_log.as_deref().map(LogWriter::open).transpose()?;
        let events_writer = options.events_log.as_deref().map(LogWriter::open).transpose()?;
        let mut metrics = BTreeMap::new();
        metrics.insert("ctr".to_owned(), MetricSpec::ratio("click", "display"));
        metrics.insert("acceptance_rate".to_owned(), MetricSpec::ratio("accept", "display"));
        Ok(FeedbackStore {
            inner: Mutex::new(Inner {
                state: DataState::default(),
                counters: StoreCounters::default(),
                metrics,
                exposures: BTreeMap::new(),
                seen: BTreeMap::new(),
                pending: BTreeMap::new(),
                exposure_writer,
                events_writer,
                grace_ms: options.grace_ms,
                retention_minutes: options.retention_minutes,
            }),
        })
    }

    pub fn in_memory() -> Self {
        Self::new(StoreOptions::default()).expect("in-memory store cannot fail to open")
    }

    pub fn register_metric(&self, name: impl Into<String>, spec: MetricSpec) {
        self.lock().metrics.insert(name.into(), spec);
    }

    pub fn has_metric(&self, name: &str) -> bool {
        self.lock().metrics.contains_key(name)
    }

    pub fn metrics(&self) -> BTreeMap<String, MetricSpec> {
        self.lock().metrics.clone()
    }

    /// Append to the offline log and bump the real-time pull counter.
    /// Duplicate decision ids are ignored; a failed append degrades to
    /// counter-only operation instead of failing the decision.
    pub fn log_exposure(&self, rec: &ExposureRecord) -> Result<LogAck> {
        if rec.decision_id.is_empty() {
            return Err(Error::InvalidInput("exposure decision_id is empty".into()));
        }
        let mut inner = self.lock();
        if inner.exposures.contains_key(&rec.decision_id) {
            inner.counters.duplicate_exposures += 1;
            return Ok(LogAck::Logged);
        }

        let mut ack = LogAck::Logged;
        let line = serde_json::to_string(rec)?;
        if let Some(w) = inner.exposure_writer.as_mut() {
            if let Err(e) = w.append_line(&line) {
                log::warn!("exposure log {} unwritable: {e}", w.path.display());
                inner.counters.degraded_appends += 1;
                ack = LogAck::CounterOnlyDegraded;
            }
        }

        inner.apply_exposure(rec);
        Ok(ack)
    }

    /// Join an event against its exposure; buffer it when the exposure has
    /// not arrived yet. Never a hard error.
    pub fn ingest_event(&self, ev: &FeedbackEvent) -> Result<()> {
        if ev.decision_id.is_empty() {
            return Err(Error::InvalidInput("event decision_id is empty".into()));
        }
        let mut inner = self.lock();
        let line = serde_json::to_string(ev)?;
        if let Some(w) = inner.events_writer.as_mut() {
            if let Err(e) = w.append_line(&line) {
                log::warn!("events log {} unwritable: {e}", w.path.display());
                inner.counters.degraded_appends += 1;
            }
        }
        inner.apply_event(ev);
        Ok(())
    }

    /// Snapshot a metric aggregated over every transformer of a target.
    pub fn fetch(
        &self,
        fetcher: &str,
        target_id: &str,
        level: FeedbackLevel,
        unit_id: Option<&str>,
    ) -> Result<FeedbackSnapshot> {
        self.fetch_inner(fetcher, target_id, None, level, unit_id)
    }

    /// Snapshot a metric for one (target, transformer) stats key.
    pub fn fetch_for_transformer(
        &self,
        fetcher: &str,
        target_id: &str,
        transformer_id: &str,
        level: FeedbackLevel,
        unit_id: Option<&str>,
    ) -> Result<FeedbackSnapshot> {
        self.fetch_inner(fetcher, target_id, Some(transformer_id), level, unit_id)
    }

    fn fetch_inner(
        &self,
        fetcher: &str,
        target_id: &str,
        transformer_id: Option<&str>,
        level: FeedbackLevel,
        unit_id: Option<&str>,
    ) -> Result<FeedbackSnapshot> {
        let inner = self.lock();
        let spec = inner
            .metrics
            .get(fetcher)
            .ok_or_else(|| Error::NotFound(format!("fetcher {fetcher:?}")))?
            .clone();
        if level == FeedbackLevel::User && unit_id.is_none() {
            return Err(Error::InvalidInput("user-level fetch requires unit_id".into()));
        }

        let mut per_candidate: BTreeMap<String, Tally> = BTreeMap::new();
        if let Some(by_key) = inner.state.metrics.get(fetcher) {
            for (key, candidates) in by_key {
                if key.0 != target_id {
                    continue;
                }
                if let Some(t) = transformer_id {
                    if key.1 != t {
                        continue;
                    }
                }
                for (cand, tally) in candidates {
                    let t = match (level, unit_id) {
                        (FeedbackLevel::User, Some(unit)) => {
                            tally.per_unit.get(unit).copied().unwrap_or_default()
                        }
                        _ => match spec.window {
                            MetricWindow::AllTime => tally.all_time,
                            MetricWindow::SlidingMinutes(m) => {
                                let now_minute = inner.state.max_ts / 60_000;
                                let cutoff = now_minute.saturating_sub(m);
                                let mut sum = Tally::default();
                                for (minute, t) in tally.minutes.range(cutoff + 1..) {
                                    debug_assert!(*minute <= now_minute);
                                    sum.trials += t.trials;
                                    sum.successes += t.successes;
                                }
                                sum
                            }
                        },
                    };
                    if t.trials > 0 {
                        let entry = per_candidate.entry(cand.clone()).or_default();
                        entry.trials += t.trials;
                        entry.successes += t.successes;
                    }
                }
            }
        }

        Ok(FeedbackSnapshot {
            per_candidate: per_candidate
                .iter()
                .map(|(c, t)| (c.clone(), CandidateFeedback::from_tally(t)))
                .collect(),
            as_of_ms: inner.state.max_ts,
            window: spec.window,
        })
    }

    /// Live pull counts (exploration exposures) for one stats key.
    pub fn pulls(&self, target_id: &str, transformer_id: &str) -> BTreeMap<String, u64> {
        self.lock()
            .state
            .pulls
            .get(&(target_id.to_owned(), transformer_id.to_owned()))
            .cloned()
            .unwrap_or_default()
    }

    /// Exposures logged for a target across all transformers.
    pub fn exposure_count(&self, target_id: &str) -> u64 {
        self.lock()
            .state
            .pulls
            .iter()
            .filter(|(k, _)| k.0 == target_id)
            .map(|(_, by_cand)| by_cand.values().sum::<u64>())
            .sum()
    }

    pub fn counters(&self) -> StoreCounters {
        self.lock().counters.clone()
    }

    pub fn digest(&self) -> StoreDigest {
        let inner = self.lock();
        StoreDigest { data: inner.state.clone(), monitoring: inner.counters.clone() }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Rebuild a store from the offline logs, merging exposures and events
    /// by timestamp (exposures first within a timestamp, then file order).
    /// Malformed lines are skipped and counted.
    pub fn replay_offline_log(
        exposure_path: &Path,
        events_path: Option<&Path>,
        metrics: &BTreeMap<String, MetricSpec>,
        options: StoreOptions,
    ) -> Result<FeedbackStore> {
        if !exposure_path.exists() {
            return Err(Error::NotFound(format!("log file {}", exposure_path.display())));
        }
        let store = FeedbackStore::new(StoreOptions {
            exposure_log: None,
            events_log: None,
            ..options
        })?;
        for (name, spec) in metrics {
            store.register_metric(name.clone(), spec.clone());
        }

        enum Entry {
            Exposure(ExposureRecord),
            Event(FeedbackEvent),
        }
        let mut merged: Vec<(u64, u8, usize, Entry)> = Vec::new();
        let mut malformed = 0u64;

        let text = std::fs::read_to_string(exposure_path)?;
        for (seq, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ExposureRecord>(line) {
                Ok(rec) => merged.push((rec.timestamp_ms, 0, seq, Entry::Exposure(rec))),
                Err(e) => {
                    log::warn!("{}:{}: skipping malformed line: {e}", exposure_path.display(), seq + 1);
                    malformed += 1;
                }
            }
        }
        if let Some(events_path) = events_path {
            if events_path.exists() {
                let text = std::fs::read_to_string(events_path)?;
                for (seq, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<FeedbackEvent>(line) {
                        Ok(ev) => merged.push((ev.timestamp_ms, 1, seq, Entry::Event(ev))),
                        Err(e) => {
                            log::warn!(
                                "{}:{}: skipping malformed line: {e}",
                                events_path.display(),
                                seq + 1
                            );
                            malformed += 1;
                        }
                    }
                }
            }
        }
        merged.sort_by_key(|(ts, kind, seq, _)| (*ts, *kind, *seq));

        {
            let mut inner = store.lock();
            for (_, _, _, entry) in &merged {
                match entry {
                    Entry::Exposure(rec) => {
                        if inner.exposures.contains_key(&rec.decision_id) {
                            inner.counters.duplicate_exposures += 1;
                        } else {
                            inner.apply_exposure(rec);
                        }
                    }
                    Entry::Event(ev) => inner.apply_event(ev),
                }
            }
            inner.counters.malformed_lines = malformed;
        }
        Ok(store)
    }
}

/// Aggregation scope for reward snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackLevel {
    User,
    #[default]
    Global,
}

impl Inner {
    fn apply_exposure(&mut self, rec: &ExposureRecord) {
        let key = (rec.target_id.clone(), rec.transformer_id.clone());
        *self
            .state
            .pulls
            .entry(key.clone())
            .or_default()
            .entry(rec.chosen_candidate_id.clone())
            .or_default() += 1;
        self.counters.exposures_logged += 1;
        self.exposures.insert(
            rec.decision_id.clone(),
            ExposureMeta {
                key,
                unit_id: rec.unit_id.clone(),
                candidate_id: rec.chosen_candidate_id.clone(),
            },
        );
        self.advance_clock(rec.timestamp_ms);

        if let Some(buffered) = self.pending.remove(&rec.decision_id) {
            for ev in buffered {
                self.join_event(&ev);
            }
        }
    }

    fn apply_event(&mut self, ev: &FeedbackEvent) {
        self.counters.events_ingested += 1;
        self.advance_clock(ev.timestamp_ms);
        if self.exposures.contains_key(&ev.decision_id) {
            self.join_event(ev);
        } else {
            let buffered = self.pending.entry(ev.decision_id.clone()).or_default();
            if buffered.iter().any(|b| b.event_type == ev.event_type) {
                self.counters.duplicate_events += 1;
            } else {
                buffered.push(ev.clone());
            }
        }
    }

    /// Expire buffered events that out-waited the grace period, measured on
    /// event timestamps so replays behave identically to live ingestion.
    fn advance_clock(&mut self, ts: u64) {
        if ts <= self.state.max_ts {
            return;
        }
        self.state.max_ts = ts;
        let cutoff = self.state.max_ts.saturating_sub(self.grace_ms);
        let mut orphaned = 0u64;
        self.pending.retain(|_, events| {
            events.retain(|ev| {
                let keep = ev.timestamp_ms >= cutoff;
                orphaned += u64::from(!keep);
                keep
            });
            !events.is_empty()
        });
        self.counters.orphaned_events += orphaned;
    }

    /// Join one event whose exposure is present. Duplicate (decision,
    /// event_type) pairs are ignored; each metric counts the event as a
    /// trial (denominator) or success (numerator), and a success is only
    /// counted once its denominator has been seen, so successes can never
    /// outrun trials.
    fn join_event(&mut self, ev: &FeedbackEvent) {
        let meta = &self.exposures[&ev.decision_id];
        let key = meta.key.clone();
        let unit = meta.unit_id.clone();
        let cand = meta.candidate_id.clone();

        let seen = self.seen.entry(ev.decision_id.clone()).or_default();
        let type_str = ev.event_type.as_str().to_owned();
        if seen.contains_key(&type_str) {
            self.counters.duplicate_events += 1;
            return;
        }
        seen.insert(type_str.clone(), ev.timestamp_ms);
        let seen_now = seen.clone();
        *self.counters.matched_events.entry(type_str.clone()).or_default() += 1;

        let metrics: Vec<(String, MetricSpec)> =
            self.metrics.iter().map(|(n, s)| (n.clone(), s.clone())).collect();
        for (name, spec) in metrics {
            let den = spec.denominator_event.as_str();
            let num = spec.numerator_event.as_str();
            if type_str == den {
                self.add_trial(&name, &key, &cand, &unit, ev.timestamp_ms);
                if let Some(&num_ts) = seen_now.get(num) {
                    self.add_success(&name, &key, &cand, &unit, num_ts);
                    self.check_order(ev.timestamp_ms, num_ts);
                }
            } else if type_str == num {
                if let Some(&den_ts) = seen_now.get(den) {
                    self.add_success(&name, &key, &cand, &unit, ev.timestamp_ms);
                    self.check_order(den_ts, ev.timestamp_ms);
                }
            }
        }
    }

    fn check_order(&mut self, den_ts: u64, num_ts: u64) {
        if den_ts > num_ts + ORDER_SKEW_MS {
            self.counters.ordering_violations += 1;
        }
    }

    fn tally_mut(&mut self, metric: &str, key: &StatsKey, cand: &str) -> &mut MetricCandidateTally {
        self.state
            .metrics
            .entry(metric.to_owned())
            .or_default()
            .entry(key.clone())
            .or_default()
            .entry(cand.to_owned())
            .or_default()
    }

    fn add_trial(&mut self, metric: &str, key: &StatsKey, cand: &str, unit: &str, ts: u64) {
        let retention = self.retention_minutes;
        let max_minute = self.state.max_ts / 60_000;
        let tally = self.tally_mut(metric, key, cand);
        tally.all_time.trials += 1;
        tally.minutes.entry(ts / 60_000).or_default().trials += 1;
        tally.per_unit.entry(unit.to_owned()).or_default().trials += 1;
        prune_minutes(&mut tally.minutes, max_minute, retention);
    }

    fn add_success(&mut self, metric: &str, key: &StatsKey, cand: &str, unit: &str, ts: u64) {
        let retention = self.retention_minutes;
        let max_minute = self.state.max_ts / 60_000;
        let tally = self.tally_mut(metric, key, cand);
        tally.all_time.successes += 1;
        tally.minutes.entry(ts / 60_000).or_default().successes += 1;
        tally.per_unit.entry(unit.to_owned()).or_default().successes += 1;
        prune_minutes(&mut tally.minutes, max_minute, retention);
    }
}

fn prune_minutes(minutes: &mut BTreeMap<u64, Tally>, max_minute: u64, retention: u64) {
    let cutoff = max_minute.saturating_sub(retention);
    while let Some((&first, _)) = minutes.first_key_value() {
        if first >= cutoff {
            break;
        }
        minutes.remove(&first);
    }
}
