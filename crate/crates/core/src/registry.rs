//! Target registry and decision engine.
//!
//! The engine owns registered exploration targets, routes explore calls
//! through their operator chains, and fails open: any condition that
//! prevents exploring (unsubscribed, trigger mismatch, out of traffic,
//! operator error, panic) returns the caller's payload unchanged.

use std::collections::{BTreeMap, HashMap};
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bandits::{self, BinarySearchConfig, BinarySearchState, CandidateScorer};
use crate::config::{
    ExploreAction, OperatorSpec, TargetConfig, TaskType, Transformer, parse_transformers,
};
use crate::error::{Error, Result};
use crate::feedback::{
    CandidateFeedback, ExposureRecord, FeedbackEvent, FeedbackLevel, FeedbackStore, MetricSpec,
    StoreOptions,
};
use crate::hash;
use crate::model::{ArmStats, DecisionContext, ScoredCandidateSet};
use crate::ranking::{RankedList, shuffle_ranking};
use crate::sampling::{self, PredictionInput, StratifiedState};

/// Stable unit→bucket assignment: the same unit stays in (or out of) a
/// target's traffic as long as the sample rate is unchanged.
pub fn in_traffic(unit_id: &str, target_id: &str, sample_rate: f64) -> bool {
    let threshold = (sample_rate.clamp(0.0, 1.0) * 1_000_000.0).round() as u64;
    hash::traffic_bucket(unit_id, target_id) < threshold
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// Inline stats refresh cadence in decisions per target.
    pub refresh_every_decisions: u64,
    /// Optional wall-clock refresh cadence; `None` keeps refreshes purely
    /// decision-driven (deterministic replays).
    pub refresh_every_ms: Option<u64>,
    pub store: StoreOptions,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            refresh_every_decisions: 1000,
            refresh_every_ms: Some(60_000),
            store: StoreOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreRequest {
    pub target_id: String,
    pub unit_id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    /// Which transformer to apply; defaults to the target's first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformer_id: Option<String>,
    pub data: Value,
    /// Event-time override used by simulations; live traffic uses the
    /// wall clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreResponse {
    pub data: Value,
    pub decision_id: String,
    pub explored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_candidate_id: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetSummary {
    pub target_id: String,
    pub task_type: TaskType,
    pub subscribed: bool,
    pub sample_rate: f64,
    pub version: u64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct CandidateStats {
    pub pulls: u64,
    pub trials: u64,
    pub successes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetStats {
    pub target_id: String,
    pub task_type: TaskType,
    pub subscribed: bool,
    pub version: u64,
    pub feedback_fetcher: String,
    /// Decision slots consumed (explored attempts, including failed ones).
    pub decisions: u64,
    pub explored: u64,
    pub passthrough: BTreeMap<String, u64>,
    pub operator_errors: u64,
    pub candidates: BTreeMap<String, CandidateStats>,
}

enum OpState {
    Search(BinarySearchState),
    Stratified(StratifiedState),
}

#[derive(Default)]
struct TargetCounters {
    explored: AtomicU64,
    unsubscribed: AtomicU64,
    trigger_mismatch: AtomicU64,
    out_of_traffic: AtomicU64,
    sampler_rejected: AtomicU64,
    operator_error: AtomicU64,
}

struct TargetMeta {
    config: TargetConfig,
    transformers: Vec<Transformer>,
    subscribed: bool,
    version: u64,
}

struct TargetEntry {
    meta: RwLock<TargetMeta>,
    counter: AtomicU64,
    decisions_since_refresh: AtomicU64,
    last_refresh_ms: AtomicU64,
    /// Periodically swapped per-transformer reward snapshots; decisions
    /// read whichever snapshot is current, never the store directly.
    snapshots: RwLock<HashMap<String, Arc<BTreeMap<String, CandidateFeedback>>>>,
    /// Stateful operators (binary search, stratified quotas) keyed by
    /// (transformer, chain position).
    op_state: Mutex<HashMap<(String, usize), OpState>>,
    counters: TargetCounters,
}

enum ChainOutcome {
    Explored {
        data: Value,
        chosen: String,
        operator: &'static str,
        extras: BTreeMap<String, String>,
    },
    /// An active-learning sampler declined; the decision is a passthrough.
    Rejected,
}

/// The exploration engine: registry, dispatch, and stats plumbing.
pub struct Engine {
    store: Arc<FeedbackStore>,
    targets: RwLock<HashMap<String, Arc<TargetEntry>>>,
    scorers: RwLock<HashMap<String, Arc<dyn CandidateScorer>>>,
    options: EngineOptions,
}

impl Engine {
    pub fn new(options: EngineOptions) -> Result<Self> {
        let store = Arc::new(FeedbackStore::new(options.store.clone())?);
        Ok(Self::with_store(store, options))
    }

    pub fn in_memory() -> Self {
        Self::new(EngineOptions::default()).expect("in-memory engine cannot fail to open")
    }

    pub fn with_store(store: Arc<FeedbackStore>, options: EngineOptions) -> Self {
        Engine {
            store,
            targets: RwLock::new(HashMap::new()),
            scorers: RwLock::new(HashMap::new()),
            options,
        }
    }

    pub fn store(&self) -> &Arc<FeedbackStore> {
        &self.store
    }

    /// Bind a name usable by RLActionSelection chains to a scorer.
    pub fn register_scorer(&self, name: impl Into<String>, scorer: Arc<dyn CandidateScorer>) {
        self.scorers.write().unwrap().insert(name.into(), scorer);
    }

    pub fn register_metric(&self, name: impl Into<String>, spec: MetricSpec) {
        self.store.register_metric(name, spec);
    }

    /// Validate and install a target. New targets start unsubscribed;
    /// re-registering an existing id replaces its config, bumps the
    /// version, and keeps counters, stats, and subscription state.
    pub fn register_target(&self, config: TargetConfig) -> Result<()> {
        if config.target_id.is_empty() {
            return Err(Error::Config("target_id is empty".into()));
        }
        if !(config.sample_rate.is_finite() && (0.0..=1.0).contains(&config.sample_rate)) {
            return Err(Error::Config(format!(
                "sample_rate must be in [0, 1], got {}",
                config.sample_rate
            )));
        }
        let transformers = parse_transformers(config.task_type, &config.transformers)?;
        for t in &transformers {
            for op in &t.ops {
                if let OperatorSpec::RlAction { scorer, .. } = op {
                    if !self.scorers.read().unwrap().contains_key(scorer) {
                        return Err(Error::Config(format!(
                            "transformer {:?}: scorer {scorer:?} is not registered",
                            t.transformer_id
                        )));
                    }
                }
            }
        }
        // Unknown fetcher names become click/display metrics so feedback
        // flows without a separate metric-registration step.
        if !self.store.has_metric(&config.feedback_fetcher) {
            self.store
                .register_metric(config.feedback_fetcher.clone(), MetricSpec::ratio("click", "display"));
        }

        let mut targets = self.targets.write().unwrap();
        match targets.get(&config.target_id) {
            Some(entry) => {
                let mut meta = entry.meta.write().unwrap();
                meta.version += 1;
                meta.config = config;
                meta.transformers = transformers;
                // Chains may have changed shape; stateful operators restart.
                entry.op_state.lock().unwrap().clear();
            }
            None => {
                let counter = self.store.exposure_count(&config.target_id);
                let target_id = config.target_id.clone();
                targets.insert(
                    target_id,
                    Arc::new(TargetEntry {
                        meta: RwLock::new(TargetMeta {
                            config,
                            transformers,
                            subscribed: false,
                            version: 1,
                        }),
                        counter: AtomicU64::new(counter),
                        decisions_since_refresh: AtomicU64::new(0),
                        last_refresh_ms: AtomicU64::new(0),
                        snapshots: RwLock::new(HashMap::new()),
                        op_state: Mutex::new(HashMap::new()),
                        counters: TargetCounters::default(),
                    }),
                );
            }
        }
        Ok(())
    }

    pub fn has_target(&self, target_id: &str) -> bool {
        self.targets.read().unwrap().contains_key(target_id)
    }

    pub fn task_type(&self, target_id: &str) -> Result<TaskType> {
        Ok(self.entry(target_id)?.meta.read().unwrap().config.task_type)
    }

    pub fn trigger(&self, target_id: &str) -> Result<BTreeMap<String, String>> {
        Ok(self.entry(target_id)?.meta.read().unwrap().config.trigger.clone())
    }

    pub fn set_subscribed(&self, target_id: &str, subscribed: bool) -> Result<()> {
        let entry = self.entry(target_id)?;
        entry.meta.write().unwrap().subscribed = subscribed;
        Ok(())
    }

    pub fn subscribe(&self, target_id: &str) -> Result<()> {
        self.set_subscribed(target_id, true)
    }

    pub fn unsubscribe(&self, target_id: &str) -> Result<()> {
        self.set_subscribed(target_id, false)
    }

    pub fn list_targets(&self) -> Vec<TargetSummary> {
        let mut out: Vec<TargetSummary> = self
            .targets
            .read()
            .unwrap()
            .values()
            .map(|entry| {
                let meta = entry.meta.read().unwrap();
                TargetSummary {
                    target_id: meta.config.target_id.clone(),
                    task_type: meta.config.task_type,
                    subscribed: meta.subscribed,
                    sample_rate: meta.config.sample_rate,
                    version: meta.version,
                }
            })
            .collect();
        out.sort_by(|a, b| a.target_id.cmp(&b.target_id));
        out
    }

    /// Route one decision. The only hard error is an unknown target;
    /// everything else degrades to a passthrough of the input payload.
    pub fn explore(&self, req: &ExploreRequest) -> Result<ExploreResponse> {
        let entry = self.entry(&req.target_id)?;
        let now = req.timestamp_ms.unwrap_or_else(now_ms);

        let outcome = {
            let meta = entry.meta.read().unwrap();
            if !meta.subscribed {
                return Ok(passthrough(&entry.counters.unsubscribed, req));
            }
            if !trigger_matches(&meta.config.trigger, &req.attributes) {
                return Ok(passthrough(&entry.counters.trigger_mismatch, req));
            }
            if !in_traffic(&req.unit_id, &req.target_id, meta.config.sample_rate) {
                return Ok(passthrough(&entry.counters.out_of_traffic, req));
            }
            let transformer = match &req.transformer_id {
                Some(id) => meta.transformers.iter().find(|t| &t.transformer_id == id),
                None => meta.transformers.first(),
            };
            let Some(transformer) = transformer else {
                log::warn!(
                    "target {:?}: unknown transformer {:?}; passing through",
                    req.target_id,
                    req.transformer_id
                );
                return Ok(passthrough(&entry.counters.operator_error, req));
            };

            let counter = entry.counter.fetch_add(1, Ordering::SeqCst);
            let ctx = DecisionContext::for_decision(
                req.unit_id.clone(),
                req.attributes.clone(),
                &req.target_id,
                counter,
            );
            let run = std::panic::catch_unwind(AssertUnwindSafe(|| {
                self.run_chain(&entry, &meta, transformer, &req.data, &ctx)
            }));
            match run {
                Ok(Ok(ChainOutcome::Explored { data, chosen, operator, extras })) => {
                    let decision_id = format!("{}:{counter}", req.target_id);
                    let record = ExposureRecord {
                        decision_id: decision_id.clone(),
                        target_id: req.target_id.clone(),
                        transformer_id: transformer.transformer_id.clone(),
                        unit_id: req.unit_id.clone(),
                        chosen_candidate_id: chosen.clone(),
                        operator: operator.to_owned(),
                        timestamp_ms: now,
                        extras,
                    };
                    if let Err(e) = self.store.log_exposure(&record) {
                        log::error!("exposure for {decision_id} not recorded: {e}");
                    }
                    entry.counters.explored.fetch_add(1, Ordering::Relaxed);
                    Some(ExploreResponse {
                        data,
                        decision_id,
                        explored: true,
                        chosen_candidate_id: Some(chosen),
                    })
                }
                Ok(Ok(ChainOutcome::Rejected)) => {
                    return Ok(passthrough(&entry.counters.sampler_rejected, req));
                }
                Ok(Err(e)) => {
                    log::warn!("target {:?}: operator failed, passing through: {e}", req.target_id);
                    return Ok(passthrough(&entry.counters.operator_error, req));
                }
                Err(_panic) => {
                    log::error!("target {:?}: operator panicked, passing through", req.target_id);
                    return Ok(passthrough(&entry.counters.operator_error, req));
                }
            }
        };

        self.maybe_refresh(&entry, &req.target_id, now);
        Ok(outcome.expect("explored branch always produces a response"))
    }

    /// Forward a feedback event to the store.
    pub fn ingest_event(&self, ev: &FeedbackEvent) -> Result<()> {
        self.store.ingest_event(ev)
    }

    /// Re-fetch reward snapshots for every transformer of a target and
    /// swap them in. A failing fetcher keeps the previous snapshot.
    pub fn refresh_stats(&self, target_id: &str) -> Result<()> {
        let entry = self.entry(target_id)?;
        let meta = entry.meta.read().unwrap();
        if meta.config.feedback_level == FeedbackLevel::User {
            // User-level rewards are fetched per decision; nothing to swap.
            return Ok(());
        }
        for t in &meta.transformers {
            match self.store.fetch_for_transformer(
                &meta.config.feedback_fetcher,
                target_id,
                &t.transformer_id,
                FeedbackLevel::Global,
                None,
            ) {
                Ok(snap) => {
                    entry
                        .snapshots
                        .write()
                        .unwrap()
                        .insert(t.transformer_id.clone(), Arc::new(snap.per_candidate));
                }
                Err(e) => {
                    log::warn!(
                        "target {target_id:?} transformer {:?}: fetch failed, keeping previous snapshot: {e}",
                        t.transformer_id
                    );
                }
            }
        }
        Ok(())
    }

    pub fn stats(&self, target_id: &str) -> Result<TargetStats> {
        let entry = self.entry(target_id)?;
        let meta = entry.meta.read().unwrap();

        let mut candidates: BTreeMap<String, CandidateStats> = BTreeMap::new();
        for t in &meta.transformers {
            for (cand, pulls) in self.store.pulls(target_id, &t.transformer_id) {
                candidates.entry(cand).or_default().pulls += pulls;
            }
        }
        if let Ok(snap) = self.store.fetch(
            &meta.config.feedback_fetcher,
            target_id,
            FeedbackLevel::Global,
            None,
        ) {
            for (cand, fb) in snap.per_candidate {
                let entry = candidates.entry(cand).or_default();
                entry.trials = fb.trials;
                entry.successes = fb.successes;
                entry.reward = fb.reward;
            }
        }

        let c = &entry.counters;
        let mut passthrough = BTreeMap::new();
        for (name, counter) in [
            ("unsubscribed", &c.unsubscribed),
            ("trigger_mismatch", &c.trigger_mismatch),
            ("out_of_traffic", &c.out_of_traffic),
            ("sampler_rejected", &c.sampler_rejected),
            ("operator_error", &c.operator_error),
        ] {
            passthrough.insert(name.to_owned(), counter.load(Ordering::Relaxed));
        }
        Ok(TargetStats {
            target_id: target_id.to_owned(),
            task_type: meta.config.task_type,
            subscribed: meta.subscribed,
            version: meta.version,
            feedback_fetcher: meta.config.feedback_fetcher.clone(),
            decisions: entry.counter.load(Ordering::Relaxed),
            explored: c.explored.load(Ordering::Relaxed),
            passthrough,
            operator_errors: c.operator_error.load(Ordering::Relaxed),
            candidates,
        })
    }

    fn entry(&self, target_id: &str) -> Result<Arc<TargetEntry>> {
        self.targets
            .read()
            .unwrap()
            .get(target_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("target {target_id:?}")))
    }

    fn maybe_refresh(&self, entry: &TargetEntry, target_id: &str, now: u64) {
        let since = entry.decisions_since_refresh.fetch_add(1, Ordering::Relaxed) + 1;
        let due_by_count = since >= self.options.refresh_every_decisions;
        let due_by_time = self.options.refresh_every_ms.is_some_and(|ms| {
            now.saturating_sub(entry.last_refresh_ms.load(Ordering::Relaxed)) >= ms
        });
        if due_by_count || due_by_time {
            entry.decisions_since_refresh.store(0, Ordering::Relaxed);
            entry.last_refresh_ms.store(now, Ordering::Relaxed);
            if let Err(e) = self.refresh_stats(target_id) {
                log::warn!("stats refresh for {target_id:?} failed: {e}");
            }
        }
    }

    /// Aligned per-candidate stats: live pull counts plus trials and
    /// successes from the current snapshot (global) or a per-unit fetch
    /// (user level). Live pulls keep forced-pull rotation moving even
    /// while the reward snapshot is stale.
    fn stats_for(
        &self,
        entry: &TargetEntry,
        meta: &TargetMeta,
        transformer: &Transformer,
        set: &ScoredCandidateSet,
        ctx: &DecisionContext,
    ) -> Result<Vec<ArmStats>> {
        let pulls = self.store.pulls(&meta.config.target_id, &transformer.transformer_id);
        let snapshot: Arc<BTreeMap<String, CandidateFeedback>> =
            match meta.config.feedback_level {
                FeedbackLevel::Global => entry
                    .snapshots
                    .read()
                    .unwrap()
                    .get(&transformer.transformer_id)
                    .cloned()
                    .unwrap_or_default(),
                FeedbackLevel::User => {
                    let snap = self.store.fetch_for_transformer(
                        &meta.config.feedback_fetcher,
                        &meta.config.target_id,
                        &transformer.transformer_id,
                        FeedbackLevel::User,
                        Some(&ctx.unit_id),
                    )?;
                    Arc::new(snap.per_candidate)
                }
            };
        Ok(set
            .candidates
            .iter()
            .map(|c| {
                let fb = snapshot.get(&c.id);
                let successes = fb.map_or(0, |f| f.successes);
                ArmStats {
                    candidate_id: c.id.clone(),
                    pulls: pulls.get(&c.id).copied().unwrap_or(0),
                    reward_sum: successes as f64,
                    trials: fb.map_or(0, |f| f.trials),
                    successes,
                }
            })
            .collect())
    }

    fn run_chain(
        &self,
        entry: &TargetEntry,
        meta: &TargetMeta,
        transformer: &Transformer,
        data: &Value,
        ctx: &DecisionContext,
    ) -> Result<ChainOutcome> {
        match meta.config.task_type {
            TaskType::CandidateSelection => self.run_selection(entry, meta, transformer, data, ctx),
            TaskType::ActiveLearning => self.run_sampling(entry, meta, transformer, data, ctx),
            TaskType::Ranking => run_ranking(transformer, data, ctx),
        }
    }

    fn run_selection(
        &self,
        entry: &TargetEntry,
        meta: &TargetMeta,
        transformer: &Transformer,
        data: &Value,
        ctx: &DecisionContext,
    ) -> Result<ChainOutcome> {
        let mut set: ScoredCandidateSet = serde_json::from_value(data.clone())
            .map_err(|e| Error::InvalidInput(format!("candidate set: {e}")))?;
        set.validate()?;
        let stats = self.stats_for(entry, meta, transformer, &set, ctx)?;

        for (i, op) in transformer.ops.iter().enumerate() {
            let op_ctx = ctx.reseeded(chain_seed(ctx.rng_seed, i));
            set = match op {
                OperatorSpec::EpsilonGreedy { epsilon } => {
                    bandits::epsilon_greedy_select(&set, &stats, &op_ctx, *epsilon)?
                }
                OperatorSpec::Ucb1Enhanced(cfg) => {
                    bandits::ucb1_enhanced_select(&set, &stats, &op_ctx, cfg)?
                }
                OperatorSpec::ThompsonSampling => {
                    bandits::thompson_sampling_select(&set, &stats, &op_ctx)?
                }
                OperatorSpec::RlAction { scorer, terminal } => {
                    let scorer_fn = self
                        .scorers
                        .read()
                        .unwrap()
                        .get(scorer)
                        .cloned()
                        .ok_or_else(|| Error::Scorer(format!("scorer {scorer:?} is not registered")))?;
                    bandits::rl_action_select(&set, &op_ctx, scorer_fn.as_ref(), *terminal)?
                }
                OperatorSpec::Softmax { temperature } => {
                    bandits::softmax_select(&set, &op_ctx, *temperature)?
                }
                OperatorSpec::BinarySearch { target, min_samples } => {
                    let cfg = BinarySearchConfig { target: *target, min_samples: *min_samples };
                    let mut states = entry.op_state.lock().unwrap();
                    let key = (transformer.transformer_id.clone(), i);
                    let fresh = || {
                        BinarySearchState::new(set.candidates.len())
                            .expect("validated set is non-empty")
                    };
                    let state = states.entry(key).or_insert_with(|| OpState::Search(fresh()));
                    let OpState::Search(search) = state else {
                        return Err(Error::InvalidState("operator state kind changed".into()));
                    };
                    if search.validate(set.candidates.len()).is_err() {
                        // The candidate set changed shape; restart the search.
                        *search = fresh();
                    }
                    let (next, new_state) =
                        bandits::binary_search_select(&set, &stats, search, &cfg)?;
                    *search = new_state;
                    next
                }
                OperatorSpec::Uniform => bandits::uniform_select(&set, &op_ctx)?,
                other => {
                    return Err(Error::InvalidState(format!(
                        "operator {} cannot run in a selection chain",
                        other.name()
                    )));
                }
            };
        }

        let decided = set
            .decided
            .ok_or_else(|| Error::InvalidState("chain finished without deciding".into()))?;
        let chosen = set.candidates[decided].id.clone();
        let operator = transformer.ops.last().expect("validated chain is non-empty").name();
        Ok(ChainOutcome::Explored {
            data: serde_json::to_value(&set)?,
            chosen,
            operator,
            extras: BTreeMap::new(),
        })
    }

    fn run_sampling(
        &self,
        entry: &TargetEntry,
        meta: &TargetMeta,
        transformer: &Transformer,
        data: &Value,
        ctx: &DecisionContext,
    ) -> Result<ChainOutcome> {
        let pred: PredictionInput = serde_json::from_value(data.clone())
            .map_err(|e| Error::InvalidInput(format!("prediction input: {e}")))?;
        pred.validate()?;

        for (i, op) in transformer.ops.iter().enumerate() {
            let op_ctx = ctx.reseeded(chain_seed(ctx.rng_seed, i));
            let accepted = match op {
                OperatorSpec::SampleWithInterval { intervals, rate } => {
                    sampling::sample_with_interval(&pred, intervals, *rate, &op_ctx)?
                }
                OperatorSpec::SampleWithIntervalDecay { interval, rate, lambda } => {
                    sampling::sample_with_interval_decay(&pred, *interval, *rate, *lambda, &op_ctx)?
                }
                OperatorSpec::SampleWithEntropy { threshold, rate } => {
                    sampling::sample_with_entropy(&pred, *threshold, *rate, &op_ctx)?
                }
                OperatorSpec::SampleWithEntropyMultiClass { threshold, rate } => {
                    sampling::sample_with_entropy_multiclass(&pred, *threshold, *rate, &op_ctx)?
                }
                OperatorSpec::StratifiedSampling { bin_edges, quota, window_decisions } => {
                    let mut states = entry.op_state.lock().unwrap();
                    let key = (transformer.transformer_id.clone(), i);
                    let state = states.entry(key).or_insert_with(|| {
                        OpState::Stratified(
                            StratifiedState::new(bin_edges.clone(), *quota, *window_decisions)
                                .expect("validated at registration"),
                        )
                    });
                    let OpState::Stratified(strat) = state else {
                        return Err(Error::InvalidState("operator state kind changed".into()));
                    };
                    let (accepted, new_state) = sampling::stratified_sample(&pred, strat, &op_ctx)?;
                    *strat = new_state;
                    accepted
                }
                OperatorSpec::SampleWithSemanticSimilarity { threshold, rate, seeds } => {
                    sampling::sample_with_semantic_similarity(&pred, seeds, *threshold, *rate, &op_ctx)?
                }
                other => {
                    return Err(Error::InvalidState(format!(
                        "operator {} cannot run in an active-learning chain",
                        other.name()
                    )));
                }
            };
            if !accepted {
                // Chains AND together; the first rejection short-circuits.
                return Ok(ChainOutcome::Rejected);
            }
        }

        let mut out = data.clone();
        let mut extras = BTreeMap::new();
        match meta.config.explore_action {
            ExploreAction::TagOnly => {
                extras.insert("action".to_owned(), "tag_only".to_owned());
            }
            ExploreAction::FlipDecision => {
                extras.insert("action".to_owned(), "flip_decision".to_owned());
                if let Some(obj) = out.as_object_mut() {
                    obj.insert("explore".to_owned(), Value::Bool(true));
                }
            }
        }
        let operator = transformer.ops.last().expect("validated chain is non-empty").name();
        Ok(ChainOutcome::Explored { data: out, chosen: pred.item_id, operator, extras })
    }
}

fn run_ranking(transformer: &Transformer, data: &Value, ctx: &DecisionContext) -> Result<ChainOutcome> {
    let mut list: RankedList = serde_json::from_value(data.clone())
        .map_err(|e| Error::InvalidInput(format!("ranked list: {e}")))?;
    for (i, op) in transformer.ops.iter().enumerate() {
        let op_ctx = ctx.reseeded(chain_seed(ctx.rng_seed, i));
        match op {
            OperatorSpec::ShuffleRanking { window } => {
                if window.is_some() {
                    list.shuffle_window = *window;
                }
                list.validate()?;
                list = shuffle_ranking(&list, &op_ctx)?;
            }
            other => {
                return Err(Error::InvalidState(format!(
                    "operator {} cannot run in a ranking chain",
                    other.name()
                )));
            }
        }
    }
    let chosen = list.items.first().map(|c| c.id.clone()).unwrap_or_default();
    let order: Vec<&str> = list.items.iter().map(|c| c.id.as_str()).collect();
    let mut extras = BTreeMap::new();
    extras.insert("order".to_owned(), order.join(","));
    let operator = transformer.ops.last().expect("validated chain is non-empty").name();
    Ok(ChainOutcome::Explored { data: serde_json::to_value(&list)?, chosen, operator, extras })
}

/// Per-operator seed derivation: the first operator keeps the decision
/// seed (a single-operator chain behaves exactly like a direct call),
/// later operators draw from decorrelated streams.
fn chain_seed(base: u64, position: usize) -> u64 {
    if position == 0 { base } else { hash::splitmix64(base ^ position as u64) }
}

fn trigger_matches(trigger: &BTreeMap<String, String>, attributes: &BTreeMap<String, String>) -> bool {
    trigger.iter().all(|(k, v)| attributes.get(k) == Some(v))
}

fn passthrough(counter: &AtomicU64, req: &ExploreRequest) -> ExploreResponse {
    counter.fetch_add(1, Ordering::Relaxed);
    ExploreResponse {
        data: req.data.clone(),
        decision_id: uuid::Uuid::new_v4().to_string(),
        explored: false,
        chosen_candidate_id: None,
    }
}
