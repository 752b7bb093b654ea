//! Target configuration: the JSON schema callers register, parsed into
//! typed operator specs with eager chain validation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bandits::UCB1EnhancedConfig;
use crate::error::{Error, Result};
use crate::feedback::FeedbackLevel;
use crate::sampling;

/// What kind of decision a target transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    CandidateSelection,
    ActiveLearning,
    Ranking,
}

impl TaskType {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskType::CandidateSelection => "candidate_selection",
            TaskType::ActiveLearning => "active_learning",
            TaskType::Ranking => "ranking",
        }
    }
}

/// Whether an accepted active-learning exploration flips the served
/// decision (annotates the returned payload) or only tags the exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreAction {
    #[default]
    TagOnly,
    FlipDecision,
}

/// Raw registration payload, exactly as callers send it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetConfig {
    pub target_id: String,
    pub task_type: TaskType,
    pub sample_rate: f64,
    #[serde(default)]
    pub trigger: BTreeMap<String, String>,
    pub transformers: Vec<TransformerConfig>,
    pub feedback_fetcher: String,
    #[serde(default)]
    pub feedback_level: FeedbackLevel,
    #[serde(default)]
    pub explore_action: ExploreAction,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub transformer_id: String,
    pub chain: Vec<Value>,
}

impl TargetConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: TargetConfig = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("target config: {e}")))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// A parsed, validated operator with its configuration resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    EpsilonGreedy { epsilon: f64 },
    Ucb1Enhanced(UCB1EnhancedConfig),
    ThompsonSampling,
    RlAction { scorer: String, terminal: bool },
    Softmax { temperature: f64 },
    BinarySearch { target: f64, min_samples: u64 },
    Uniform,
    SampleWithInterval { intervals: Vec<[f64; 2]>, rate: f64 },
    SampleWithIntervalDecay { interval: [f64; 2], rate: f64, lambda: f64 },
    SampleWithEntropy { threshold: f64, rate: f64 },
    SampleWithEntropyMultiClass { threshold: f64, rate: f64 },
    StratifiedSampling { bin_edges: Vec<f64>, quota: u64, window_decisions: u64 },
    SampleWithSemanticSimilarity { threshold: f64, rate: f64, seeds: Vec<Vec<f64>> },
    ShuffleRanking { window: Option<(usize, usize)> },
}

/// Which chain position an operator can occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Selection,
    ActiveSampling,
    Ranking,
}

impl OperatorKind {
    fn as_str(&self) -> &'static str {
        match self {
            OperatorKind::Selection => "candidate_selection",
            OperatorKind::ActiveSampling => "active_learning",
            OperatorKind::Ranking => "ranking",
        }
    }
}

impl OperatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorSpec::EpsilonGreedy { .. } => "EpsilonGreedySelection",
            OperatorSpec::Ucb1Enhanced(_) => "UCB1Enhanced",
            OperatorSpec::ThompsonSampling => "ThompsonSampling",
            OperatorSpec::RlAction { .. } => "RLActionSelection",
            OperatorSpec::Softmax { .. } => "SoftmaxSelection",
            OperatorSpec::BinarySearch { .. } => "BinarySearchSelection",
            OperatorSpec::Uniform => "UniformSelection",
            OperatorSpec::SampleWithInterval { .. } => "SampleWithInterval",
            OperatorSpec::SampleWithIntervalDecay { .. } => "SampleWithIntervalDecay",
            OperatorSpec::SampleWithEntropy { .. } => "SampleWithEntropy",
            OperatorSpec::SampleWithEntropyMultiClass { .. } => "SampleWithEntropyMultiClass",
            OperatorSpec::StratifiedSampling { .. } => "StratifiedSampling",
            OperatorSpec::SampleWithSemanticSimilarity { .. } => "SampleWithSemanticSimilarity",
            OperatorSpec::ShuffleRanking { .. } => "ShuffleRanking",
        }
    }

    pub fn kind(&self) -> OperatorKind {
        match self {
            OperatorSpec::EpsilonGreedy { .. }
            | OperatorSpec::Ucb1Enhanced(_)
            | OperatorSpec::ThompsonSampling
            | OperatorSpec::RlAction { .. }
            | OperatorSpec::Softmax { .. }
            | OperatorSpec::BinarySearch { .. }
            | OperatorSpec::Uniform => OperatorKind::Selection,
            OperatorSpec::SampleWithInterval { .. }
            | OperatorSpec::SampleWithIntervalDecay { .. }
            | OperatorSpec::SampleWithEntropy { .. }
            | OperatorSpec::SampleWithEntropyMultiClass { .. }
            | OperatorSpec::StratifiedSampling { .. }
            | OperatorSpec::SampleWithSemanticSimilarity { .. } => OperatorKind::ActiveSampling,
            OperatorSpec::ShuffleRanking { .. } => OperatorKind::Ranking,
        }
    }

    /// True when the operator commits to a single candidate. Only a
    /// non-terminal score writer may precede other selection operators.
    pub fn decides(&self) -> bool {
        match self {
            OperatorSpec::RlAction { terminal, .. } => *terminal,
            _ => self.kind() == OperatorKind::Selection,
        }
    }

    /// True when the operator consumes scores produced upstream.
    pub fn needs_scores(&self) -> bool {
        matches!(self, OperatorSpec::Softmax { .. })
    }

    /// True when the operator writes scores usable downstream without
    /// deciding.
    pub fn writes_scores(&self) -> bool {
        matches!(self, OperatorSpec::RlAction { terminal: false, .. })
    }
}

/// Parse one chain entry: `{"operator": "Name", ...config}`.
pub fn parse_operator(value: &Value) -> Result<OperatorSpec> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config("chain entry must be a JSON object".into()))?;
    let name = obj
        .get("operator")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Config("chain entry missing \"operator\"".into()))?;

    let spec = match name {
        "EpsilonGreedySelection" => {
            let epsilon = f64_field(obj, "epsilon")?
                .ok_or_else(|| Error::Config("EpsilonGreedySelection requires epsilon".into()))?;
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config(format!("epsilon must be in [0, 1], got {epsilon}")));
            }
            OperatorSpec::EpsilonGreedy { epsilon }
        }
        "UCB1Enhanced" => {
            let target = f64_field(obj, "target_reward")?
                .ok_or_else(|| Error::Config("UCB1Enhanced requires target_reward".into()))?;
            let mut cfg = UCB1EnhancedConfig::new(target);
            if let Some(w) = f64_field(obj, "exploration_weight")? {
                cfg.w = w;
            }
            if let Some(d) = f64_field(obj, "penalty_delta")? {
                cfg.delta = d;
            }
            if let Some(m) = u64_field(obj, "min_pulls")? {
                cfg.min_pulls = m;
            }
            cfg.validate()?;
            OperatorSpec::Ucb1Enhanced(cfg)
        }
        "ThompsonSampling" => OperatorSpec::ThompsonSampling,
        "RLActionSelection" => {
            let scorer = obj
                .get("scorer")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Config("RLActionSelection requires scorer".into()))?
                .to_owned();
            let terminal = obj.get("terminal").and_then(Value::as_bool).unwrap_or(true);
            OperatorSpec::RlAction { scorer, terminal }
        }
        "SoftmaxSelection" => {
            let temperature = f64_field(obj, "temperature")?.unwrap_or(1.0);
            if temperature <= 0.0 || !temperature.is_finite() {
                return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
            }
            OperatorSpec::Softmax { temperature }
        }
        "BinarySearchSelection" => {
            let target = f64_field(obj, "target_reward")?
                .ok_or_else(|| Error::Config("BinarySearchSelection requires target_reward".into()))?;
            let min_samples = u64_field(obj, "min_samples")?.unwrap_or(1);
            let cfg = crate::bandits::BinarySearchConfig { target, min_samples };
            cfg.validate()?;
            OperatorSpec::BinarySearch { target, min_samples }
        }
        "UniformSelection" => OperatorSpec::Uniform,
        "SampleWithInterval" => {
            let intervals = intervals_field(obj, "intervals")?;
            OperatorSpec::SampleWithInterval { intervals, rate: rate_field(obj)? }
        }
        "SampleWithIntervalDecay" => {
            let intervals = intervals_field(obj, "intervals")?;
            if intervals.len() != 1 {
                return Err(Error::Config(format!(
                    "SampleWithIntervalDecay takes exactly one interval, got {}",
                    intervals.len()
                )));
            }
            let lambda = f64_field(obj, "decay_lambda")?
                .ok_or_else(|| Error::Config("SampleWithIntervalDecay requires decay_lambda".into()))?;
            if lambda < 0.0 || !lambda.is_finite() {
                return Err(Error::Config(format!("decay_lambda must be >= 0, got {lambda}")));
            }
            OperatorSpec::SampleWithIntervalDecay { interval: intervals[0], rate: rate_field(obj)?, lambda }
        }
        "SampleWithEntropy" => OperatorSpec::SampleWithEntropy {
            threshold: threshold_field(obj)?,
            rate: rate_field(obj)?,
        },
        "SampleWithEntropyMultiClass" => OperatorSpec::SampleWithEntropyMultiClass {
            threshold: threshold_field(obj)?,
            rate: rate_field(obj)?,
        },
        "StratifiedSampling" => {
            let edges = obj
                .get("bin_edges")
                .ok_or_else(|| Error::Config("StratifiedSampling requires bin_edges".into()))?;
            let bin_edges: Vec<f64> = serde_json::from_value(edges.clone())
                .map_err(|e| Error::Config(format!("bin_edges: {e}")))?;
            let quota = u64_field(obj, "bin_quota")?
                .ok_or_else(|| Error::Config("StratifiedSampling requires bin_quota".into()))?;
            let window_decisions = u64_field(obj, "window_decisions")?
                .ok_or_else(|| Error::Config("StratifiedSampling requires window_decisions".into()))?;
            // Constructor revalidates; surface config errors at registration.
            sampling::StratifiedState::new(bin_edges.clone(), quota, window_decisions)?;
            OperatorSpec::StratifiedSampling { bin_edges, quota, window_decisions }
        }
        "SampleWithSemanticSimilarity" => {
            let threshold = f64_field(obj, "similarity_threshold")?.ok_or_else(|| {
                Error::Config("SampleWithSemanticSimilarity requires similarity_threshold".into())
            })?;
            if !(-1.0..=1.0).contains(&threshold) {
                return Err(Error::Config(format!(
                    "similarity_threshold must be in [-1, 1], got {threshold}"
                )));
            }
            let seeds = match obj.get("seed_vectors_path").and_then(Value::as_str) {
                Some(path) => sampling::load_seed_vectors(Path::new(path))?,
                None => {
                    let raw = obj.get("seed_vectors").ok_or_else(|| {
                        Error::Config(
                            "SampleWithSemanticSimilarity requires seed_vectors_path or seed_vectors"
                                .into(),
                        )
                    })?;
                    serde_json::from_value(raw.clone())
                        .map_err(|e| Error::Config(format!("seed_vectors: {e}")))?
                }
            };
            if seeds.is_empty() {
                return Err(Error::Config("seed vector set is empty".into()));
            }
            OperatorSpec::SampleWithSemanticSimilarity { threshold, rate: rate_field(obj)?, seeds }
        }
        "ShuffleRanking" => {
            let start = u64_field(obj, "shuffle_window_start")?;
            let end = u64_field(obj, "shuffle_window_end")?;
            let window = match (start, end) {
                (Some(s), Some(e)) => Some((s as usize, e as usize)),
                (None, None) => None,
                _ => {
                    return Err(Error::Config(
                        "shuffle_window_start and shuffle_window_end must be set together".into(),
                    ))
                }
            };
            OperatorSpec::ShuffleRanking { window }
        }
        other => return Err(Error::Config(format!("unknown operator {other:?}"))),
    };
    Ok(spec)
}

fn f64_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match obj.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{key} must be a number, got {v}"))),
    }
}

fn u64_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Option<u64>> {
    match obj.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{key} must be a non-negative integer, got {v}"))),
    }
}

/// Sampler draw rate; defaults to always-on when the chain omits it.
fn rate_field(obj: &serde_json::Map<String, Value>) -> Result<f64> {
    let rate = f64_field(obj, "rate")?.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("rate must be in [0, 1], got {rate}")));
    }
    Ok(rate)
}

fn threshold_field(obj: &serde_json::Map<String, Value>) -> Result<f64> {
    let threshold = f64_field(obj, "entropy_threshold")?
        .ok_or_else(|| Error::Config("entropy sampler requires entropy_threshold".into()))?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("entropy_threshold must be in [0, 1], got {threshold}")));
    }
    Ok(threshold)
}

fn intervals_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Vec<[f64; 2]>> {
    let raw = obj
        .get(key)
        .ok_or_else(|| Error::Config(format!("sampler requires {key}")))?;
    let intervals: Vec<[f64; 2]> = serde_json::from_value(raw.clone())
        .map_err(|e| Error::Config(format!("{key}: {e}")))?;
    sampling::check_intervals(&intervals)?;
    Ok(intervals)
}

/// One parsed transformer: an ordered operator chain under a stable id.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub transformer_id: String,
    pub ops: Vec<OperatorSpec>,
}

/// Parse and validate every transformer chain for a task type.
pub fn parse_transformers(task_type: TaskType, configs: &[TransformerConfig]) -> Result<Vec<Transformer>> {
    if configs.is_empty() {
        return Err(Error::Config("target declares no transformers".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(configs.len());
    for cfg in configs {
        if cfg.transformer_id.is_empty() {
            return Err(Error::Config("transformer_id is empty".into()));
        }
        if !seen.insert(cfg.transformer_id.clone()) {
            return Err(Error::Config(format!("duplicate transformer_id {:?}", cfg.transformer_id)));
        }
        let ops: Vec<OperatorSpec> =
            cfg.chain.iter().map(parse_operator).collect::<Result<_>>().map_err(|e| {
                Error::Config(format!("transformer {:?}: {e}", cfg.transformer_id))
            })?;
        validate_chain(task_type, &ops)
            .map_err(|e| Error::Config(format!("transformer {:?}: {e}", cfg.transformer_id)))?;
        out.push(Transformer { transformer_id: cfg.transformer_id.clone(), ops });
    }
    Ok(out)
}

/// Chain compatibility rules:
/// - every operator must match the target's task type;
/// - a candidate-selection chain ends in exactly one deciding operator,
///   preceded only by non-terminal score writers;
/// - score consumers need a score writer somewhere upstream.
pub fn validate_chain(task_type: TaskType, ops: &[OperatorSpec]) -> Result<()> {
    if ops.is_empty() {
        return Err(Error::Config("operator chain is empty".into()));
    }
    let expected = match task_type {
        TaskType::CandidateSelection => OperatorKind::Selection,
        TaskType::ActiveLearning => OperatorKind::ActiveSampling,
        TaskType::Ranking => OperatorKind::Ranking,
    };
    for pair in ops.windows(2) {
        if pair[0].kind() != pair[1].kind() {
            return Err(Error::Config(format!(
                "incompatible adjacent operators: {} ({}) feeds {} ({})",
                pair[0].name(),
                pair[0].kind().as_str(),
                pair[1].name(),
                pair[1].kind().as_str(),
            )));
        }
    }
    for op in ops {
        if op.kind() != expected {
            return Err(Error::Config(format!(
                "operator {} is a {} operator; target task type is {}",
                op.name(),
                op.kind().as_str(),
                expected.as_str(),
            )));
        }
    }

    if task_type == TaskType::CandidateSelection {
        let mut scores_available = false;
        for (i, op) in ops.iter().enumerate() {
            let last = i + 1 == ops.len();
            if op.needs_scores() && !scores_available {
                return Err(Error::Config(format!(
                    "operator {} at position {i} consumes scores but nothing upstream writes them",
                    op.name()
                )));
            }
            if !last && op.decides() {
                return Err(Error::Config(format!(
                    "operator {} at position {i} decides mid-chain; only the final operator may decide",
                    op.name()
                )));
            }
            if last && !op.decides() {
                return Err(Error::Config(format!(
                    "final operator {} never decides; a selection chain must end in a deciding operator",
                    op.name()
                )));
            }
            scores_available = op.writes_scores();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn op(v: Value) -> OperatorSpec {
        parse_operator(&v).unwrap()
    }

    #[test]
    fn parses_the_bundled_example_shape() {
        let json = r#"{
            "target_id": "news_feed_ranking",
            "task_type": "candidate_selection",
            "sample_rate": 0.1,
            "trigger": {"language": "en"},
            "transformers": [{
                "transformer_id": "threshold_search",
                "chain": [{
                    "operator": "UCB1Enhanced",
                    "target_reward": 0.11,
                    "exploration_weight": 1.0,
                    "penalty_delta": 2.0
                }]
            }],
            "feedback_fetcher": "example_feedback_fetcher",
            "feedback_level": "global"
        }"#;
        let cfg = TargetConfig::from_json(json).unwrap();
        assert_eq!(cfg.target_id, "news_feed_ranking");
        assert_eq!(cfg.task_type, TaskType::CandidateSelection);
        assert_eq!(cfg.sample_rate, 0.1);
        assert_eq!(cfg.trigger["language"], "en");
        assert_eq!(cfg.explore_action, ExploreAction::TagOnly);

        let parsed = parse_transformers(cfg.task_type, &cfg.transformers).unwrap();
        assert_eq!(parsed.len(), 1);
        match &parsed[0].ops[0] {
            OperatorSpec::Ucb1Enhanced(c) => {
                assert_eq!(c.target, 0.11);
                assert_eq!(c.w, 1.0);
                assert_eq!(c.delta, 2.0);
            }
            other => panic!("expected UCB1Enhanced, got {other:?}"),
        }
    }

    #[test]
    fn every_operator_name_parses() {
        let specs = [
            json!({"operator": "EpsilonGreedySelection", "epsilon": 0.1}),
            json!({"operator": "UCB1Enhanced", "target_reward": 0.11}),
            json!({"operator": "ThompsonSampling"}),
            json!({"operator": "RLActionSelection", "scorer": "model_v2", "terminal": true}),
            json!({"operator": "SoftmaxSelection", "temperature": 0.5}),
            json!({"operator": "BinarySearchSelection", "target_reward": 0.11, "min_samples": 10}),
            json!({"operator": "UniformSelection"}),
            json!({"operator": "SampleWithInterval", "intervals": [[0.4, 0.6]], "rate": 0.5}),
            json!({"operator": "SampleWithIntervalDecay", "intervals": [[0.4, 0.6]], "decay_lambda": 5.0}),
            json!({"operator": "SampleWithEntropy", "entropy_threshold": 0.5}),
            json!({"operator": "SampleWithEntropyMultiClass", "entropy_threshold": 0.6}),
            json!({"operator": "StratifiedSampling", "bin_edges": [0.0, 0.5, 1.0], "bin_quota": 10, "window_decisions": 100}),
            json!({"operator": "SampleWithSemanticSimilarity", "similarity_threshold": 0.8, "seed_vectors": [[1.0, 0.0]]}),
            json!({"operator": "ShuffleRanking"}),
        ];
        for v in &specs {
            let spec = op(v.clone());
            assert_eq!(spec.name(), v["operator"].as_str().unwrap());
        }
    }

    #[test]
    fn rejects_unknown_operator_and_bad_config() {
        assert!(parse_operator(&json!({"operator": "Nope"})).is_err());
        assert!(parse_operator(&json!({"operator": "EpsilonGreedySelection", "epsilon": 1.5})).is_err());
        assert!(parse_operator(&json!({"operator": "EpsilonGreedySelection"})).is_err());
        assert!(parse_operator(&json!({"operator": "UCB1Enhanced"})).is_err());
        assert!(parse_operator(&json!({"operator": "SoftmaxSelection", "temperature": 0.0})).is_err());
        assert!(parse_operator(&json!({"operator": "SampleWithInterval", "intervals": [[0.8, 0.2]]})).is_err());
        assert!(parse_operator(&json!({"operator": "SampleWithIntervalDecay", "intervals": [[0.0, 0.2], [0.5, 0.9]], "decay_lambda": 1.0})).is_err());
        assert!(parse_operator(&json!({"operator": "RLActionSelection"})).is_err());
        assert!(parse_operator(&json!(42)).is_err());
    }

    #[test]
    fn selection_chain_needs_exactly_one_decider_at_the_end() {
        let decider = op(json!({"operator": "UniformSelection"}));
        let writer = op(json!({"operator": "RLActionSelection", "scorer": "m", "terminal": false}));
        let softmax = op(json!({"operator": "SoftmaxSelection"}));

        // Writer then softmax: the intended two-stage pattern.
        validate_chain(TaskType::CandidateSelection, &[writer.clone(), softmax.clone()]).unwrap();
        validate_chain(TaskType::CandidateSelection, std::slice::from_ref(&decider)).unwrap();

        // Softmax first has no scores to consume.
        let err =
            validate_chain(TaskType::CandidateSelection, std::slice::from_ref(&softmax)).unwrap_err();
        assert!(err.to_string().contains("consumes scores"), "{err}");

        // Two deciders: the first decides mid-chain.
        let err = validate_chain(TaskType::CandidateSelection, &[decider.clone(), decider.clone()])
            .unwrap_err();
        assert!(err.to_string().contains("mid-chain"), "{err}");

        // A chain that never decides.
        let err =
            validate_chain(TaskType::CandidateSelection, std::slice::from_ref(&writer)).unwrap_err();
        assert!(err.to_string().contains("never decides"), "{err}");
    }

    #[test]
    fn mixed_kind_chain_names_the_offending_pair() {
        let selector = op(json!({"operator": "UniformSelection"}));
        let sampler = op(json!({"operator": "SampleWithEntropy", "entropy_threshold": 0.5}));
        let err =
            validate_chain(TaskType::CandidateSelection, &[sampler.clone(), selector.clone()])
                .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("SampleWithEntropy") && msg.contains("UniformSelection"), "{msg}");
    }

    #[test]
    fn task_type_must_match_operator_kind() {
        let shuffle = op(json!({"operator": "ShuffleRanking"}));
        validate_chain(TaskType::Ranking, std::slice::from_ref(&shuffle)).unwrap();
        assert!(validate_chain(TaskType::CandidateSelection, &[shuffle]).is_err());

        let sampler = op(json!({"operator": "SampleWithEntropy", "entropy_threshold": 0.3}));
        validate_chain(TaskType::ActiveLearning, &[sampler.clone(), sampler.clone()]).unwrap();
        assert!(validate_chain(TaskType::Ranking, &[sampler]).is_err());
    }

    #[test]
    fn transformer_ids_must_be_unique() {
        let mk = |id: &str| TransformerConfig {
            transformer_id: id.into(),
            chain: vec![json!({"operator": "UniformSelection"})],
        };
        parse_transformers(TaskType::CandidateSelection, &[mk("a"), mk("b")]).unwrap();
        assert!(parse_transformers(TaskType::CandidateSelection, &[mk("a"), mk("a")]).is_err());
        assert!(parse_transformers(TaskType::CandidateSelection, &[]).is_err());
    }

    #[test]
    fn shuffle_window_parses_and_validates() {
        let spec = op(json!({"operator": "ShuffleRanking", "shuffle_window_start": 1, "shuffle_window_end": 4}));
        assert_eq!(spec, OperatorSpec::ShuffleRanking { window: Some((1, 4)) });
        assert!(parse_operator(&json!({"operator": "ShuffleRanking", "shuffle_window_start": 1})).is_err());
    }
}
