//! Online explore-exploit engine.
//!
//! Product surfaces register *exploration targets*: named decision points
//! with a sampling rate, trigger conditions, and one or more operator
//! chains (transformers). Subscribed targets route live decisions through
//! bandit, active-learning, or ranking operators; everything else passes
//! the caller's payload through untouched. Explored decisions are logged
//! as exposures, joined with feedback events (displays, clicks, custom
//! outcomes), and fed back to the operators as reward snapshots.
//!
//! - [`registry::Engine`] — target registry and decision routing
//! - [`bandits`] / [`sampling`] / [`ranking`] — the operators
//! - [`feedback::FeedbackStore`] — exposure log, event joins, snapshots
//! - [`service`] — HTTP surface
//! - [`simulate`] — Bernoulli environment simulator

pub mod bandits;
pub mod config;
pub mod error;
pub mod feedback;
pub mod hash;
pub mod model;
pub mod ranking;
pub mod registry;
pub mod sampling;
pub mod service;
pub mod simulate;

pub use config::{ExploreAction, OperatorSpec, TargetConfig, TaskType};
pub use error::{Error, Result};
pub use feedback::{
    EventType, ExposureRecord, FeedbackEvent, FeedbackLevel, FeedbackSnapshot, FeedbackStore,
    LogAck, MetricSpec, MetricWindow, StoreOptions,
};
pub use model::{ArmStats, Candidate, DecisionContext, ScoredCandidateSet};
pub use ranking::RankedList;
pub use registry::{Engine, EngineOptions, ExploreRequest, ExploreResponse};
pub use sampling::PredictionInput;
pub use simulate::{EpochReport, SimCandidate, SimEnvironment};
