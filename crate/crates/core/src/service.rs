//! HTTP surface: target registration and subscription lifecycle, explore
//! with a passthrough deadline, feedback events, and stats.

use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use serde::Deserialize;
use serde_json::{Value, json};

use crate::config::{TargetConfig, TaskType};
use crate::error::{Error, Result};
use crate::feedback::{EventType, FeedbackEvent};
use crate::model::ScoredCandidateSet;
use crate::ranking::RankedList;
use crate::registry::{Engine, ExploreRequest};
use crate::sampling::PredictionInput;

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_DEADLINE_MS: u64 = 20;

#[derive(Clone)]
pub struct ServiceState {
    pub engine: Arc<Engine>,
    /// Explore budget; expiry degrades to a passthrough, never an error.
    pub deadline: Duration,
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/targets", get(list_targets))
        .route("/targets/{id}", put(put_target))
        .route("/targets/{id}/subscribe", post(subscribe))
        .route("/targets/{id}/unsubscribe", post(unsubscribe))
        .route("/explore", post(explore))
        .route("/events", post(events))
        .route("/stats/{id}", get(stats))
        .with_state(state)
}

/// Bind and serve until ctrl-c.
pub async fn serve(addr: &str, state: ServiceState) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// JSON error envelope with the HTTP status implied by the error kind.
struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Config(_) | Error::InvalidInput(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({
            "status": "error",
            "error_code": self.0.code(),
            "message": self.0.to_string(),
        });
        (status, axum::Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

type ApiResult = std::result::Result<axum::Json<Value>, ApiError>;

async fn put_target(
    Path(id): Path<String>,
    State(state): State<ServiceState>,
    axum::Json(body): axum::Json<Value>,
) -> ApiResult {
    let config: TargetConfig = serde_json::from_value(body)
        .map_err(|e| Error::Config(format!("target config: {e}")))?;
    if config.target_id != id {
        return Err(Error::InvalidInput(format!(
            "path target id {id:?} does not match body target_id {:?}",
            config.target_id
        ))
        .into());
    }
    state.engine.register_target(config)?;
    let version = state.engine.stats(&id)?.version;
    Ok(axum::Json(json!({"status": "ok", "target_id": id, "version": version})))
}

async fn subscribe(Path(id): Path<String>, State(state): State<ServiceState>) -> ApiResult {
    state.engine.subscribe(&id)?;
    Ok(axum::Json(json!({"status": "ok", "target_id": id, "subscribed": true})))
}

async fn unsubscribe(Path(id): Path<String>, State(state): State<ServiceState>) -> ApiResult {
    state.engine.unsubscribe(&id)?;
    Ok(axum::Json(json!({"status": "ok", "target_id": id, "subscribed": false})))
}

async fn explore(State(state): State<ServiceState>, axum::Json(req): axum::Json<ExploreRequest>) -> ApiResult {
    let task_type = state.engine.task_type(&req.target_id)?;
    validate_shape(task_type, &req.data)?;

    let engine = state.engine.clone();
    let moved = req.clone();
    let run = tokio::task::spawn_blocking(move || engine.explore(&moved));
    let resp = match tokio::time::timeout(state.deadline, run).await {
        Ok(joined) => joined.map_err(|e| Error::InvalidState(format!("explore task: {e}")))??,
        Err(_elapsed) => {
            // Deadline expired: the caller gets their payload back and
            // serves the default; the decision is not an exploration.
            crate::registry::ExploreResponse {
                data: req.data,
                decision_id: uuid::Uuid::new_v4().to_string(),
                explored: false,
                chosen_candidate_id: None,
            }
        }
    };

    let mut body = json!({
        "status": "ok",
        "data": resp.data,
        "decision_id": resp.decision_id,
        "explored": resp.explored,
    });
    if let Some(chosen) = resp.chosen_candidate_id {
        body["chosen_candidate_id"] = Value::String(chosen);
    }
    Ok(axum::Json(body))
}

/// Reject payloads that do not fit the target's task type before they
/// reach the engine, so callers see a 400 instead of a silent passthrough.
fn validate_shape(task_type: TaskType, data: &Value) -> Result<()> {
    match task_type {
        TaskType::CandidateSelection => {
            let set: ScoredCandidateSet = serde_json::from_value(data.clone())
                .map_err(|e| Error::InvalidInput(format!("candidate set: {e}")))?;
            set.validate()
        }
        TaskType::ActiveLearning => {
            let pred: PredictionInput = serde_json::from_value(data.clone())
                .map_err(|e| Error::InvalidInput(format!("prediction input: {e}")))?;
            pred.validate()
        }
        TaskType::Ranking => {
            let list: RankedList = serde_json::from_value(data.clone())
                .map_err(|e| Error::InvalidInput(format!("ranked list: {e}")))?;
            list.validate()
        }
    }
}

#[derive(Deserialize)]
struct EventBody {
    decision_id: String,
    event_type: EventType,
    timestamp_ms: Option<u64>,
}

async fn events(State(state): State<ServiceState>, axum::Json(body): axum::Json<EventBody>) -> ApiResult {
    let timestamp_ms = body.timestamp_ms.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    });
    state.engine.ingest_event(&FeedbackEvent {
        decision_id: body.decision_id,
        event_type: body.event_type,
        timestamp_ms,
    })?;
    Ok(axum::Json(json!({"status": "ok"})))
}

async fn stats(Path(id): Path<String>, State(state): State<ServiceState>) -> ApiResult {
    let stats = state.engine.stats(&id)?;
    let mut body = serde_json::to_value(&stats).map_err(Error::from)?;
    body["status"] = Value::String("ok".into());
    Ok(axum::Json(body))
}

async fn list_targets(State(state): State<ServiceState>) -> ApiResult {
    let targets = state.engine.list_targets();
    Ok(axum::Json(json!({"status": "ok", "targets": targets})))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use crate::model::{Candidate, DecisionContext};

    async fn spawn_service(engine: Arc<Engine>, deadline: Duration) -> String {
        let state = ServiceState { engine, deadline };
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, router(state)).await.unwrap();
        });
        format!("http://{addr}")
    }

    fn target_config() -> Value {
        json!({
            "target_id": "news",
            "task_type": "candidate_selection",
            "sample_rate": 1.0,
            "trigger": {"language": "en"},
            "transformers": [{"transformer_id": "main", "chain": [
                {"operator": "UCB1Enhanced", "target_reward": 0.11, "exploration_weight": 1.0, "penalty_delta": 2.0}
            ]}],
            "feedback_fetcher": "example_feedback_fetcher",
            "feedback_level": "global"
        })
    }

    fn explore_body() -> Value {
        json!({
            "target_id": "news",
            "unit_id": "user-1",
            "attributes": {"language": "en"},
            "data": {"candidates": [
                {"id": "0.10", "payload": "0.10"},
                {"id": "0.12", "payload": "0.12"}
            ]}
        })
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn full_lifecycle_round_trip() {
        let base = spawn_service(Arc::new(Engine::in_memory()), Duration::from_secs(5)).await;
        let http = reqwest::Client::new();

        // Register, then re-register: idempotent, version bumps.
        let put = http
            .put(format!("{base}/targets/news"))
            .json(&target_config())
            .send()
            .await
            .unwrap();
        assert_eq!(put.status(), 200);
        let put2: Value = http
            .put(format!("{base}/targets/news"))
            .json(&target_config())
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(put2["version"], json!(2));

        // Unsubscribed explore echoes the payload.
        let echo: Value = http
            .post(format!("{base}/explore"))
            .json(&explore_body())
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(echo["explored"], json!(false));
        assert_eq!(echo["data"], explore_body()["data"]);
        assert!(echo["decision_id"].as_str().is_some_and(|s| !s.is_empty()));

        let sub = http
            .post(format!("{base}/targets/news/subscribe"))
            .send()
            .await
            .unwrap();
        assert_eq!(sub.status(), 200);

        let explored: Value = http
            .post(format!("{base}/explore"))
            .json(&explore_body())
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(explored["explored"], json!(true));
        let decision_id = explored["decision_id"].as_str().unwrap().to_owned();
        let chosen = explored["chosen_candidate_id"].as_str().unwrap().to_owned();

        for event_type in ["display", "click"] {
            let ev = http
                .post(format!("{base}/events"))
                .json(&json!({
                    "decision_id": decision_id,
                    "event_type": event_type,
                    "timestamp_ms": 1_700_000_000_000u64
                }))
                .send()
                .await
                .unwrap();
            assert_eq!(ev.status(), 200);
        }

        let stats: Value = http
            .get(format!("{base}/stats/news"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let cand = &stats["candidates"][&chosen];
        assert_eq!(cand["trials"], json!(1));
        assert_eq!(cand["successes"], json!(1));
        assert_eq!(cand["pulls"], json!(1));

        let listed: Value = http
            .get(format!("{base}/targets"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(listed["targets"][0]["target_id"], json!("news"));
        assert_eq!(listed["targets"][0]["subscribed"], json!(true));

        let unsub = http
            .post(format!("{base}/targets/news/unsubscribe"))
            .send()
            .await
            .unwrap();
        assert_eq!(unsub.status(), 200);
        let echo: Value = http
            .post(format!("{base}/explore"))
            .json(&explore_body())
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(echo["explored"], json!(false));
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn unknown_targets_are_404s() {
        let base = spawn_service(Arc::new(Engine::in_memory()), Duration::from_secs(1)).await;
        let http = reqwest::Client::new();

        for (method, url) in [
            ("post", format!("{base}/targets/ghost/subscribe")),
            ("post", format!("{base}/targets/ghost/unsubscribe")),
            ("get", format!("{base}/stats/ghost")),
        ] {
            let resp = match method {
                "post" => http.post(&url).send().await.unwrap(),
                _ => http.get(&url).send().await.unwrap(),
            };
            assert_eq!(resp.status(), 404, "{url}");
            let body: Value = resp.json().await.unwrap();
            assert_eq!(body["status"], json!("error"));
            assert_eq!(body["error_code"], json!("NotFound"));
        }

        let resp = http
            .post(format!("{base}/explore"))
            .json(&json!({"target_id": "ghost", "unit_id": "u", "data": {}}))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 404);
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn invalid_configs_and_payloads_are_400s() {
        let base = spawn_service(Arc::new(Engine::in_memory()), Duration::from_secs(1)).await;
        let http = reqwest::Client::new();

        // Softmax with no upstream scores is a config error.
        let mut bad = target_config();
        bad["transformers"][0]["chain"] = json!([{"operator": "SoftmaxSelection"}]);
        let resp = http.put(format!("{base}/targets/news")).json(&bad).send().await.unwrap();
        assert_eq!(resp.status(), 400);
        let body: Value = resp.json().await.unwrap();
        assert_eq!(body["error_code"], json!("ConfigError"));

        // Path/body id mismatch.
        let resp = http
            .put(format!("{base}/targets/other"))
            .json(&target_config())
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400);

        // Duplicate candidate ids in the explore payload.
        http.put(format!("{base}/targets/news")).json(&target_config()).send().await.unwrap();
        let mut dup = explore_body();
        dup["data"]["candidates"][1]["id"] = json!("0.10");
        let resp = http.post(format!("{base}/explore")).json(&dup).send().await.unwrap();
        assert_eq!(resp.status(), 400);
        let body: Value = resp.json().await.unwrap();
        assert_eq!(body["error_code"], json!("InvalidInput"));
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn deadline_expiry_degrades_to_passthrough() {
        let engine = Arc::new(Engine::in_memory());
        engine.register_scorer(
            "slow",
            Arc::new(|_: &Candidate, _: &DecisionContext| -> Result<f64> {
                std::thread::sleep(Duration::from_millis(500));
                Ok(1.0)
            }),
        );
        let cfg: TargetConfig = serde_json::from_value(json!({
            "target_id": "slow_target",
            "task_type": "candidate_selection",
            "sample_rate": 1.0,
            "transformers": [{"transformer_id": "main", "chain": [
                {"operator": "RLActionSelection", "scorer": "slow", "terminal": true}
            ]}],
            "feedback_fetcher": "ctr"
        }))
        .unwrap();
        engine.register_target(cfg).unwrap();
        engine.subscribe("slow_target").unwrap();

        let base = spawn_service(engine, Duration::from_millis(50)).await;
        let http = reqwest::Client::new();
        let data = json!({"candidates": [{"id": "a", "payload": 1}]});
        let started = std::time::Instant::now();
        let resp: Value = http
            .post(format!("{base}/explore"))
            .json(&json!({"target_id": "slow_target", "unit_id": "u", "data": data}))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert!(started.elapsed() < Duration::from_millis(400), "deadline cut the wait");
        assert_eq!(resp["status"], json!("ok"));
        assert_eq!(resp["explored"], json!(false));
        assert_eq!(resp["data"], data);
    }
}
