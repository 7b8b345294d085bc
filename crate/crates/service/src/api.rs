use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tlbo_core::data::{parse_csv, read_task};
use tlbo_core::{HistoryRecord, Phase, Proposal, Session, SessionConfig, SessionError, TaskDataset};

use crate::store::{Store, StoreError};

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", get(list).post(create))
        .route("/sessions/{id}/ask", post(ask))
        .route("/sessions/{id}/tell", post(tell))
        .route("/sessions/{id}/history", get(history))
        .with_state(store)
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.to_string())
}

fn internal(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, msg.to_string())
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        tracing::error!(error = %e, "persistence failed");
        internal(e)
    }
}

fn session_error(e: SessionError) -> ApiError {
    use SessionError::*;
    let status = match &e {
        OutsideBox(_) | WrongPhase(_) => StatusCode::CONFLICT,
        NonFiniteObservation => StatusCode::BAD_REQUEST,
        NoSources | TooFewSourcePoints { .. } | DimensionMismatch { .. } | InvalidConfig(_)
        | FailureWithoutHistory | Transform(_) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiError(status, e.to_string())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(internal)
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn list(State(store): State<Arc<Store>>) -> Json<Value> {
    Json(json!({ "sessions": store.list() }))
}

/// A source task: inline JSON, inline CSV text, or a server-side file.
#[derive(Deserialize)]
#[serde(untagged)]
enum SourceSpec {
    Csv { task_id: String, csv: String },
    File { path: PathBuf },
    Inline(TaskDataset),
}

impl SourceSpec {
    fn load(self) -> Result<TaskDataset, ApiError> {
        match self {
            SourceSpec::Csv { task_id, csv } => parse_csv(task_id, csv.as_bytes()).map_err(bad_request),
            SourceSpec::File { path } => {
                read_task(&path).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
            }
            SourceSpec::Inline(d) => Ok(d),
        }
    }
}

async fn create(State(store): State<Arc<Store>>, body: Bytes) -> Result<Response, ApiError> {
    let mut v: Value = serde_json::from_slice(&body).map_err(bad_request)?;
    let obj = v.as_object_mut().ok_or_else(|| bad_request("body must be a JSON object"))?;
    let sources = obj.remove("sources").ok_or_else(|| bad_request("missing `sources`"))?;
    let mut config = obj.remove("config").ok_or_else(|| bad_request("missing `config`"))?;
    let cfg_obj = config
        .as_object_mut()
        .ok_or_else(|| bad_request("`config` must be an object"))?;
    if !cfg_obj.contains_key("schedule") {
        cfg_obj.insert("schedule".into(), serde_json::to_value(store.default_schedule()).map_err(internal)?);
    }
    let sources: Vec<SourceSpec> =
        serde_json::from_value(sources).map_err(|e| bad_request(format!("sources: {e}")))?;
    let cfg: SessionConfig =
        serde_json::from_value(config).map_err(|e| bad_request(format!("config: {e}")))?;
    let datasets = sources
        .into_iter()
        .map(SourceSpec::load)
        .collect::<Result<Vec<_>, _>>()?;

    let id = blocking(move || -> Result<(String, Phase), ApiError> {
        let session = Session::create(datasets, cfg).map_err(session_error)?;
        let phase = session.phase();
        Ok((store.insert(session)?, phase))
    })
    .await??;
    tracing::info!(session = %id.0, "created");
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id.0, "phase": id.1 })),
    )
        .into_response())
}

#[derive(Debug, Serialize)]
struct AskResponse {
    session_id: String,
    phase: Phase,
    x_next: Vec<f64>,
    suggested_start: bool,
    weights: Option<Vec<f64>>,
    losses: Option<Vec<usize>>,
    iteration: usize,
    n_observations: usize,
    surrogate_value: Option<f64>,
    predicted_y: Option<f64>,
}

async fn ask(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<Json<AskResponse>, ApiError> {
    let slot = store.get(&id).ok_or_else(|| not_found(&id))?;
    blocking(move || {
        // Compute on a copy so readers are not blocked by the optimization.
        let mut work = slot.lock().expect("session lock").session.clone();
        let proposal = work.propose().map_err(session_error)?;
        {
            let mut g = slot.lock().expect("session lock");
            if g.session.n_observations() == work.n_observations() {
                g.session = work.clone();
            }
        }
        let base = AskResponse {
            session_id: id,
            phase: work.phase(),
            x_next: proposal.x().to_vec(),
            suggested_start: false,
            weights: None,
            losses: None,
            iteration: work.iteration(),
            n_observations: work.n_observations(),
            surrogate_value: None,
            predicted_y: None,
        };
        Ok(Json(match proposal {
            Proposal::Start(_) => AskResponse {
                suggested_start: true,
                ..base
            },
            Proposal::Suggestion(s) => AskResponse {
                weights: Some(s.weights),
                losses: Some(s.losses),
                surrogate_value: Some(s.surrogate_value),
                predicted_y: Some(s.predicted_y),
                ..base
            },
        }))
    })
    .await?
}

#[derive(Deserialize)]
struct TellRequest {
    x: Vec<f64>,
    #[serde(default)]
    y: Option<f64>,
    #[serde(default)]
    failure: bool,
}

#[derive(Debug, Serialize)]
struct BestSoFar {
    x: Vec<f64>,
    y: f64,
}

fn best_of(s: &Session) -> Option<BestSoFar> {
    s.best_so_far().map(|(x, y)| BestSoFar { x, y })
}

async fn tell(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let slot = store.get(&id).ok_or_else(|| not_found(&id))?;
    let req: TellRequest = serde_json::from_slice(&body).map_err(bad_request)?;
    if !req.failure && req.y.is_none() {
        return Err(bad_request("`y` is required unless `failure` is true"));
    }
    blocking(move || {
        let out = store.mutate(&slot, |s| {
            let rec = s.tell(&req.x, req.y, req.failure)?.clone();
            Ok::<_, SessionError>(json!({
                "session_id": id,
                "phase": s.phase(),
                "n_observations": s.n_observations(),
                "recorded_y": rec.y,
                "failure": rec.failure,
                "best_so_far": best_of(s),
            }))
        })?;
        out.map(Json).map_err(session_error)
    })
    .await?
}

#[derive(Debug, Serialize)]
struct WeightRow {
    index: usize,
    weights: Vec<f64>,
}

async fn history(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let slot = store.get(&id).ok_or_else(|| not_found(&id))?;
    let g = slot.lock().expect("session lock");
    let s = &g.session;
    let records: &[HistoryRecord] = s.history();
    let trace: Vec<WeightRow> = records
        .iter()
        .filter_map(|r| {
            r.weights.as_ref().map(|w| WeightRow {
                index: r.index,
                weights: w.clone(),
            })
        })
        .collect();
    let names: Vec<&str> = s.sources().iter().map(|t| t.data.task_id.as_str()).collect();
    Ok(Json(json!({
        "session_id": g.session_id,
        "phase": s.phase(),
        "box": s.config().bounds,
        "models": names.iter().copied().chain(["target"]).collect::<Vec<_>>(),
        "records": records,
        "weights_trace": trace,
        "best_so_far": best_of(s),
    })))
}
