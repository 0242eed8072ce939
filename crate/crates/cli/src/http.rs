//! `/v1` JSON API over an immutable model.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use latent_revise::classifiers::Labeler;
use latent_revise::corpus::PosTagger;
use latent_revise::metrics::{EvalRecord, KneserNeyLM, MetricsReport};
use latent_revise::revision::{Preset, RevisionConfig, MAX_ROUNDS};
use latent_revise::service::{tokenize, TransferEngine, TransferRequest, MAX_ETA};
use latent_revise::Error;

pub struct AppState {
    pub engine: TransferEngine,
    /// Scores `/metrics` accuracy for the style attribute.
    pub labeler: Option<Labeler>,
    pub lm: Option<KneserNeyLM>,
    pub workers: Semaphore,
}

impl AppState {
    pub fn new(
        engine: TransferEngine,
        labeler: Option<Labeler>,
        lm: Option<KneserNeyLM>,
        workers: usize,
    ) -> Self {
        Self {
            engine,
            labeler,
            lm,
            workers: Semaphore::new(workers.max(1)),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/schema", get(schema))
        .route("/v1/transfer", post(transfer))
        .route("/v1/metrics", post(metrics))
        .with_state(state)
}

pub struct ApiError {
    status: StatusCode,
    body: Value,
}

static NEXT_ERROR_ID: AtomicU64 = AtomicU64::new(1);

impl ApiError {
    fn bad_request(message: String) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": message }),
        }
    }

    fn internal(detail: &dyn std::fmt::Display) -> Self {
        let id = format!(
            "{:016x}",
            NEXT_ERROR_ID.fetch_add(1, Ordering::Relaxed) ^ std::process::id() as u64
        );
        log::error!("request failed [{id}]: {detail}");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: json!({ "error": "internal error", "id": id }),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownAttribute(_) | Error::InvalidClass { .. } => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": e.to_string() }),
            },
            Error::Invalid(_) | Error::PosTagsRequired | Error::Json(_) => {
                Self::bad_request(e.to_string())
            }
            other => Self::internal(&other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// JSON parsing with serde's own messages, which name the offending field.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "checkpoint": s.engine.checkpoint }))
}

async fn schema(State(s): State<Arc<AppState>>) -> Json<Value> {
    let base = RevisionConfig::default();
    let presets: Vec<Value> = Preset::ALL
        .iter()
        .map(|p| {
            let (lambda_c, beta) = p.values();
            json!({ "name": p.name(), "lambda_c": lambda_c, "beta": beta, "eta": base.eta, "T": base.max_rounds })
        })
        .collect();
    Json(json!({
        "attributes": s.engine.model.schema.attributes,
        "presets": presets,
        "caps": { "T": MAX_ROUNDS, "eta": MAX_ETA },
        "bow_modes": ["all-words", "nouns-only", "none"],
    }))
}

async fn run_blocking<T: Send + 'static>(
    s: &Arc<AppState>,
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let _permit = s
        .workers
        .acquire()
        .await
        .map_err(|e| ApiError::internal(&e))?;
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(&e))?
}

async fn transfer(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: TransferRequest = parse(&body)?;
    let engine = s.engine.clone();
    let resp = run_blocking(&s, move || {
        engine.transfer(&req, true).map_err(ApiError::from)
    })
    .await?;
    Ok(Json(resp).into_response())
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsPair {
    pub input: String,
    pub output: String,
    /// Requested class name of the style attribute.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub keyword: Option<String>,
    #[serde(default)]
    pub reference: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRequest {
    pub pairs: Vec<MetricsPair>,
}

async fn metrics(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: MetricsRequest = parse(&body)?;
    let state = s.clone();
    let report = run_blocking(&s, move || {
        let model = &state.engine.model;
        let style = model.schema.style_attribute().map_err(ApiError::from)?;
        let mut records = Vec::with_capacity(req.pairs.len());
        for (i, p) in req.pairs.iter().enumerate() {
            let input = tokenize(&p.input);
            let target_class = match &p.target {
                Some(name) => Some(style.class_index(name).ok_or_else(|| {
                    ApiError::from(Error::InvalidClass {
                        attribute: style.name.clone(),
                        value: name.clone(),
                    })
                })?),
                None => None,
            };
            if input.is_empty() {
                return Err(ApiError::bad_request(format!(
                    "pairs[{i}].input: must be nonempty"
                )));
            }
            records.push(EvalRecord {
                input_pos: model.tagger.as_ref().map(|t| t.tag(&input)),
                input,
                output: tokenize(&p.output),
                target_class,
                keyword: p.keyword.clone(),
                reference: p.reference.as_deref().map(tokenize),
            });
        }
        MetricsReport::compute(&records, state.labeler.as_ref(), state.lm.as_ref())
            .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(report).into_response())
}
