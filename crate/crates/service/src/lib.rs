//! HTTP+JSON front end over a checkpointed model.
//!
//! Readers clone an `Arc` of the latest snapshot and never wait on the
//! writer for longer than the swap. Events are applied by one writer at a
//! time to a private copy, which replaces the snapshot once complete.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use spectrec::model::top_n;
use spectrec::spectral::{explain, leading_items};
use spectrec::{Checkpoint, Error as ModelError, FrequencyWeights, InteractionEvent, ModelConfig, ScoreVector};

/// How ids that are missing from the checkpoint's maps are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdPolicy {
    /// Unknown ids are errors.
    #[default]
    Strict,
    /// Posted events may claim spare rows; reads treat unknown ids as cold.
    Lenient,
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub ids: IdPolicy,
    /// Where the latest snapshot is written on shutdown.
    pub save_path: Option<PathBuf>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            ids: IdPolicy::Strict,
            save_path: None,
        }
    }
}

pub struct AppState {
    snapshot: RwLock<Arc<Checkpoint>>,
    writer: tokio::sync::Mutex<()>,
    options: ServiceOptions,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(checkpoint: Checkpoint, options: ServiceOptions) -> SharedState {
        Arc::new(AppState {
            snapshot: RwLock::new(Arc::new(checkpoint)),
            writer: tokio::sync::Mutex::new(()),
            options,
        })
    }

    /// The latest committed snapshot.
    pub fn snapshot(&self) -> Arc<Checkpoint> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.options
    }

    /// Writes the current snapshot to the configured save path, if any.
    pub fn save(&self) -> spectrec::Result<Option<PathBuf>> {
        match &self.options.save_path {
            Some(path) => {
                self.snapshot().save(path)?;
                Ok(Some(path.clone()))
            }
            None => Ok(None),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Ordering { .. } => Self::new(StatusCode::CONFLICT, "out_of_order", e.to_string()),
            ModelError::Io(_) | ModelError::Solver(_) | ModelError::Checkpoint(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
            }
            _ => Self::unprocessable("invalid_request", e.to_string()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::unprocessable("invalid_query", e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::unprocessable("invalid_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model_info))
        .route("/users/{id}/recommendations", get(recommendations))
        .route("/users/{id}/explanations", get(explanations))
        .route("/users/{id}/trajectory", get(trajectory))
        .route("/frequencies", get(frequencies))
        .route("/events", post(post_event))
        .with_state(state)
}

/// Serves until ctrl-c or SIGTERM, then saves the snapshot if configured.
pub async fn serve(state: SharedState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    match state.save() {
        Ok(Some(path)) => eprintln!("saved checkpoint to {}", path.display()),
        Ok(None) => {}
        Err(e) => return Err(std::io::Error::other(e.to_string())),
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub version: u64,
}

async fn health(State(state): State<SharedState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: state.snapshot().model.version(),
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub version: u64,
    pub config: ModelConfig,
    pub n_users: usize,
    pub n_items: usize,
    pub known_users: usize,
    pub known_items: usize,
    pub n_events: u64,
    pub t_ref: f64,
}

async fn model_info(State(state): State<SharedState>) -> Json<ModelInfo> {
    let snap = state.snapshot();
    let model = &snap.model;
    Json(ModelInfo {
        version: model.version(),
        config: model.config().clone(),
        n_users: model.n_users(),
        n_items: model.n_items(),
        known_users: snap.users.len(),
        known_items: snap.items.len(),
        n_events: model.store().n_events(),
        t_ref: model.store().t_ref(),
    })
}

/// Index of a user id, `None` for a cold id under the lenient policy.
fn lookup_user(state: &AppState, snap: &Checkpoint, id: &str) -> Result<Option<usize>, ApiError> {
    match snap.users.get(id) {
        Some(u) => Ok(Some(u)),
        None if state.options.ids == IdPolicy::Lenient => Ok(None),
        None => Err(ApiError::not_found("unknown_user", format!("unknown user '{id}'"))),
    }
}

fn lookup_item(snap: &Checkpoint, id: &str) -> Result<usize, ApiError> {
    snap.items
        .get(id)
        .ok_or_else(|| ApiError::not_found("unknown_item", format!("unknown item '{id}'")))
}

#[derive(Debug, Deserialize)]
pub struct RecommendationQuery {
    pub n: Option<usize>,
    pub weights: Option<String>,
    pub exclude_seen: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankedItem {
    pub item: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RecommendationResponse {
    pub user: String,
    pub version: u64,
    pub weights: Vec<f64>,
    pub exclude_seen: bool,
    pub items: Vec<RankedItem>,
}

fn parse_weights(text: Option<&str>, k: usize) -> Result<FrequencyWeights, ApiError> {
    let Some(text) = text else {
        return Ok(FrequencyWeights::ones(k));
    };
    let weights: FrequencyWeights = text
        .parse()
        .map_err(|e: ModelError| ApiError::unprocessable("invalid_weights", e.to_string()))?;
    if weights.len() != k {
        return Err(ApiError::unprocessable(
            "invalid_weights",
            format!("expected {k} weights, got {}", weights.len()),
        ));
    }
    Ok(weights)
}

async fn recommendations(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    query: Result<Query<RecommendationQuery>, QueryRejection>,
) -> ApiResult<RecommendationResponse> {
    let Query(query) = query?;
    let snap = state.snapshot();
    let model = &snap.model;
    let user = lookup_user(&state, &snap, &id)?;
    let weights = parse_weights(query.weights.as_deref(), model.config().k)?;
    let n = query.n.unwrap_or(10);
    let exclude_seen = query.exclude_seen.unwrap_or(model.config().exclude_seen);
    // Neutral weights take the same path as explicit ones so both payloads match.
    let ranked = match user {
        Some(u) => model.recommend(u, n, Some(&weights), exclude_seen)?,
        None => top_n(&ScoreVector::zeros(model.n_items()), &[], n),
    };
    Ok(Json(RecommendationResponse {
        user: id,
        version: model.version(),
        weights: weights.as_slice().to_vec(),
        exclude_seen,
        items: ranked
            .into_iter()
            .enumerate()
            .map(|(r, (i, score))| RankedItem {
                item: snap.items.label(i),
                score,
                rank: r + 1,
            })
            .collect(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct ExplanationQuery {
    pub item: Option<String>,
    pub n: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SimilarItem {
    pub item: String,
    pub similarity: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ExplanationResponse {
    pub user: String,
    pub item: String,
    pub version: u64,
    pub explanations: Vec<SimilarItem>,
}

async fn explanations(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    query: Result<Query<ExplanationQuery>, QueryRejection>,
) -> ApiResult<ExplanationResponse> {
    let Query(query) = query?;
    let snap = state.snapshot();
    let model = &snap.model;
    let user = snap
        .users
        .get(&id)
        .ok_or_else(|| ApiError::not_found("unknown_user", format!("unknown user '{id}'")))?;
    let item_id = query
        .item
        .ok_or_else(|| ApiError::unprocessable("invalid_query", "missing 'item'"))?;
    let item = lookup_item(&snap, &item_id)?;
    let similar = explain(
        &model.view(),
        model.store(),
        user,
        item,
        query.n.unwrap_or(3),
        model.config().explain_similarity,
    )?;
    Ok(Json(ExplanationResponse {
        user: id,
        item: item_id,
        version: model.version(),
        explanations: similar
            .into_iter()
            .map(|(i, similarity)| SimilarItem {
                item: snap.items.label(i),
                similarity,
            })
            .collect(),
    }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryPoint {
    pub timestamp: f64,
    pub long_term: Vec<f64>,
    pub short_term: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryResponse {
    pub user: String,
    pub version: u64,
    pub points: Vec<TrajectoryPoint>,
}

async fn trajectory(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<TrajectoryResponse> {
    let snap = state.snapshot();
    let model = &snap.model;
    let user = lookup_user(&state, &snap, &id)?;
    let points = match (user, model.trajectory()) {
        (Some(u), Some(log)) => log
            .user(u)
            .iter()
            .map(|p| TrajectoryPoint {
                timestamp: p.timestamp,
                long_term: p.long_term.clone(),
                short_term: p.short_term.clone(),
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(Json(TrajectoryResponse {
        user: id,
        version: model.version(),
        points,
    }))
}

#[derive(Debug, Deserialize)]
pub struct FrequencyQuery {
    pub n_items: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Loading {
    pub item: String,
    pub loading: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Frequency {
    pub index: usize,
    pub singular_value: f64,
    pub items: Vec<Loading>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FrequencyResponse {
    pub version: u64,
    pub frequencies: Vec<Frequency>,
}

async fn frequencies(
    State(state): State<SharedState>,
    query: Result<Query<FrequencyQuery>, QueryRejection>,
) -> ApiResult<FrequencyResponse> {
    let Query(query) = query?;
    let snap = state.snapshot();
    let factors = snap.model.factors();
    let n = query.n_items.unwrap_or(3);
    let frequencies = (0..factors.rank())
        .map(|j| {
            Ok(Frequency {
                index: j,
                singular_value: factors.s[j],
                items: leading_items(factors, j, n)?
                    .into_iter()
                    .map(|i| Loading {
                        item: snap.items.label(i),
                        loading: factors.v[(i, j)],
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(Json(FrequencyResponse {
        version: snap.model.version(),
        frequencies,
    }))
}

/// Ids may be posted as JSON strings or numbers.
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum ExternalId {
    Text(String),
    Number(serde_json::Number),
}

impl std::fmt::Display for ExternalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExternalId::Text(s) => f.write_str(s),
            ExternalId::Number(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
pub struct EventBody {
    pub user: ExternalId,
    pub item: ExternalId,
    pub timestamp: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EventResponse {
    pub version: u64,
    pub weight: f64,
    pub transition: Option<f64>,
}

fn resolve_for_write(
    map: &mut spectrec::IdMap,
    id: &str,
    capacity: usize,
    policy: IdPolicy,
    kind: &'static str,
) -> Result<usize, ApiError> {
    if let Some(i) = map.get(id) {
        return Ok(i);
    }
    let code = if kind == "user" { "unknown_user" } else { "unknown_item" };
    match policy {
        IdPolicy::Strict => Err(ApiError::unprocessable(code, format!("unknown {kind} '{id}'"))),
        IdPolicy::Lenient if map.len() < capacity => Ok(map.intern(id)),
        IdPolicy::Lenient => Err(ApiError::unprocessable(
            "capacity_exhausted",
            format!("no spare {kind} rows left for '{id}' (capacity {capacity})"),
        )),
    }
}

async fn post_event(
    State(state): State<SharedState>,
    body: Result<Json<EventBody>, JsonRejection>,
) -> ApiResult<EventResponse> {
    let Json(body) = body?;
    let _writer = state.writer.lock().await;
    let current = state.snapshot();
    let mut next = (*current).clone();
    let user = resolve_for_write(
        &mut next.users,
        &body.user.to_string(),
        next.model.n_users(),
        state.options.ids,
        "user",
    )?;
    let item = resolve_for_write(
        &mut next.items,
        &body.item.to_string(),
        next.model.n_items(),
        state.options.ids,
        "item",
    )?;
    let observation = next.model.observe(&InteractionEvent::new(user, item, body.timestamp))?;
    *state.snapshot.write().expect("snapshot lock poisoned") = Arc::new(next);
    Ok(Json(EventResponse {
        version: observation.version,
        weight: observation.weight,
        transition: observation.transition,
    }))
}
