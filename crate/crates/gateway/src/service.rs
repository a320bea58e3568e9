//! HTTP service over a built store.
//!
//! Every error is `{"error": {"code", "message"}}` with a matching status.
//! Until the stores are built (or after a failed reload) data endpoints
//! answer 409 with code `stores_not_built`.

use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use grg_core::grg::Mode;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::adapters::Backends;
use crate::commands::Served;
use crate::config::Config;
use crate::error::GatewayError;

pub struct AppState {
    pub config: Config,
    pub backends: Backends,
    served: RwLock<Result<Arc<Served>, String>>,
}

impl AppState {
    /// Opens the stores if they exist; a missing store is not fatal.
    pub fn new(config: Config, backends: Backends) -> Self {
        let served = Served::open(&config, &backends).map(Arc::new).map_err(|e| e.to_string());
        Self {
            config,
            backends,
            served: RwLock::new(served),
        }
    }

    fn served(&self) -> Result<Arc<Served>, ApiError> {
        match &*self.served.read().expect("state lock") {
            Ok(s) => Ok(s.clone()),
            Err(msg) => Err(ApiError::new(StatusCode::CONFLICT, "stores_not_built", msg.clone())),
        }
    }

    /// Reopen the stores. The previous snapshot stays live on failure.
    pub fn reload(&self) -> Result<Arc<Served>, GatewayError> {
        let fresh = Arc::new(Served::open(&self.config, &self.backends)?);
        *self.served.write().expect("state lock") = Ok(fresh.clone());
        Ok(fresh)
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
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Run blocking pipeline work off the runtime under the request deadline.
async fn blocking<F>(state: &AppState, f: F) -> ApiResult
where
    F: FnOnce() -> Result<Value, GatewayError> + Send + 'static,
{
    let limit = Duration::from_millis(state.config.service.request_timeout_ms);
    match tokio::time::timeout(limit, tokio::task::spawn_blocking(f)).await {
        Err(_) => Err(ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            "timeout",
            format!("request exceeded {} ms", limit.as_millis()),
        )),
        Ok(Err(join)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", join.to_string())),
        Ok(Ok(r)) => r.map(Json).map_err(ApiError::from),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBody {
    pub text: String,
    #[serde(default)]
    pub image_ids: Vec<String>,
    #[serde(default)]
    pub mode: Option<Mode>,
}

async fn query(State(state): State<Arc<AppState>>, body: Result<Json<QueryBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let served = state.served()?;
    let mode = body.mode.unwrap_or(state.config.retrieval.default_mode);
    blocking(&state, move || served.query(&body.text, &body.image_ids, mode)).await
}

#[derive(Debug, Deserialize)]
pub struct DepthParam {
    pub depth: Option<usize>,
}

async fn entity(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    params: Result<UrlQuery<DepthParam>, QueryRejection>,
) -> ApiResult {
    let UrlQuery(params) = params?;
    let served = state.served()?;
    let depth = params.depth.unwrap_or(1);
    if !(1..=2).contains(&depth) {
        return Err(ApiError::bad_request(format!("depth must be 1 or 2, got {depth}")));
    }
    let graph = &served.engine.graph;
    let entity = graph
        .entity(&id)
        .ok_or_else(|| ApiError::from(GatewayError::NotFound(format!("entity {id}"))))?;
    let hood = graph
        .neighborhood(std::slice::from_ref(&id), depth)
        .map_err(|e| ApiError::from(GatewayError::pipeline(e)))?;
    Ok(Json(json!({
        "entity": entity,
        "depth": depth,
        "neighborhood": {
            "entities": hood.graph.entities().collect::<Vec<_>>(),
            "relations": hood.graph.relations(),
        },
        "notices": hood.notices,
    })))
}

async fn chunk(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let served = state.served()?;
    served
        .chunk_json(&id)
        .map(Json)
        .ok_or_else(|| GatewayError::NotFound(format!("chunk {id}")).into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBody {
    pub benchmark: std::path::PathBuf,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

async fn eval(State(state): State<Arc<AppState>>, body: Result<Json<EvalBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let served = state.served()?;
    let modes = if body.modes.is_empty() { Mode::ALL.to_vec() } else { body.modes };
    let cfg = state.config.clone();
    blocking(&state, move || served.eval(&cfg, &body.benchmark, &modes).map(|o| o.json)).await
}

fn health_json(served: &Served) -> Value {
    json!({
        "status": "ok",
        "stages": served.stages,
        "documents": served.docs.len(),
        "chunks": served.engine.chunks.len(),
        "entities": served.engine.graph.entity_count(),
        "relations": served.engine.graph.relation_count(),
        "generator": served.engine.generator.name(),
    })
}

async fn health(State(state): State<Arc<AppState>>) -> ApiResult {
    let served = state.served()?;
    Ok(Json(health_json(&served)))
}

async fn reload(State(state): State<Arc<AppState>>) -> ApiResult {
    let st = state.clone();
    blocking(&state, move || st.reload().map(|s| health_json(&s))).await
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/graph/entity/{id}", get(entity))
        .route("/v1/chunks/{id}", get(chunk))
        .route("/v1/eval", post(eval))
        .route("/v1/health", get(health))
        .route("/v1/reload", post(reload))
        .fallback(fallback)
        .with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
