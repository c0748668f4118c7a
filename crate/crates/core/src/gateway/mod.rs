//! HTTP routing service.
//!
//! Endpoints:
//!
//! | method | path            | body                    | answer |
//! |--------|-----------------|-------------------------|--------|
//! | POST   | `/route`        | `{"query"}`             | `{"model_id","distribution","request_id"}` |
//! | POST   | `/generate`     | `{"query"}`             | `{"model_id","text","request_id","latency_ms", ...}` |
//! | GET    | `/healthz`      |                         | `{"status":"ok","models":K}` |
//! | GET    | `/metrics`      |                         | text exposition |
//! | POST   | `/admin/reload` | `{"checkpoint_path"}`   | `{"status":"reloaded","models":K}` |
//!
//! The router snapshot is immutable and swapped atomically on reload; a
//! request keeps the snapshot it started with. Requests beyond
//! `max_in_flight` are refused with 503 rather than queued.

mod backend;
mod config;
mod metrics;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, OwnedSemaphorePermit, Semaphore};
use tokio::task::JoinHandle;
use tracing::{info, warn};

pub use backend::{BackendClient, BackendError, BackendRequest, BackendResponse, HttpBackend, StubBackend};
pub use config::GatewayConfig;
pub use metrics::{percentile, Metrics, MetricsSnapshot};

use crate::checkpoint::{load_checkpoint, CheckpointError};
use crate::hash::fnv1a64;
use crate::router::RouterModel;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("cannot load checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot open routing log {path}: {source}")]
    Log {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One line of the routing log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub request_id: String,
    pub query_hash: String,
    pub model_id: String,
    pub served_by: Option<String>,
    pub distribution: Vec<f64>,
    pub latency_ms: f64,
    pub backend_status: String,
    pub failover: bool,
}

struct Snapshot {
    model: RouterModel,
    endpoints: Vec<String>,
}

struct AppState {
    config: GatewayConfig,
    snapshot: RwLock<Arc<Snapshot>>,
    backend: Arc<dyn BackendClient>,
    gate: Arc<Semaphore>,
    metrics: Metrics,
    log: Option<Mutex<File>>,
}

impl AppState {
    fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    #[allow(clippy::result_large_err)]
    fn admit(&self) -> Result<InFlight<'_>, Response> {
        match self.gate.clone().try_acquire_owned() {
            Ok(permit) => {
                self.metrics.enter();
                Ok(InFlight {
                    _permit: permit,
                    metrics: &self.metrics,
                })
            }
            Err(_) => {
                self.metrics.record_rejected();
                Err(error_response(StatusCode::SERVICE_UNAVAILABLE, "over capacity", None))
            }
        }
    }

    fn append_log(&self, record: &RouteRecord) {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(record).expect("record serializes");
            line.push('\n');
            let mut file = log.lock().expect("log lock");
            if let Err(e) = file.write_all(line.as_bytes()) {
                warn!("routing log write failed: {e}");
            }
        }
    }
}

struct InFlight<'a> {
    _permit: OwnedSemaphorePermit,
    metrics: &'a Metrics,
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.metrics.leave();
    }
}

fn load_snapshot(config: &GatewayConfig, path: &Path) -> Result<Snapshot, GatewayError> {
    let model = load_checkpoint(path)?;
    let endpoints = config.resolve_endpoints(&model)?;
    Ok(Snapshot { model, endpoints })
}

fn error_response(status: StatusCode, message: &str, model_id: Option<&str>) -> Response {
    let mut body = json!({ "error": message });
    if let Some(m) = model_id {
        body["model_id"] = json!(m);
    }
    (status, Json(body)).into_response()
}

#[derive(Deserialize)]
struct QueryBody {
    query: String,
}

#[derive(Deserialize)]
struct ReloadBody {
    checkpoint_path: PathBuf,
}

fn request_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

fn query_hash(query: &str) -> String {
    format!("{:016x}", fnv1a64(query.as_bytes()))
}

#[allow(clippy::result_large_err)]
fn check_query(state: &AppState, query: &str) -> Result<(), Response> {
    if query.trim().is_empty() {
        state.metrics.record_bad_request();
        return Err(error_response(StatusCode::BAD_REQUEST, "empty query", None));
    }
    Ok(())
}

async fn handle_route(State(state): State<Arc<AppState>>, Json(body): Json<QueryBody>) -> Response {
    let _guard = match state.admit() {
        Ok(g) => g,
        Err(r) => return r,
    };
    if let Err(r) = check_query(&state, &body.query) {
        return r;
    }
    let snapshot = state.current();
    let route = snapshot.model.route(&body.query);
    state.metrics.record_decision();
    Json(json!({
        "model_id": route.model_id,
        "distribution": route.distribution.probs(),
        "request_id": request_id(),
    }))
    .into_response()
}

enum CallOutcome {
    Ok(String),
    Failed(BackendError),
    TimedOut,
}

async fn call_backend(state: &AppState, endpoint: &str, query: &str) -> CallOutcome {
    state.metrics.record_backend_call();
    let timeout = Duration::from_millis(state.config.timeout_ms);
    match tokio::time::timeout(timeout, state.backend.generate(endpoint, query)).await {
        Ok(Ok(text)) => CallOutcome::Ok(text),
        Ok(Err(e)) => {
            state.metrics.record_backend_error();
            CallOutcome::Failed(e)
        }
        Err(_) => {
            state.metrics.record_timeout();
            CallOutcome::TimedOut
        }
    }
}

async fn handle_generate(State(state): State<Arc<AppState>>, Json(body): Json<QueryBody>) -> Response {
    let _guard = match state.admit() {
        Ok(g) => g,
        Err(r) => return r,
    };
    if let Err(r) = check_query(&state, &body.query) {
        return r;
    }
    let started = Instant::now();
    let request_id = request_id();
    let snapshot = state.current();
    let route = snapshot.model.route(&body.query);
    state.metrics.record_routed(&route.model_id);

    let mut served_by = route.model_id.clone();
    let mut failover = false;
    let mut outcome = call_backend(&state, &snapshot.endpoints[route.model_index], &body.query).await;
    if let CallOutcome::Failed(err) = &outcome {
        let fallback = state
            .config
            .fallback_model
            .as_ref()
            .filter(|f| **f != route.model_id)
            .and_then(|f| {
                let endpoint = snapshot
                    .model
                    .registry()
                    .index_of(f)
                    .map(|i| snapshot.endpoints[i].clone())
                    .or_else(|| state.config.endpoints().get(f).cloned())?;
                Some((f, endpoint))
            });
        if let Some((f, endpoint)) = fallback {
            warn!(model = %route.model_id, fallback = %f, "backend failed ({err}), retrying on fallback");
            state.metrics.record_failover();
            failover = true;
            served_by = f.clone();
            outcome = call_backend(&state, &endpoint, &body.query).await;
        }
    }

    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    state.metrics.record_latency(latency_ms);
    let (status, text) = match outcome {
        CallOutcome::Ok(text) => ("ok", Some(text)),
        CallOutcome::Failed(_) => ("error", None),
        CallOutcome::TimedOut => ("timeout", None),
    };
    state.append_log(&RouteRecord {
        request_id: request_id.clone(),
        query_hash: query_hash(&body.query),
        model_id: route.model_id.clone(),
        served_by: text.as_ref().map(|_| served_by.clone()),
        distribution: route.distribution.probs().to_vec(),
        latency_ms,
        backend_status: status.to_owned(),
        failover,
    });
    match (status, text) {
        ("ok", Some(text)) => Json(json!({
            "model_id": served_by,
            "routed_model_id": route.model_id,
            "text": text,
            "request_id": request_id,
            "latency_ms": latency_ms,
            "failover": failover,
        }))
        .into_response(),
        ("timeout", _) => error_response(StatusCode::GATEWAY_TIMEOUT, "backend timed out", Some(&served_by)),
        _ => error_response(StatusCode::BAD_GATEWAY, "backend error", Some(&route.model_id)),
    }
}

async fn handle_healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "models": state.current().model.num_models() }))
}

async fn handle_metrics(State(state): State<Arc<AppState>>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4")],
        state.metrics.snapshot().to_text(),
    )
        .into_response()
}

async fn handle_reload(State(state): State<Arc<AppState>>, Json(body): Json<ReloadBody>) -> Response {
    let path = body.checkpoint_path;
    let loaded = tokio::task::spawn_blocking({
        let config = state.config.clone();
        let path = path.clone();
        move || load_snapshot(&config, &path)
    })
    .await
    .expect("reload task");
    match loaded {
        Ok(snapshot) => {
            let k = snapshot.model.num_models();
            *state.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
            info!(path = %path.display(), "checkpoint reloaded");
            Json(json!({ "status": "reloaded", "models": k })).into_response()
        }
        Err(e) => error_response(StatusCode::BAD_REQUEST, &e.to_string(), None),
    }
}

/// Handle to a running gateway.
pub struct GatewayHandle {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    join: JoinHandle<std::io::Result<()>>,
}

impl GatewayHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn metrics_snapshot(&self) -> MetricsSnapshot {
        self.state.metrics.snapshot()
    }

    /// Stops accepting new connections, lets in-flight requests finish, then
    /// returns.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        (&mut self.join).await.expect("server task")
    }

    /// Starts a graceful shutdown without waiting for it to complete.
    pub fn begin_shutdown(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }

    /// Waits for the server task to finish.
    pub async fn wait(mut self) -> std::io::Result<()> {
        (&mut self.join).await.expect("server task")
    }
}

/// Starts the gateway with the HTTP backend client.
pub async fn serve(config: GatewayConfig) -> Result<GatewayHandle, GatewayError> {
    serve_with_backend(config, Arc::new(HttpBackend::new())).await
}

/// Starts the gateway with a custom backend client. Fails before binding if
/// the config is invalid or the checkpoint does not load.
pub async fn serve_with_backend(
    config: GatewayConfig,
    backend: Arc<dyn BackendClient>,
) -> Result<GatewayHandle, GatewayError> {
    config.validate()?;
    let snapshot = load_snapshot(&config, &config.checkpoint)?;
    let log = match &config.routing_log {
        Some(path) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| GatewayError::Log {
                    path: path.clone(),
                    source,
                })?,
        )),
        None => None,
    };
    let mut model_ids: Vec<String> = config.models.iter().map(|m| m.model_id.clone()).collect();
    model_ids.extend(snapshot.model.registry().ids().map(str::to_owned));
    let listener = TcpListener::bind(config.listen)
        .await
        .map_err(|source| GatewayError::Bind {
            addr: config.listen,
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| GatewayError::Bind {
        addr: config.listen,
        source,
    })?;
    let state = Arc::new(AppState {
        gate: Arc::new(Semaphore::new(config.max_in_flight)),
        metrics: Metrics::new(model_ids),
        snapshot: RwLock::new(Arc::new(snapshot)),
        config,
        backend,
        log,
    });
    let app = Router::new()
        .route("/route", post(handle_route))
        .route("/generate", post(handle_generate))
        .route("/healthz", get(handle_healthz))
        .route("/metrics", get(handle_metrics))
        .route("/admin/reload", post(handle_reload))
        .with_state(state.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let join = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    info!(%addr, "gateway listening");
    Ok(GatewayHandle {
        addr,
        state,
        shutdown: Some(tx),
        join,
    })
}
