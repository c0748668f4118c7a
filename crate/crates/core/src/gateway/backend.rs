//! Backend protocol: `POST <endpoint>` with `{"query": "..."}`, answered by
//! `{"text": "..."}`.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::ranking::stub_response;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendRequest {
    pub query: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unavailable(String),
    #[error("backend returned status {0}")]
    Status(u16),
    #[error("backend response malformed: {0}")]
    Protocol(String),
}

#[async_trait]
pub trait BackendClient: Send + Sync {
    async fn generate(&self, endpoint: &str, query: &str) -> Result<String, BackendError>;
}

/// HTTP implementation of [`BackendClient`].
#[derive(Debug, Clone, Default)]
pub struct HttpBackend {
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

#[async_trait]
impl BackendClient for HttpBackend {
    async fn generate(&self, endpoint: &str, query: &str) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(endpoint)
            .json(&BackendRequest {
                query: query.to_owned(),
            })
            .send()
            .await
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(BackendError::Status(resp.status().as_u16()));
        }
        let body: BackendResponse = resp
            .json()
            .await
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(body.text)
    }
}

#[derive(Clone)]
struct StubState {
    model_id: Arc<str>,
    delay: Duration,
    hits: Arc<AtomicU64>,
}

async fn stub_generate(
    State(state): State<StubState>,
    Json(req): Json<BackendRequest>,
) -> Json<BackendResponse> {
    state.hits.fetch_add(1, Ordering::SeqCst);
    if !state.delay.is_zero() {
        tokio::time::sleep(state.delay).await;
    }
    Json(BackendResponse {
        text: stub_response(&state.model_id, &req.query),
    })
}

/// A backend that answers `"<model_id>:<query hash>"` after an optional
/// delay and counts every call it receives.
pub struct StubBackend {
    addr: SocketAddr,
    hits: Arc<AtomicU64>,
    shutdown: Option<oneshot::Sender<()>>,
    join: JoinHandle<()>,
}

impl StubBackend {
    pub async fn spawn(model_id: &str, listen: SocketAddr, delay: Duration) -> std::io::Result<Self> {
        let listener = TcpListener::bind(listen).await?;
        let addr = listener.local_addr()?;
        let hits = Arc::new(AtomicU64::new(0));
        let state = StubState {
            model_id: model_id.into(),
            delay,
            hits: hits.clone(),
        };
        let app = Router::new()
            .route("/healthz", get(|| async { StatusCode::OK }))
            .fallback(post(stub_generate))
            .with_state(state);
        let (tx, rx) = oneshot::channel::<()>();
        let join = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            hits,
            shutdown: Some(tx),
            join,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// URL to configure as this backend's endpoint.
    pub fn endpoint(&self) -> String {
        format!("http://{}/generate", self.addr)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    /// Stops accepting connections and waits for in-flight calls.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.join).await;
    }

    /// Runs until the task ends.
    pub async fn wait(mut self) {
        let _ = (&mut self.join).await;
    }
}
