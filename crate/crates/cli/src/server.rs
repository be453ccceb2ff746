//! JSON-over-HTTP service around a [`MemoryStore`].
//!
//! Writes (clip ingestion, equivalence reinforcement) go through the store's
//! single writer; reads work on the last committed graph.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use mnemo_core::control::{run_control, ControlConfig, Plan, ScriptedPolicy, Trajectory};
use mnemo_core::embedding::MockEmbedder;
use mnemo_core::graph::{self, dump, MemoryGraph, NodeId};
use mnemo_core::harness::reinforce_pairs;
use mnemo_core::memorize::{ingest_clip, ClipInput, FixtureGenerator, IngestConfig, IngestReport, MemoryStore};
use mnemo_core::retrieval::search_clip;
use mnemo_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub struct AppState {
    pub store: MemoryStore,
    pub embedder: MockEmbedder,
    pub ingest: IngestConfig,
    pub control: ControlConfig,
    /// Graph file rewritten after every committed write.
    pub persist: Option<PathBuf>,
}

impl AppState {
    pub fn new(graph: MemoryGraph, persist: Option<PathBuf>) -> Self {
        AppState {
            store: MemoryStore::new(graph),
            embedder: MockEmbedder::default(),
            ingest: IngestConfig::default(),
            control: ControlConfig::default(),
            persist,
        }
    }

    fn write<T>(&self, f: impl FnOnce(&mut MemoryGraph) -> mnemo_core::Result<T>) -> mnemo_core::Result<T> {
        self.store.write(|g| {
            let out = f(g)?;
            if let Some(path) = &self.persist {
                graph::save_to_path(g, path)?;
            }
            Ok(out)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub max_rounds: Option<usize>,
    /// Search plan for the scripted policy; defaults to searching the question.
    #[serde(default)]
    pub plan: Option<Plan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: Option<String>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRequest {
    /// (face, voice) pairs, each reinforced once.
    pub pairs: Vec<(NodeId, NodeId)>,
}

/// Body of every non-2xx reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// Stable kind tag and bare message for an engine error.
pub fn error_parts(e: &Error) -> (&'static str, String) {
    match e {
        Error::InvalidArgument(m) => ("invalid_argument", m.clone()),
        Error::Config(m) => ("config", m.clone()),
        Error::NotFound(m) => ("not_found", m.clone()),
        Error::Conflict(m) => ("conflict", m.clone()),
        Error::Format(m) => ("format", m.clone()),
        Error::Policy(m) => ("policy", m.clone()),
        Error::JudgeProtocol(m) => ("judge_protocol", m.clone()),
        Error::Transport(m) => ("transport", m.clone()),
        other => ("internal", other.to_string()),
    }
}

/// Inverse of [`error_parts`] for the kinds that round-trip.
pub fn error_from_parts(kind: &str, message: String) -> Error {
    match kind {
        "invalid_argument" => Error::InvalidArgument(message),
        "config" => Error::Config(message),
        "not_found" => Error::NotFound(message),
        "conflict" => Error::Conflict(message),
        "format" => Error::Format(message),
        "policy" => Error::Policy(message),
        "judge_protocol" => Error::JudgeProtocol(message),
        _ => Error::Transport(message),
    }
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(message: impl Into<String>, path: Option<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody { kind: "format".into(), message: message.into(), path },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::Format(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Policy(_) | Error::JudgeProtocol(_) | Error::Transport(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let (kind, message) = error_parts(&e);
        ApiError { status, body: ErrorBody { kind: kind.into(), message, path: None } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_request(e.inner().to_string(), Some(path))
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| {
        Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody { kind: "internal".into(), message: e.to_string(), path: None },
        })
    })
}

async fn post_clip(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<IngestReport> {
    let input: ClipInput = parse_body(&body)?;
    blocking(move || {
        let report = state.write(|g| ingest_clip(g, &input, &FixtureGenerator, &state.embedder, &state.ingest))?;
        Ok(Json(report))
    })
    .await
}

async fn post_ask(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<AskResponse> {
    let req: AskRequest = parse_body(&body)?;
    blocking(move || {
        let graph = state.store.snapshot();
        let mut config = state.control.clone();
        if let Some(h) = req.max_rounds {
            config.max_rounds = h;
        }
        let plan = req.plan.unwrap_or_else(|| Plan::generic(&req.question));
        let policy = ScriptedPolicy::new(plan).with_last_round_marker(config.prompts.last_round.clone());
        let t = run_control(&req.question, &graph, &state.embedder, &policy, &config).map_err(|e| e.error)?;
        Ok(Json(AskResponse { answer: t.final_answer.clone(), trajectory: t }))
    })
    .await
}

async fn post_equivalences(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Value> {
    let req: EquivalenceRequest = parse_body(&body)?;
    blocking(move || {
        state.write(|g| reinforce_pairs(g, &req.pairs))?;
        Ok(Json(json!({ "reinforced": req.pairs.len() })))
    })
    .await
}

async fn get_clip(State(state): State<Arc<AppState>>, Path(n): Path<String>) -> ApiResult<Value> {
    let n: u64 = n
        .parse()
        .map_err(|_| ApiError::bad_request(format!("clip index must be a non-negative integer, got {n:?}"), None))?;
    let graph = state.store.snapshot();
    let clip = graph.clip(n).ok_or_else(|| Error::NotFound(format!("clip {n}")))?;
    let text = |ids: &[NodeId]| -> Vec<String> {
        ids.iter().filter_map(|id| graph.node(*id).and_then(|x| x.text()).map(str::to_string)).collect()
    };
    Ok(Json(json!({
        "clip": clip.render_name(),
        "clip_index": n,
        "episodic": text(&clip.episodic),
        "semantic": text(&clip.semantic),
    })))
}

async fn get_characters(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(dump::characters_json(&state.store.snapshot()))
}

async fn get_search(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<mnemo_core::retrieval::ClipSearchResult> {
    let q = params.get("q").ok_or_else(|| ApiError::bad_request("missing query parameter", Some("q".into())))?;
    let retrieval = &state.control.retrieval;
    let k = match params.get("k") {
        Some(k) => k.parse().map_err(|_| ApiError::bad_request(format!("invalid k {k:?}"), Some("k".into())))?,
        None => retrieval.clip_k,
    };
    let t = match params.get("t") {
        Some(t) => t.parse().map_err(|_| ApiError::bad_request(format!("invalid t {t:?}"), Some("t".into())))?,
        None => retrieval.clip_threshold,
    };
    let graph = state.store.snapshot();
    Ok(Json(search_clip(&graph, &state.embedder, q, k, t)?))
}

async fn get_health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let g = state.store.snapshot();
    Json(json!({ "status": "ok", "clips": g.clip_count(), "nodes": g.node_count() }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/clips", post(post_clip))
        .route("/clips/{n}", get(get_clip))
        .route("/ask", post(post_ask))
        .route("/equivalences", post(post_equivalences))
        .route("/characters", get(get_characters))
        .route("/search", get(get_search))
        .route("/health", get(get_health))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(graph: MemoryGraph, persist: Option<PathBuf>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(AppState::new(graph, persist)))).await?;
    Ok(())
}

/// A server on its own thread and runtime, stopped on drop.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    /// Binds an ephemeral port on 127.0.0.1.
    pub fn start(graph: MemoryGraph, persist: Option<PathBuf>) -> anyhow::Result<Self> {
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(Arc::new(AppState::new(graph, persist)));
        let rt = tokio::runtime::Runtime::new()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => {
                        warn!("listener setup failed: {e}");
                        return;
                    }
                };
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                    warn!("server stopped: {e}");
                }
            });
        });
        Ok(BackgroundServer { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
