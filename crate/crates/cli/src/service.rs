//! HTTP front end: `POST /v1/respond`, `GET /v1/stats`, `GET /v1/healthz`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dialogue_cache::{CacheEngine, DialogueHistory, EngineConfig, EngineResponse, Error, RespondOptions, VectorStore};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::components::{self, ModelEndpoints, ReferenceSettings};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Loaded at startup when it exists; otherwise the service starts empty.
    pub snapshot: PathBuf,
    #[serde(default)]
    pub snapshot_on_exit: bool,
    /// Keep the store fixed: misses are answered but not cached.
    #[serde(default)]
    pub frozen_cache: bool,
    #[serde(default = "default_engine")]
    pub engine: EngineConfig,
    #[serde(default)]
    pub endpoints: ModelEndpoints,
    /// Encoder used for a fresh store when no encoder endpoint is set.
    #[serde(default)]
    pub reference: ReferenceSettings,
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_owned()
}

fn default_engine() -> EngineConfig {
    EngineConfig::with_ids("", "")
}

/// Opens (or creates) the store and wires the engine described by `config`.
pub fn build_engine(config: &ServiceConfig) -> Result<CacheEngine> {
    let store = if config.snapshot.exists() {
        VectorStore::load_snapshot(&config.snapshot)
            .with_context(|| format!("loading snapshot {}", config.snapshot.display()))?
    } else {
        let enc = components::encoder_for_new_store(&config.endpoints, config.reference)?;
        let d = enc.descriptor();
        VectorStore::new(d.dim(), config.engine.lambda(), d.id())?
    };
    components::engine_for_store(Arc::new(store), config.engine.clone(), &config.endpoints)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RespondRequest {
    history: Vec<String>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub store_size: usize,
    pub total_requests: u64,
    pub hit_count: u64,
    pub miss_count: u64,
    /// Hits over all answered requests since start.
    pub hit_rate_running: f64,
    /// `per_rank_counts[r - 1]` hits served by candidate `r`.
    pub per_rank_counts: Vec<u64>,
    pub uptime_secs: f64,
}

#[derive(Debug, Default)]
struct Counters {
    total: u64,
    misses: u64,
    per_rank: Vec<u64>,
}

pub struct AppState {
    engine: CacheEngine,
    append_on_miss: bool,
    counters: Mutex<Counters>,
    started: Instant,
}

impl AppState {
    pub fn new(engine: CacheEngine, frozen_cache: bool) -> Self {
        AppState {
            engine,
            append_on_miss: !frozen_cache,
            counters: Mutex::new(Counters::default()),
            started: Instant::now(),
        }
    }

    pub fn engine(&self) -> &CacheEngine {
        &self.engine
    }

    fn record(&self, r: &EngineResponse) {
        let mut c = self.counters.lock();
        c.total += 1;
        match r.candidate_rank {
            Some(rank) => {
                if c.per_rank.len() < rank {
                    c.per_rank.resize(rank, 0);
                }
                c.per_rank[rank - 1] += 1;
            }
            None => c.misses += 1,
        }
    }

    pub fn stats(&self) -> Stats {
        let c = self.counters.lock();
        let hits = c.total - c.misses;
        Stats {
            store_size: self.engine.store().len(),
            total_requests: c.total,
            hit_count: hits,
            miss_count: c.misses,
            hit_rate_running: if c.total == 0 {
                0.0
            } else {
                hits as f64 / c.total as f64
            },
            per_rank_counts: c.per_rank.clone(),
            uptime_secs: self.started.elapsed().as_secs_f64(),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/respond", post(respond))
        .route("/v1/stats", get(stats))
        .route("/v1/healthz", get(healthz))
        .with_state(state)
}

fn error_response(status: StatusCode, kind: &str, message: impl ToString) -> Response {
    let body = serde_json::json!({ "error": kind, "message": message.to_string() });
    (status, Json(body)).into_response()
}

fn engine_error(e: &Error) -> Response {
    let status = if e.is_unavailable() {
        StatusCode::SERVICE_UNAVAILABLE
    } else if matches!(e, Error::InvalidArgument(_)) {
        StatusCode::BAD_REQUEST
    } else {
        StatusCode::INTERNAL_SERVER_ERROR
    };
    if status.is_server_error() {
        tracing::warn!(kind = e.kind(), error = %e, "respond failed");
    }
    error_response(status, e.kind(), e)
}

async fn respond(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: RespondRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "malformed_body", e),
    };
    let history = match DialogueHistory::from_texts(&req.history) {
        Ok(h) => h,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "malformed_body", e),
    };
    let options = RespondOptions {
        k: req.k,
        threshold: req.threshold,
        append_on_miss: state.append_on_miss,
    };
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || worker.engine.respond_with(&history, &options)).await;
    match result {
        Ok(Ok(r)) => {
            state.record(&r);
            Json(r).into_response()
        }
        Ok(Err(e)) => engine_error(&e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e),
    }
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<Stats> {
    Json(state.stats())
}

async fn healthz() -> &'static str {
    "ok"
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

pub async fn serve(config: ServiceConfig) -> Result<()> {
    let engine = {
        let config = config.clone();
        // Remote handshakes block.
        tokio::task::spawn_blocking(move || build_engine(&config)).await??
    };
    tracing::info!(
        store_size = engine.store().len(),
        encoder = engine.encoder().descriptor().id(),
        evaluator = engine.evaluator().descriptor().id(),
        hermetic = config.endpoints.is_hermetic(),
        "engine ready"
    );
    let state = Arc::new(AppState::new(engine, config.frozen_cache));
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    println!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    if config.snapshot_on_exit {
        state
            .engine
            .store()
            .save_snapshot(&config.snapshot)
            .with_context(|| format!("writing snapshot {}", config.snapshot.display()))?;
        tracing::info!(path = %config.snapshot.display(), entries = state.engine.store().len(), "snapshot saved");
    }
    Ok(())
}
