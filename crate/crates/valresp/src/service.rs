//! HTTP session service over [`decide_turn`].

use std::collections::HashMap;
use std::future::IntoFuture;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};
use valresp_core::pipeline::{decide_turn, Clock, Models, PipelineError, TurnDecision};

use crate::error::AppError;

pub const ENV_BIND: &str = "VALRESP_BIND";
pub const ENV_RUN_DIR: &str = "VALRESP_RUN_DIR";
pub const ENV_TIMING_CHECKPOINT: &str = "VALRESP_TIMING_CHECKPOINT";
pub const ENV_EMOTION_CHECKPOINT: &str = "VALRESP_EMOTION_CHECKPOINT";
pub const ENV_VOCAB: &str = "VALRESP_VOCAB";
pub const ENV_TTL_SECS: &str = "VALRESP_SESSION_TTL_SECS";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub vocab: PathBuf,
    pub timing_checkpoint: PathBuf,
    pub emotion_checkpoint: PathBuf,
    pub ttl: Duration,
    pub max_message_bytes: usize,
    /// Allowed browser origins; `*` allows any.
    pub cors_origins: Vec<String>,
    /// Append-only log of every turn, when set.
    pub persist: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn for_run_dir(dir: &std::path::Path) -> ServiceConfig {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            vocab: dir.join(crate::experiment::VOCAB_FILE),
            timing_checkpoint: dir.join(crate::experiment::TIMING_CHECKPOINT),
            emotion_checkpoint: dir.join(crate::experiment::EMOTION_CHECKPOINT),
            ttl: Duration::from_secs(30 * 60),
            max_message_bytes: 4096,
            cors_origins: vec!["http://localhost:5173".into()],
            persist: None,
        }
    }

    /// Applies `VALRESP_*` environment overrides.
    pub fn with_env(mut self, get: impl Fn(&str) -> Option<String>) -> Result<ServiceConfig, AppError> {
        if let Some(b) = get(ENV_BIND) {
            self.bind = b.parse().map_err(|e| AppError::Config(format!("{ENV_BIND}={b}: {e}")))?;
        }
        if let Some(d) = get(ENV_RUN_DIR) {
            let fresh = ServiceConfig::for_run_dir(std::path::Path::new(&d));
            (self.vocab, self.timing_checkpoint, self.emotion_checkpoint) =
                (fresh.vocab, fresh.timing_checkpoint, fresh.emotion_checkpoint);
        }
        if let Some(p) = get(ENV_VOCAB) {
            self.vocab = p.into();
        }
        if let Some(p) = get(ENV_TIMING_CHECKPOINT) {
            self.timing_checkpoint = p.into();
        }
        if let Some(p) = get(ENV_EMOTION_CHECKPOINT) {
            self.emotion_checkpoint = p.into();
        }
        if let Some(t) = get(ENV_TTL_SECS) {
            let secs: u64 = t.parse().map_err(|e| AppError::Config(format!("{ENV_TTL_SECS}={t}: {e}")))?;
            self.ttl = Duration::from_secs(secs);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnView {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub turns: Vec<TurnView>,
    pub decisions: Vec<TurnDecision>,
}

struct Session {
    turns: Vec<TurnView>,
    decisions: Vec<TurnDecision>,
    last_active: Instant,
}

struct Ready {
    models: Arc<Models>,
    checkpoint_ids: Vec<String>,
}

/// Shared service state: the loaded models and the live sessions.
pub struct AppState {
    cfg: ServiceConfig,
    ready: OnceLock<Ready>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    persist: Option<Mutex<std::fs::File>>,
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Result<Arc<AppState>, AppError> {
        let persist = match &cfg.persist {
            Some(p) => Some(Mutex::new(
                std::fs::OpenOptions::new().create(true).append(true).open(p).map_err(|e| AppError::io(p, e))?,
            )),
            None => None,
        };
        Ok(Arc::new(AppState { cfg, ready: OnceLock::new(), sessions: Mutex::default(), persist }))
    }

    /// Marks the service ready. Later calls are ignored.
    pub fn install(&self, models: Models, checkpoint_ids: Vec<String>) {
        let _ = self.ready.set(Ready { models: Arc::new(models), checkpoint_ids });
    }

    pub fn is_ready(&self) -> bool {
        self.ready.get().is_some()
    }

    fn session(&self, id: &str) -> Option<Arc<tokio::sync::Mutex<Session>>> {
        self.sessions.lock().expect("session map").get(id).cloned()
    }

    /// Drops sessions idle for longer than the TTL.
    pub fn sweep(&self) -> usize {
        let ttl = self.cfg.ttl;
        let mut map = self.sessions.lock().expect("session map");
        let before = map.len();
        map.retain(|_, s| s.try_lock().map_or(true, |s| s.last_active.elapsed() <= ttl));
        before - map.len()
    }

    fn log_turn(&self, session: &str, text: &str, decision: &TurnDecision) {
        if let Some(f) = &self.persist {
            let line = json!({ "session_id": session, "text": text, "decision": decision });
            let mut f = f.lock().expect("persist file");
            if let Err(e) = std::io::Write::write_all(&mut *f, format!("{line}\n").as_bytes()) {
                tracing::warn!(error = %e, "could not persist turn");
            }
        }
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotReady,
    NotFound,
    BadRequest(String),
    Internal { stage: String, message: String },
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotReady => (StatusCode::SERVICE_UNAVAILABLE, json!({ "error": "models are not loaded yet" })),
            ApiError::NotFound => (StatusCode::NOT_FOUND, json!({ "error": "unknown session" })),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": m })),
            ApiError::Internal { stage, message } => {
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": message, "stage": stage }))
            }
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    text: String,
}

fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    if !state.is_ready() {
        return Err(ApiError::NotReady);
    }
    let id = new_session_id();
    let session = Session { turns: Vec::new(), decisions: Vec::new(), last_active: Instant::now() };
    state.sessions.lock().expect("session map").insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok(Json(json!({ "session_id": id })))
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<MessageBody>, JsonRejection>,
) -> Result<Json<TurnDecision>, ApiError> {
    let ready = state.ready.get().ok_or(ApiError::NotReady)?;
    let handle = state.session(&id).ok_or(ApiError::NotFound)?;
    let Json(body) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    if body.text.len() > state.cfg.max_message_bytes {
        return Err(ApiError::BadRequest(format!(
            "message of {} bytes exceeds the {}-byte limit",
            body.text.len(),
            state.cfg.max_message_bytes
        )));
    }
    if body.text.trim().is_empty() {
        return Err(ApiError::BadRequest("message is empty".into()));
    }

    let mut session = handle.lock().await;
    if session.last_active.elapsed() > state.cfg.ttl {
        state.sessions.lock().expect("session map").remove(&id);
        return Err(ApiError::NotFound);
    }
    let history: Vec<String> = session.turns.iter().map(|t| t.text.clone()).collect();
    let models = Arc::clone(&ready.models);
    let text = body.text.clone();
    let decision = tokio::task::spawn_blocking(move || {
        let refs: Vec<&str> = history.iter().map(String::as_str).collect();
        decide_turn(&models, &refs, &text, &WallClock(Instant::now()))
    })
    .await
    .map_err(|e| ApiError::Internal { stage: "scheduler".into(), message: e.to_string() })?;
    let decision = match decision {
        Ok(d) => d,
        Err(PipelineError::EmptyInput) => {
            return Err(ApiError::BadRequest("message is empty after normalization".into()))
        }
        Err(PipelineError::Model { stage, source }) => {
            return Err(ApiError::Internal { stage: stage.into(), message: source.to_string() })
        }
        Err(e) => return Err(ApiError::Internal { stage: "pipeline".into(), message: e.to_string() }),
    };
    session.turns.push(TurnView { role: Role::User, text: body.text.clone() });
    if let Some(r) = &decision.response {
        session.turns.push(TurnView { role: Role::System, text: r.clone() });
    }
    session.decisions.push(decision.clone());
    session.last_active = Instant::now();
    state.log_turn(&id, &body.text, &decision);
    Ok(Json(decision))
}

async fn get_history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<History>, ApiError> {
    let handle = state.session(&id).ok_or(ApiError::NotFound)?;
    let session = handle.lock().await;
    if session.last_active.elapsed() > state.cfg.ttl {
        return Err(ApiError::NotFound);
    }
    Ok(Json(History { turns: session.turns.clone(), decisions: session.decisions.clone() }))
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let ids = state.ready.get().map(|r| r.checkpoint_ids.clone()).unwrap_or_default();
    Json(json!({ "ready": state.is_ready(), "checkpoint_ids": ids }))
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        layer.allow_origin(AllowOrigin::any())
    } else {
        layer.allow_origin(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect::<Vec<_>>())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    // Room for JSON escaping around a maximal message.
    let body_limit = state.cfg.max_message_bytes * 6 + 1024;
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/message", post(post_message))
        .route("/api/session/{id}/history", get(get_history))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(cors(&state.cfg.cors_origins))
        .with_state(state)
}

/// `<name>-<first 12 hex digits of the SHA-256 of the file>`.
pub fn checkpoint_id(name: &str, bytes: &[u8]) -> String {
    let digest = hex::encode(Sha256::digest(bytes));
    format!("{name}-{}", &digest[..12])
}

/// Periodically expires idle sessions.
pub fn spawn_sweeper(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period = (state.cfg.ttl / 2).max(Duration::from_millis(100));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = state.sweep();
            if n > 0 {
                tracing::debug!(expired = n, "swept idle sessions");
            }
        }
    })
}

/// Loads the vocabulary and both checkpoints named by `cfg`.
pub fn load_models(
    cfg: &ServiceConfig,
    lexicon: valresp_core::responder::EmotionLexicon,
    settings: valresp_core::pipeline::PipelineSettings,
) -> Result<(Models, Vec<String>), AppError> {
    let vocab = crate::io::load_vocabulary(&cfg.vocab)?;
    let mut ids = Vec::new();
    let mut load = |name: &str, path: &std::path::Path| {
        let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
        ids.push(checkpoint_id(name, &bytes));
        crate::io::load_model(path, &vocab)
    };
    let timing = load("timing", &cfg.timing_checkpoint)?;
    let emotion = load("emotion", &cfg.emotion_checkpoint)?;
    let models = Models::new(vocab, timing, emotion, lexicon, settings)
        .map_err(|e| AppError::Config(format!("checkpoints do not fit together: {e}")))?;
    Ok((models, ids))
}

/// Binds, loads the models in the background, and serves until Ctrl-C.
pub async fn serve(
    cfg: ServiceConfig,
    lexicon: valresp_core::responder::EmotionLexicon,
    settings: valresp_core::pipeline::PipelineSettings,
) -> Result<(), AppError> {
    let state = AppState::new(cfg.clone())?;
    let listener = tokio::net::TcpListener::bind(cfg.bind).await.map_err(|e| AppError::runtime("bind", e))?;
    tracing::info!(addr = %cfg.bind, "listening");
    let loader = {
        let state = Arc::clone(&state);
        tokio::task::spawn_blocking(move || -> Result<(), AppError> {
            let (models, ids) = load_models(&state.cfg, lexicon, settings)?;
            tracing::info!(checkpoints = ?ids, "models loaded");
            state.install(models, ids);
            Ok(())
        })
    };
    let sweeper = spawn_sweeper(Arc::clone(&state));
    let server = tokio::spawn(
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .into_future(),
    );
    loader.await.map_err(|e| AppError::runtime("model loading", e))??;
    server.await.map_err(|e| AppError::runtime("serve", e))?.map_err(|e| AppError::runtime("serve", e))?;
    sweeper.abort();
    Ok(())
}
