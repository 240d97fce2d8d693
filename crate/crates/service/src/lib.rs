//! HTTP API for composing poems with next-verse suggestions.
//!
//! Models, indexes and the sentiment classifier are loaded once and shared
//! read-only; session writes go through a mutex and a version token.

pub mod session;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use nextverse::retriever::Suggester;
use nextverse::sentiment::SentimentModel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use session::{Origin, Session, SessionStore, SessionVerse, StoreError};

pub const DEFAULT_PAGE_CAP: usize = 50;

pub struct AppState {
    models: BTreeMap<String, Suggester>,
    sentiment: SentimentModel,
    sessions: Mutex<SessionStore>,
    page_cap: usize,
}

impl AppState {
    /// Replays existing session logs from `sessions_dir`.
    pub fn new(
        models: BTreeMap<String, Suggester>,
        sentiment: SentimentModel,
        sessions_dir: &Path,
        page_cap: usize,
    ) -> Result<Self, StoreError> {
        Ok(AppState {
            models,
            sentiment,
            sessions: Mutex::new(SessionStore::open(sessions_dir)?),
            page_cap: page_cap.max(1),
        })
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

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "session_not_found",
            format!("no session {id}"),
        )
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::internal(e.to_string())
    }
}

/// Parses a JSON body, reporting failures as `invalid_payload`. An empty body
/// is read as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(raw).map_err(|e| ApiError::bad_request("invalid_payload", e.to_string()))
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/verses", post(add_verse))
        .route("/sessions/{id}/suggest", post(suggest))
        .with_state(state)
}

async fn health(State(state): State<Shared>) -> Json<serde_json::Value> {
    let sessions = state.sessions.lock().expect("session lock").len();
    Json(json!({
        "status": "ok",
        "models": state.models.keys().collect::<Vec<_>>(),
        "sessions": sessions,
    }))
}

#[derive(Serialize)]
struct ModelInfo<'a> {
    tag: &'a str,
    checkpoint_hash: &'a str,
    pool_size: usize,
    embed_dim: usize,
}

async fn models(State(state): State<Shared>) -> Json<serde_json::Value> {
    let list: Vec<ModelInfo> = state
        .models
        .iter()
        .map(|(tag, s)| ModelInfo {
            tag,
            checkpoint_hash: &s.index().checkpoint_hash,
            pool_size: s.index().len(),
            embed_dim: s.index().dim,
        })
        .collect();
    Json(json!({ "models": list }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    model: Option<String>,
}

async fn create_session(State(state): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let model = match req.model {
        Some(m) => m,
        None => default_model(&state)
            .ok_or_else(|| ApiError::internal("no models loaded"))?
            .to_string(),
    };
    if !state.models.contains_key(&model) {
        return Err(ApiError::bad_request(
            "unknown_model",
            format!("model {model:?} is not loaded"),
        ));
    }
    let session = state
        .sessions
        .lock()
        .expect("session lock")
        .create(&model)?;
    info!("created session {} on {}", session.session_id, model);
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

fn default_model(state: &AppState) -> Option<&str> {
    if state.models.contains_key("augmented") {
        return Some("augmented");
    }
    state.models.keys().next().map(String::as_str)
}

async fn get_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Session>, ApiError> {
    let store = state.sessions.lock().expect("session lock");
    store
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(&id))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddVerse {
    text: String,
    #[serde(default = "default_origin")]
    origin: Origin,
    /// Session version the client last saw; a mismatch is a conflict.
    version: Option<u64>,
    #[serde(default)]
    replace_last: bool,
}

fn default_origin() -> Origin {
    Origin::User
}

async fn add_verse(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Session>, ApiError> {
    let mut store = state.sessions.lock().expect("session lock");
    let current = store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let req: AddVerse = parse_body(&body)?;
    let text = nextverse::text::normalize_whitespace(&req.text);
    if text.is_empty() {
        return Err(ApiError::bad_request(
            "invalid_payload",
            "verse text is empty",
        ));
    }
    if let Some(v) = req.version {
        if v != current.version {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "version_conflict",
                format!(
                    "session is at version {}, request was based on {v}",
                    current.version
                ),
            ));
        }
    }
    if req.replace_last && current.verses.is_empty() {
        return Err(ApiError::bad_request(
            "invalid_payload",
            "there is no verse to replace",
        ));
    }
    let verse = SessionVerse {
        text,
        origin: req.origin,
    };
    let session = store
        .add_verse(&id, verse, req.replace_last)?
        .ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(session))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuggestRequest {
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default)]
    offset: usize,
}

fn default_n() -> usize {
    10
}

#[derive(Serialize)]
struct SuggestedVerse {
    rank: usize,
    verse: String,
    score: f64,
    label: &'static str,
    sentiment: i8,
}

async fn suggest(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let req: SuggestRequest = parse_body(&body)?;
    let session = {
        let store = state.sessions.lock().expect("session lock");
        store
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(&id))?
    };
    if req.n == 0 {
        return Err(ApiError::bad_request(
            "invalid_payload",
            "n must be at least 1",
        ));
    }
    let input = session.last_verse().ok_or_else(|| {
        ApiError::bad_request("empty_session", "add a verse before asking for suggestions")
    })?;
    let suggester = state.models.get(&session.model).ok_or_else(|| {
        ApiError::internal(format!("model {} is no longer loaded", session.model))
    })?;
    let n = req.n.min(state.page_cap);
    let page = suggester
        .suggest_page(input, req.offset, n)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut verses = Vec::with_capacity(page.len());
    for s in page {
        let label = state.sentiment.label(&s.verse);
        let sentiment = label
            .numeric_score()
            .map_err(|e| ApiError::internal(e.to_string()))?;
        verses.push(SuggestedVerse {
            rank: s.rank,
            verse: s.verse,
            score: s.score,
            label: label.as_str(),
            sentiment,
        });
    }
    Ok(Json(json!({
        "session_id": session.session_id,
        "model": session.model,
        "input": input,
        "offset": req.offset,
        "n": n,
        "suggestions": verses,
    })))
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
