//! HTTP backend for the signal viewer.
//!
//! Serves one recording over a small JSON API under `/api` and the viewer's
//! static files at `/`. The server binds to the loopback interface only.

pub mod session;

use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

pub use session::{DataQuery, NewEvent, SessionError, StoredEvent, ViewSession};

pub const DEFAULT_PORT: u16 = 8642;

pub type SharedSession = Arc<RwLock<ViewSession>>;

const PLACEHOLDER_INDEX: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>biosig</title></head>\n<body><p>No viewer installed. The API is available under <code>/api/header</code>, <code>/api/data</code> and <code>/api/events</code>.</p></body></html>\n";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::ReadOnly => StatusCode::FORBIDDEN,
            SessionError::InvalidEvent(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::IdReuse(_) => StatusCode::CONFLICT,
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::BeyondEnd { .. } => StatusCode::RANGE_NOT_SATISFIABLE,
            SessionError::Save(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn read(state: &SharedSession) -> RwLockReadGuard<'_, ViewSession> {
    state.read().unwrap_or_else(|p| p.into_inner())
}

fn write(state: &SharedSession) -> RwLockWriteGuard<'_, ViewSession> {
    state.write().unwrap_or_else(|p| p.into_inner())
}

async fn header(State(state): State<SharedSession>) -> Json<Value> {
    Json(read(&state).header_json())
}

async fn data(State(state): State<SharedSession>, Query(params): Query<Vec<(String, String)>>) -> ApiResult<Json<Value>> {
    let query = DataQuery::parse(params.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(Json(read(&state).window(&query)?))
}

async fn list_events(State(state): State<SharedSession>) -> Json<Value> {
    let s = read(&state);
    Json(json!({ "events": s.events(), "dirty": s.is_dirty() }))
}

async fn add_event(State(state): State<SharedSession>, body: Bytes) -> ApiResult<(StatusCode, Json<StoredEvent>)> {
    let req: NewEvent = serde_json::from_slice(&body).map_err(|e| {
        let status = match e.classify() {
            serde_json::error::Category::Data => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, format!("invalid event body: {e}"))
    })?;
    let stored = write(&state).add_event(req)?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn delete_event(State(state): State<SharedSession>, Path(id): Path<String>) -> ApiResult<Json<StoredEvent>> {
    let id = biosig::safeparse::parse_uint(&id).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("bad event id {id:?}")))?;
    Ok(Json(write(&state).delete_event(id)?))
}

async fn save(State(state): State<SharedSession>) -> ApiResult<Json<Value>> {
    let mut s = write(&state);
    let path = s.save()?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
    Ok(Json(json!({ "saved": name, "events": s.events().len() })))
}

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER_INDEX)
}

/// Builds the application. With `static_dir`, files under it are served at
/// `/`; otherwise `/` returns a short placeholder page.
pub fn router(state: SharedSession, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/header", get(header))
        .route("/api/data", get(data))
        .route("/api/events", get(list_events).post(add_event))
        .route("/api/events/{id}", delete(delete_event))
        .route("/api/save", post(save))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.route("/", get(placeholder)),
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub port: u16,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            port: DEFAULT_PORT,
            static_dir: None,
        }
    }
}

/// Binds `127.0.0.1:port`. Port 0 picks a free port.
pub async fn bind(port: u16) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, port))).await
}

/// Serves `session` on an already bound listener until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, session: ViewSession, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let app = router(Arc::new(RwLock::new(session)), static_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Blocking entry point: builds a runtime, binds and serves. `on_bound`
/// receives the bound address before requests are accepted.
pub fn run(session: ViewSession, options: ServeOptions, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = bind(options.port).await?;
        on_bound(listener.local_addr()?);
        serve(listener, session, options.static_dir).await
    })
}
