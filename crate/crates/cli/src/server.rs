//! HTTP API for the hand survey. Every accepted label is appended to the
//! event log before it is applied, so replaying the log always rebuilds
//! the served state.

use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use log::{error, info};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use audit_core::survey::{append_event, AnnotationEvent, Category, SurveyError, SurveyItem, SurveyState};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

pub struct SurveyServer {
    state: RwLock<SurveyState>,
    log: Mutex<Box<dyn Write + Send>>,
    clock: Clock,
    image_root: Option<PathBuf>,
}

impl SurveyServer {
    /// `state` must already reflect everything in `log`.
    pub fn new(
        state: SurveyState,
        log: Box<dyn Write + Send>,
        clock: Clock,
        image_root: Option<PathBuf>,
    ) -> Self {
        Self {
            state: RwLock::new(state),
            log: Mutex::new(log),
            clock,
            image_root,
        }
    }

    fn log(&self) -> MutexGuard<'_, Box<dyn Write + Send>> {
        self.log.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Validates, logs, then applies one label, all under the write lock
    /// so log order is application order.
    pub fn submit(&self, annotator: String, item_id: String, category: Category) -> Result<audit_core::survey::SubmitOutcome, ApiError> {
        let mut state = self.state.write().unwrap_or_else(|p| p.into_inner());
        let event = AnnotationEvent {
            annotator,
            item_id,
            category,
            timestamp: (self.clock)(),
        };
        state.validate(&event)?;
        {
            let mut log = self.log();
            append_event(&mut *log, &event)
                .and_then(|_| log.flush())
                .map_err(|e| {
                    error!("event log write failed: {e}");
                    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "event log write failed")
                })?;
        }
        Ok(state.apply(event)?)
    }

    pub fn read<T>(&self, f: impl FnOnce(&SurveyState) -> T) -> T {
        f(&self.state.read().unwrap_or_else(|p| p.into_inner()))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<SurveyError> for ApiError {
    fn from(e: SurveyError) -> Self {
        let status = match e {
            SurveyError::UnknownItem(_) => StatusCode::NOT_FOUND,
            SurveyError::ItemClosed(_) => StatusCode::CONFLICT,
            SurveyError::InvalidAnnotator => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

#[derive(Debug, Serialize)]
struct NextResponse {
    item: Option<SurveyItem>,
    /// Items this annotator currently has a label on.
    labeled: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    annotator: String,
    item_id: String,
    category: Category,
}

type App = State<Arc<SurveyServer>>;

async fn next_item(State(app): App, query: Result<Query<NextQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let annotator = q
        .annotator
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::bad_request("query parameter `annotator` is required"))?;
    let body = app.read(|s| NextResponse {
        item: s.next_item(&annotator).cloned(),
        labeled: s
            .items()
            .iter()
            .filter(|it| s.live_labels(&it.item_id).is_some_and(|l| l.contains_key(&annotator)))
            .count(),
    });
    Ok(Json(body).into_response())
}

async fn submit_label(State(app): App, body: Result<Json<LabelRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let outcome = app.submit(req.annotator, req.item_id, req.category)?;
    info!("{} -> {:?}", outcome.item_id, outcome.status);
    Ok(Json(outcome).into_response())
}

async fn progress(State(app): App) -> Response {
    Json(app.read(SurveyState::progress)).into_response()
}

async fn consensus(State(app): App) -> Response {
    Json(app.read(SurveyState::consensus)).into_response()
}

async fn export_csv(State(app): App) -> Result<Response, ApiError> {
    let mut buf = Vec::new();
    app.read(|s| s.export(&mut buf))
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
}

/// A single plain path component: no separators, no `..`, not empty.
fn plain_component(s: &str) -> bool {
    let mut parts = Path::new(s).components();
    matches!((parts.next(), parts.next()), (Some(Component::Normal(c)), None) if c == s)
}

/// `<root>/<split>/<wordnet_id>/<file_name>`, refusing anything that
/// would resolve outside `root`.
pub fn image_path(root: &Path, split: &str, wordnet_id: &str, file_name: &str) -> Option<PathBuf> {
    if ![split, wordnet_id, file_name].iter().all(|c| plain_component(c)) {
        return None;
    }
    let root = root.canonicalize().ok()?;
    let path = root.join(split).join(wordnet_id).join(file_name).canonicalize().ok()?;
    path.starts_with(&root).then_some(path)
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn item_image(State(app): App, UrlPath(item_id): UrlPath<String>) -> Result<Response, ApiError> {
    let image = app
        .read(|s| s.item(&item_id).map(|it| it.image.clone()))
        .ok_or_else(|| ApiError::from(SurveyError::UnknownItem(item_id.clone())))?;
    let root = app
        .image_root
        .as_deref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no image root configured"))?;
    let path = image_path(root, image.split.as_str(), &image.wordnet_id, &image.file_name)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no image file for `{item_id}`")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("no image file for `{item_id}`")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

/// API routes, plus the review UI's static files when `static_dir` is set.
pub fn router(app: Arc<SurveyServer>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue/next", get(next_item))
        .route("/api/labels", post(submit_label))
        .route("/api/progress", get(progress))
        .route("/api/consensus", get(consensus))
        .route("/api/export.csv", get(export_csv))
        .route("/api/items/{id}/image", get(item_image))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: std::net::SocketAddr, app: Arc<SurveyServer>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("survey listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app, static_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            info!("shutting down");
        })
        .await
}
