//! HTTP service over an [`Engine`] snapshot.
//!
//! | route                      | method | response                         |
//! |----------------------------|--------|----------------------------------|
//! | `/api/health`              | GET    | status, version, checksums       |
//! | `/api/classes`             | GET    | class names in index order       |
//! | `/api/classify?k=`         | POST   | multipart `image` → top-k report |
//! | `/api/search?k=`           | POST   | multipart `image` or `id` → hits |
//! | `/api/gradcam?id=&class=`  | GET    | PNG overlay                      |
//! | `/api/palette?id=&k=`      | GET    | palette JSON                     |
//! | `/api/admin/reload`        | POST   | reloads artifacts from config    |
//!
//! Errors are `{"error": "..."}` with a 4xx/5xx status. Until the first load
//! completes every model-backed route answers 503.

use std::collections::HashMap;
use std::io::Cursor;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::{ImageFormat, RgbImage};
use serde::Serialize;
use serde_json::json;

use crate::config::ServiceConfig;
use crate::engine::Engine;
use crate::error::CliError;

pub const DEFAULT_SEARCH_K: usize = 10;
pub const DEFAULT_CLASSIFY_K: usize = 5;

#[derive(Debug, Clone)]
enum Snapshot {
    Loading,
    Ready(Arc<Engine>),
    Failed(String),
}

#[derive(Debug)]
pub struct AppState {
    config: ServiceConfig,
    snapshot: RwLock<Snapshot>,
}

impl AppState {
    /// State with nothing loaded yet; call [`AppState::reload`] to load.
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            snapshot: RwLock::new(Snapshot::Loading),
        })
    }

    pub fn with_engine(config: ServiceConfig, engine: Engine) -> Arc<Self> {
        Arc::new(Self {
            config,
            snapshot: RwLock::new(Snapshot::Ready(Arc::new(engine))),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        match &*self.snapshot.read().expect("snapshot lock") {
            Snapshot::Ready(e) => Some(Arc::clone(e)),
            _ => None,
        }
    }

    /// Loads the configured artifacts and swaps them in. On failure the
    /// previous snapshot stays in service, or the state records the error if
    /// there was none.
    pub fn reload(&self) -> Result<(), CliError> {
        match Engine::load(&self.config) {
            Ok(engine) => {
                *self.snapshot.write().expect("snapshot lock") = Snapshot::Ready(Arc::new(engine));
                Ok(())
            }
            Err(e) => {
                log::error!("artifact load failed: {e}");
                let mut snap = self.snapshot.write().expect("snapshot lock");
                if !matches!(*snap, Snapshot::Ready(_)) {
                    *snap = Snapshot::Failed(e.to_string());
                }
                Err(e)
            }
        }
    }
}

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

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "model not loaded")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        use atelier_core::Error as E;
        let status = match &e {
            CliError::NotFound(_) => StatusCode::NOT_FOUND,
            CliError::NoIndex => StatusCode::SERVICE_UNAVAILABLE,
            CliError::Core(E::Image { .. } | E::ClassOutOfRange { .. } | E::InvalidArgument(_) | E::InvalidShape { .. }) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn json_body<T: Serialize>(value: &T) -> Response {
    let body = serde_json::to_string(value).expect("response serialises");
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn ready(state: &AppState) -> ApiResult<Arc<Engine>> {
    state.engine().ok_or_else(ApiError::unavailable)
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, CliError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

fn decode_image(bytes: &[u8]) -> ApiResult<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("cannot decode image: {e}")))
}

fn parse_k(raw: Option<&String>, default: usize, max: Option<usize>) -> ApiResult<usize> {
    let Some(raw) = raw else { return Ok(default) };
    let bad = || {
        let range = max.map_or("at least 1".to_string(), |m| format!("between 1 and {m}"));
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("k must be an integer {range}, got `{raw}`"))
    };
    let k: usize = raw.trim().parse().map_err(|_| bad())?;
    if k == 0 || max.is_some_and(|m| k > m) {
        return Err(bad());
    }
    Ok(k)
}

#[derive(Default)]
struct Form {
    image: Option<Bytes>,
    id: Option<String>,
}

async fn read_form(mut multipart: Multipart) -> ApiResult<Form> {
    let fail = |e: axum::extract::multipart::MultipartError| {
        let status = e.status();
        let message = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "upload exceeds the configured size limit".to_string()
        } else {
            e.body_text()
        };
        ApiError::new(status, message)
    };
    let mut form = Form::default();
    while let Some(field) = multipart.next_field().await.map_err(fail)? {
        match field.name() {
            Some("image") => form.image = Some(field.bytes().await.map_err(fail)?),
            Some("id") => form.id = Some(field.text().await.map_err(fail)?),
            _ => {}
        }
    }
    Ok(form)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let snapshot = state.snapshot.read().expect("snapshot lock").clone();
    match snapshot {
        Snapshot::Ready(engine) => json_body(&json!({
            "status": "ok",
            "version": env!("CARGO_PKG_VERSION"),
            "model": engine.info(),
            "index": engine.index().map(|i| json!({ "entries": i.len(), "tap": i.tap().name(), "dim": i.dim() })),
        })),
        Snapshot::Loading => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
        Snapshot::Failed(error) => {
            (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "error", "error": error }))).into_response()
        }
    }
}

async fn classes(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    let engine = ready(&state)?;
    Ok(json_body(&json!({ "classes": engine.classes() })))
}

async fn classify(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
    multipart: Multipart,
) -> ApiResult<Response> {
    let engine = ready(&state)?;
    let k = parse_k(q.get("k"), DEFAULT_CLASSIFY_K, Some(engine.classes().len()))?;
    let bytes = read_form(multipart)
        .await?
        .image
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing multipart field `image`"))?;
    let image = decode_image(&bytes)?;
    let report = blocking(move || engine.classify(&image, k)).await?;
    Ok(json_body(&report))
}

async fn search(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
    request: Request,
) -> ApiResult<Response> {
    let engine = ready(&state)?;
    if engine.index().is_none() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no retrieval index is loaded"));
    }
    let k = parse_k(q.get("k"), DEFAULT_SEARCH_K, None)?;
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let form = if is_multipart {
        let m = Multipart::from_request(request, &())
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
        read_form(m).await?
    } else {
        Form::default()
    };
    let report = match (form.image, form.id.or_else(|| q.get("id").cloned())) {
        (Some(bytes), _) => {
            let image = decode_image(&bytes)?;
            blocking(move || engine.search_image(&image, k)).await?
        }
        (None, Some(id)) => engine.search_id(id.trim(), k)?,
        (None, None) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "provide an `image` upload or an `id`")),
    };
    Ok(json_body(&report))
}

fn required<'a>(q: &'a HashMap<String, String>, key: &str) -> ApiResult<&'a str> {
    q.get(key)
        .map(String::as_str)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("missing query parameter `{key}`")))
}

async fn gradcam(State(state): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let engine = ready(&state)?;
    let id = required(&q, "id")?.to_string();
    let class = q
        .get("class")
        .map(|c| {
            c.trim()
                .parse::<usize>()
                .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("class must be a class index, got `{c}`")))
        })
        .transpose()?;
    if let Some(c) = class.filter(|&c| c >= engine.classes().len()) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("class index {c} out of range for {} classes", engine.classes().len()),
        ));
    }
    let png = blocking(move || {
        let image = engine.image_for_id(&id)?;
        let (overlay, _) = engine.gradcam(&image, class)?;
        let mut buf = Cursor::new(Vec::new());
        overlay
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| CliError::Server(format!("PNG encoding failed: {e}")))?;
        Ok(buf.into_inner())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn palette(State(state): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let engine = ready(&state)?;
    let id = required(&q, "id")?.to_string();
    let k = parse_k(q.get("k"), atelier_core::analysis::DEFAULT_PALETTE_SIZE, None)?;
    let palette = blocking(move || {
        let image = engine.image_for_id(&id)?;
        engine.palette(&image, k, 0)
    })
    .await?;
    Ok(json_body(&palette))
}

async fn reload(State(state): State<Arc<AppState>>) -> Response {
    let s = Arc::clone(&state);
    match tokio::task::spawn_blocking(move || s.reload()).await {
        Ok(Ok(())) => health(State(state)).await,
        Ok(Err(e)) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/classes", get(classes))
        .route("/api/classify", post(classify))
        .route("/api/search", post(search))
        .route("/api/gradcam", get(gradcam))
        .route("/api/palette", get(palette))
        .route("/api/admin/reload", post(reload))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds, starts loading artifacts in the background, and serves until
/// interrupted.
pub async fn serve(state: Arc<AppState>) -> Result<(), CliError> {
    let addr = state.config.bind;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Server(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{addr}");
    let loader = Arc::clone(&state);
    tokio::task::spawn_blocking(move || {
        let _ = loader.reload();
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Server(e.to_string()))
}
