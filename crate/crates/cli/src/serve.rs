//! HTTP API over a manifest, used by the browser viewer.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{Mutex, RwLock};

use panocompose::candidates::wrap_pose;
use panocompose::manifest::Manifest;
use panocompose::pipeline::{append_rating, Rating};
use panocompose::projection::{
    render_view, CameraIntrinsics, CameraPose, ErpImage, DEFAULT_FOV_Y_DEG, DEFAULT_VIEW_HEIGHT, DEFAULT_VIEW_WIDTH,
};
use panocompose::scene::{PoseRecord, SceneRecord};

/// Largest view edge the view endpoint will render.
pub const MAX_VIEW_EDGE: u32 = 4096;
const JPEG_QUALITY: u8 = 90;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub manifest_path: PathBuf,
    pub data_dir: PathBuf,
    pub ratings_path: PathBuf,
}

pub struct AppState {
    cfg: ServeConfig,
    manifest: RwLock<Manifest>,
    /// Serializes manifest and ratings writes.
    write_lock: Mutex<()>,
    erp_cache: Mutex<HashMap<String, Arc<ErpImage>>>,
}

impl AppState {
    pub fn new(cfg: ServeConfig, manifest: Manifest) -> Arc<Self> {
        Arc::new(Self {
            cfg,
            manifest: RwLock::new(manifest),
            write_lock: Mutex::new(()),
            erp_cache: Mutex::new(HashMap::new()),
        })
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

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown scene {id}"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/scenes", get(list_scenes))
        .route("/api/scenes/{id}", get(get_scene))
        .route("/api/scenes/{id}/erp.jpg", get(get_erp))
        .route("/api/scenes/{id}/view", get(get_view))
        .route("/api/scenes/{id}/candidates", get(get_candidates))
        .route("/api/scenes/{id}/labels", get(get_labels))
        .route("/api/scenes/{id}/init", post(post_init))
        .route("/api/ratings", post(post_rating))
        .with_state(state)
}

pub async fn serve(cfg: ServeConfig, manifest: Manifest, host: &str, port: u16) -> anyhow::Result<()> {
    let addr = format!("{host}:{port}");
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))?;
    log::info!("serving {} scenes on http://{addr}", manifest.scenes.len());
    println!("listening on http://{}", listener.local_addr()?);
    let app = router(AppState::new(cfg, manifest));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("server error")
}

async fn scene(state: &AppState, id: &str) -> ApiResult<SceneRecord> {
    state
        .manifest
        .read()
        .await
        .scene(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(id))
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    let m = state.manifest.read().await;
    Json(m.scenes.iter().map(|s| s.scene_id.clone()).collect())
}

async fn get_scene(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SceneRecord>> {
    Ok(Json(scene(&state, &id).await?))
}

async fn get_candidates(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = scene(&state, &id).await?;
    Ok(Json(s.candidates).into_response())
}

async fn get_labels(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = scene(&state, &id).await?;
    let labels = s
        .labels
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("scene {id} has no labels")))?;
    Ok(Json(json!({
        "scene_id": s.scene_id,
        "init_score": s.init_score,
        "labels": labels,
    }))
    .into_response())
}

async fn load_erp(state: &AppState, s: &SceneRecord) -> ApiResult<Arc<ErpImage>> {
    if let Some(erp) = state.erp_cache.lock().await.get(&s.scene_id) {
        return Ok(erp.clone());
    }
    let path = state.cfg.data_dir.join(&s.erp_path);
    let erp = tokio::task::spawn_blocking(move || ErpImage::open(&path))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let erp = Arc::new(erp);
    state.erp_cache.lock().await.insert(s.scene_id.clone(), erp.clone());
    Ok(erp)
}

async fn get_erp(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = scene(&state, &id).await?;
    let erp = load_erp(&state, &s).await?;
    let bytes = tokio::task::spawn_blocking(move || erp.to_jpeg_bytes(JPEG_QUALITY))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/jpeg")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
pub struct ViewQuery {
    theta: Option<f64>,
    phi: Option<f64>,
    fovy: Option<f64>,
    w: Option<u32>,
    h: Option<u32>,
}

async fn get_view(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> ApiResult<Response> {
    let s = scene(&state, &id).await?;
    let pose = CameraPose::new(
        q.theta.unwrap_or(s.init_pose.theta_deg),
        q.phi.unwrap_or(s.init_pose.phi_deg),
    )
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (w, h) = (q.w.unwrap_or(DEFAULT_VIEW_WIDTH), q.h.unwrap_or(DEFAULT_VIEW_HEIGHT));
    if w > MAX_VIEW_EDGE || h > MAX_VIEW_EDGE {
        return Err(ApiError::bad_request(format!("view edges are limited to {MAX_VIEW_EDGE} pixels")));
    }
    let k = CameraIntrinsics::from_fov(q.fovy.unwrap_or(DEFAULT_FOV_Y_DEG), w, h)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let erp = load_erp(&state, &s).await?;
    let bytes = tokio::task::spawn_blocking(move || render_view(&erp, &pose, &k).to_png_bytes())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let echo = |v: f64| HeaderValue::from_str(&v.to_string()).expect("numbers are valid header values");
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::HeaderName::from_static("x-pose-theta"), echo(pose.theta())),
            (header::HeaderName::from_static("x-pose-phi"), echo(pose.phi())),
        ],
        bytes,
    )
        .into_response())
}

/// Updates a scene's initial pose. Candidates, scores and labels derived from
/// the old pose are dropped.
async fn post_init(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(pose): Json<PoseRecord>,
) -> ApiResult<Json<SceneRecord>> {
    let pose = wrap_pose(pose.theta_deg, pose.phi_deg)
        .ok_or_else(|| ApiError::bad_request("pitch must lie in [-90, 90] and yaw must be finite"))?;
    let _guard = state.write_lock.lock().await;
    let mut next = state.manifest.read().await.clone();
    let s = next.scene_mut(&id).ok_or_else(|| ApiError::not_found(&id))?;
    s.init_pose = pose.into();
    s.candidates.clear();
    s.init_score = None;
    s.labels = None;
    let updated = s.clone();
    let path = state.cfg.manifest_path.clone();
    let text = next.to_jsonl();
    tokio::task::spawn_blocking(move || panocompose::manifest::write_atomic(&path, text.as_bytes()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    *state.manifest.write().await = next;
    Ok(Json(updated))
}

async fn post_rating(State(state): State<Arc<AppState>>, Json(rating): Json<Rating>) -> ApiResult<(StatusCode, Json<Rating>)> {
    scene(&state, &rating.scene_id).await?;
    if rating.left_ref.is_empty() || rating.right_ref.is_empty() {
        return Err(ApiError::bad_request("left_ref and right_ref must be non-empty"));
    }
    let _guard = state.write_lock.lock().await;
    let path = state.cfg.ratings_path.clone();
    let row = rating.clone();
    tokio::task::spawn_blocking(move || append_rating(&path, &row))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(rating)))
}
