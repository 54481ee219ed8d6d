//! HTTP service: volume upload, slice previews, prompt editing, segmentation
//! jobs and result download. Sessions persist under the data directory as
//! `<id>/session.json` next to the uploaded volume and the latest results.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use seg_core::backends::{BackendSpec, RemoteBackend};
use seg_core::geometry::{axis_set, Label, Polyline, PolylineRecord, PromptFile, SliceFrame};
use seg_core::pipeline::{prepare, run_pipeline_with_progress, RunConfig, RunStats};
use seg_core::slicing::{encode_png_rgba, extract_slice, frames_for_axes};
use seg_core::volume::{encode_nifti_mask, parse_nifti, MaskVolume, NormalizedVolume, Volume, DEFAULT_WINDOW};
use seg_core::Error;

const SESSION_FILE: &str = "session.json";
const MASK_FILE: &str = "mask.nii";
const MESH_FILE: &str = "mesh.stl";
const OVERLAY_RGB: [u8; 3] = [255, 64, 64];

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} {id:?}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::BackendUnavailable(_) | Error::ProtocolError(_) => StatusCode::SERVICE_UNAVAILABLE,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// What `session.json` holds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub volume_file: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub polylines: Vec<PolylineRecord>,
    pub last_config: Option<RunConfig>,
    pub last_stats: Option<RunStats>,
    pub mask_file: Option<String>,
    pub mesh_file: Option<String>,
}

struct Session {
    dir: PathBuf,
    volume: Arc<Volume>,
    /// Isotropic, windowed volume for slice previews.
    preview: NormalizedVolume,
    record: Mutex<SessionRecord>,
    mask: Mutex<Option<Arc<MaskVolume>>>,
    running: Mutex<Option<String>>,
}

impl Session {
    fn persist(&self) -> ApiResult<()> {
        let record = lock(&self.record).clone();
        let json = serde_json::to_vec_pretty(&record).map_err(Error::from)?;
        std::fs::write(self.dir.join(SESSION_FILE), json).map_err(Error::from)?;
        Ok(())
    }

    fn mask(&self) -> ApiResult<Arc<MaskVolume>> {
        if let Some(m) = lock(&self.mask).clone() {
            return Ok(m);
        }
        let file = lock(&self.record).mask_file.clone().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no segmentation yet"))?;
        let m = Arc::new(seg_core::volume::load_mask(self.dir.join(file))?);
        *lock(&self.mask) = Some(m.clone());
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

struct Job {
    session: String,
    state: Mutex<JobState>,
    done: AtomicUsize,
    total: AtomicUsize,
    stats: Mutex<Option<RunStats>>,
    error: Mutex<Option<(u16, String)>>,
}

#[derive(Debug, Serialize)]
pub struct JobView {
    pub id: String,
    pub session_id: String,
    pub state: JobState,
    pub progress: f64,
    pub tasks_done: usize,
    pub tasks_total: usize,
    pub stats: Option<RunStats>,
    pub error: Option<String>,
    /// HTTP status equivalent of the failure, if any.
    pub error_status: Option<u16>,
}

pub struct AppState {
    data_dir: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn open_session(dir: &Path, record: SessionRecord, volume: Volume) -> ApiResult<Session> {
    let (_, preview) = prepare(&volume, DEFAULT_WINDOW)?;
    Ok(Session {
        dir: dir.to_path_buf(),
        volume: Arc::new(volume),
        preview,
        record: Mutex::new(record),
        mask: Mutex::new(None),
        running: Mutex::new(None),
    })
}

impl AppState {
    /// Open `data_dir`, creating it if needed, and reload every session found there.
    pub fn open(data_dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(&data_dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&data_dir)? {
            let dir = entry?.path();
            let Ok(json) = std::fs::read(dir.join(SESSION_FILE)) else { continue };
            let loaded = serde_json::from_slice::<SessionRecord>(&json)
                .map_err(Error::from)
                .and_then(|r| Ok((seg_core::volume::parse_nifti(&std::fs::read(dir.join(&r.volume_file))?)?, r)));
            match loaded {
                Ok((volume, record)) => match open_session(&dir, record.clone(), volume) {
                    Ok(s) => {
                        sessions.insert(record.id, Arc::new(s));
                    }
                    Err(e) => log::warn!("skipping session in {}: {}", dir.display(), e.message),
                },
                Err(e) => log::warn!("skipping session in {}: {e}", dir.display()),
            }
        }
        log::info!("loaded {} sessions from {}", sessions.len(), data_dir.display());
        Ok(AppState { data_dir, sessions: Mutex::new(sessions), jobs: Mutex::new(HashMap::new()) })
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/api/volumes", post(upload_volume))
        .route("/api/volumes/{id}/slice", get(volume_slice))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/polylines", put(put_polylines).get(get_polylines))
        .route("/api/sessions/{id}/segment", post(segment))
        .route("/api/sessions/{id}/mask", get(get_mask))
        .route("/api/sessions/{id}/mask/slice", get(mask_slice))
        .route("/api/sessions/{id}/mesh", get(get_mesh))
        .route("/api/jobs/{id}", get(get_job))
        .layer(DefaultBodyLimit::disable())
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(state)
}

/// Serve on an already bound listener until the process is stopped.
pub async fn serve_listener(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Serialize)]
struct VolumeInfo {
    id: String,
    dims: [usize; 3],
    spacing: [f64; 3],
}

async fn upload_volume(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<VolumeInfo>> {
    let app2 = app.clone();
    let info = tokio::task::spawn_blocking(move || -> ApiResult<VolumeInfo> {
        let volume = parse_nifti(&body)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = app2.data_dir.join(&id);
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let volume_file = if body.starts_with(&[0x1f, 0x8b]) { "volume.nii.gz" } else { "volume.nii" };
        std::fs::write(dir.join(volume_file), &body).map_err(Error::from)?;
        let record = SessionRecord {
            id: id.clone(),
            volume_file: volume_file.into(),
            dims: volume.grid.dims,
            spacing: volume.grid.spacing,
            polylines: Vec::new(),
            last_config: None,
            last_stats: None,
            mask_file: None,
            mesh_file: None,
        };
        let session = open_session(&dir, record, volume)?;
        session.persist()?;
        let info = VolumeInfo { id: id.clone(), dims: session.volume.grid.dims, spacing: session.volume.grid.spacing };
        lock(&app2.sessions).insert(id, Arc::new(session));
        Ok(info)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    log::info!("volume {} uploaded, dims {:?}", info.id, info.dims);
    Ok(Json(info))
}

#[derive(Debug, Deserialize)]
struct SliceQuery {
    axis_id: usize,
    index: usize,
    k: Option<usize>,
    stride: Option<usize>,
}

/// Frame `index` of axis `axis_id`, as the pipeline would cut it.
fn frame_for(session: &Session, q: &SliceQuery) -> ApiResult<(SliceFrame, usize)> {
    let last = lock(&session.record).last_config.clone();
    let k = q.k.or(last.as_ref().map(|c| c.k)).unwrap_or(3);
    let stride = q.stride.or(last.as_ref().map(|c| c.stride)).unwrap_or(1);
    if stride == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "stride must be >= 1"));
    }
    let axes = axis_set(k)?;
    let frames = frames_for_axes(&session.preview.grid, &axes, stride)?;
    let Some(family) = frames.get(q.axis_id) else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("axis_id {} outside [0, {k})", q.axis_id)));
    };
    let count = family.len();
    let frame = family
        .get(q.index)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("index {} outside [0, {count})", q.index)))?;
    Ok((frame, count))
}

fn png_response(png: Vec<u8>, frame: &SliceFrame, count: usize) -> ApiResult<Response> {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    let meta = serde_json::to_string(frame).map_err(Error::from)?;
    headers.insert("x-frame-meta", HeaderValue::from_str(&meta).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?);
    headers.insert("x-frame-count", HeaderValue::from(count));
    headers.insert(header::ACCESS_CONTROL_EXPOSE_HEADERS, HeaderValue::from_static("x-frame-meta, x-frame-count"));
    Ok((headers, png).into_response())
}

async fn volume_slice(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, Query(q): Query<SliceQuery>) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let (frame, count) = frame_for(&session, &q)?;
    let png = extract_slice(&session.preview, &frame).to_png();
    png_response(png, &frame, count)
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionRecord>> {
    let session = app.session(&id)?;
    let record = lock(&session.record).clone();
    Ok(Json(record))
}

async fn get_polylines(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<PromptFile>> {
    let session = app.session(&id)?;
    let polylines = lock(&session.record).polylines.clone();
    Ok(Json(PromptFile { polylines }))
}

async fn put_polylines(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<PromptFile>> {
    let session = app.session(&id)?;
    let file: PromptFile = serde_json::from_slice(&body).map_err(Error::from)?;
    file.clone().into_polylines()?;
    lock(&session.record).polylines = file.polylines.clone();
    session.persist()?;
    Ok(Json(file))
}

fn remote_urls(spec: &BackendSpec, out: &mut Vec<String>) {
    match spec {
        BackendSpec::Remote { url } => out.push(url.clone()),
        BackendSpec::Fault { inner, .. } => remote_urls(inner, out),
        _ => {}
    }
}

async fn segment(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let session = app.session(&id)?;
    let cfg: RunConfig = if body.iter().all(u8::is_ascii_whitespace) { RunConfig::default() } else { serde_json::from_slice(&body).map_err(Error::from)? };
    cfg.validate()?;
    let prompts: Vec<Polyline> = PromptFile { polylines: lock(&session.record).polylines.clone() }.into_polylines()?;
    if !prompts.iter().any(|p| p.label == Label::Positive) {
        return Err(Error::NoPositivePrompts.into());
    }
    let mut urls = Vec::new();
    remote_urls(&cfg.backend, &mut urls);
    for url in urls {
        tokio::task::spawn_blocking(move || RemoteBackend::new(&url).health())
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    }

    let job_id = uuid::Uuid::new_v4().simple().to_string();
    {
        let mut running = lock(&session.running);
        if let Some(other) = running.as_ref() {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("job {other} is already running for this session")));
        }
        *running = Some(job_id.clone());
    }
    let job = Arc::new(Job {
        session: id.clone(),
        state: Mutex::new(JobState::Running),
        done: AtomicUsize::new(0),
        total: AtomicUsize::new(0),
        stats: Mutex::new(None),
        error: Mutex::new(None),
    });
    lock(&app.jobs).insert(job_id.clone(), job.clone());
    log::info!("job {job_id} started for session {id}: k={} stride={} backend={}", cfg.k, cfg.stride, cfg.backend);

    tokio::task::spawn_blocking(move || {
        let progress = |done: usize, total: usize| {
            job.total.store(total, Ordering::Relaxed);
            job.done.store(done, Ordering::Relaxed);
        };
        let outcome = run_pipeline_with_progress(&session.volume, &prompts, &cfg, &progress).map_err(ApiError::from).and_then(|res| {
            std::fs::write(session.dir.join(MASK_FILE), encode_nifti_mask(&res.mask)).map_err(Error::from)?;
            std::fs::write(session.dir.join(MESH_FILE), res.mesh.to_stl_bytes()).map_err(Error::from)?;
            {
                let mut rec = lock(&session.record);
                rec.last_config = Some(cfg.clone());
                rec.last_stats = Some(res.stats.clone());
                rec.mask_file = Some(MASK_FILE.into());
                rec.mesh_file = Some(MESH_FILE.into());
            }
            *lock(&session.mask) = Some(Arc::new(res.mask));
            session.persist()?;
            Ok(res.stats)
        });
        match outcome {
            Ok(stats) => {
                job.total.store(stats.tasks_total, Ordering::Relaxed);
                job.done.store(stats.tasks_total, Ordering::Relaxed);
                *lock(&job.stats) = Some(stats);
                *lock(&job.state) = JobState::Done;
            }
            Err(e) => {
                log::warn!("job failed: {}", e.message);
                *lock(&job.error) = Some((e.status.as_u16(), e.message));
                *lock(&job.state) = JobState::Failed;
            }
        }
        *lock(&session.running) = None;
    });
    Ok(Json(serde_json::json!({ "job_id": job_id })))
}

async fn get_job(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JobView>> {
    let job = lock(&app.jobs).get(&id).cloned().ok_or_else(|| ApiError::not_found("job", &id))?;
    let state = *lock(&job.state);
    let (done, total) = (job.done.load(Ordering::Relaxed), job.total.load(Ordering::Relaxed));
    let progress = match state {
        JobState::Done => 1.0,
        _ if total == 0 => 0.0,
        _ => done as f64 / total as f64,
    };
    let error = lock(&job.error).clone();
    let stats = lock(&job.stats).clone();
    Ok(Json(JobView {
        id,
        session_id: job.session.clone(),
        state,
        progress,
        tasks_done: done,
        tasks_total: total,
        stats,
        error_status: error.as_ref().map(|e| e.0),
        error: error.map(|e| e.1),
    }))
}

fn result_file(session: &Session, name: Option<String>, content_type: &'static str) -> ApiResult<Response> {
    let name = name.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no segmentation yet"))?;
    let bytes = std::fs::read(session.dir.join(&name)).map_err(Error::from)?;
    let disposition = format!("attachment; filename=\"{name}\"");
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static(content_type)), (header::CONTENT_DISPOSITION, HeaderValue::from_str(&disposition).unwrap())],
        bytes,
    )
        .into_response())
}

async fn get_mask(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let name = lock(&session.record).mask_file.clone();
    result_file(&session, name, "application/octet-stream")
}

async fn get_mesh(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let name = lock(&session.record).mesh_file.clone();
    result_file(&session, name, "model/stl")
}

/// RGBA overlay of the mask on a preview frame: mask voxels opaque, the rest transparent.
pub fn render_overlay(mask: &MaskVolume, frame: &SliceFrame) -> Vec<u8> {
    let mut rgba = vec![0u8; frame.width * frame.height * 4];
    for y in 0..frame.height {
        for x in 0..frame.width {
            let p = frame.pixel_to_world(x as f64, y as f64);
            let on = mask.grid.nearest_voxel(&p).is_some_and(|[i, j, k]| mask.get(i, j, k));
            if on {
                let o = (y * frame.width + x) * 4;
                rgba[o..o + 3].copy_from_slice(&OVERLAY_RGB);
                rgba[o + 3] = 255;
            }
        }
    }
    rgba
}

async fn mask_slice(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, Query(q): Query<SliceQuery>) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let (frame, count) = frame_for(&session, &q)?;
    let mask = session.mask()?;
    let png = encode_png_rgba(frame.width, frame.height, &render_overlay(&mask, &frame));
    png_response(png, &frame, count)
}
