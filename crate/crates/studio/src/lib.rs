//! HTTP service behind the studio: open sessions, tweak blend parameters
//! and channel overrides, preview frames, export clips.
//!
//! Every session renders one frame at a time. A render request waits a
//! short while for the slot and otherwise answers `409 busy` with a retry
//! hint. Exports run as background jobs and queue for the slot per frame,
//! so previews can interleave with them.

pub mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use reenact_core::pipeline::{write_frames_dir, write_y4m, SessionConfig};

pub use error::{ApiError, ApiResult, ErrorBody};
pub use session::{
    FrameLatents, LiveSession, LiveState, OverrideEntry, OverrideRequest, ParamsPatch, SessionStatus,
};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Relative paths in inline session configs resolve against this.
    pub base_dir: PathBuf,
    /// How long a render request waits for a busy session.
    pub busy_wait: Duration,
    /// Retry hint sent with busy responses.
    pub retry_after_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            base_dir: PathBuf::from("."),
            busy_wait: Duration::from_millis(250),
            retry_after_ms: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportResult {
    pub frames_dir: String,
    pub video: String,
    pub frame_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub session: String,
    pub state: JobState,
    pub done: usize,
    pub total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<ExportResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

struct Inner {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<LiveSession>>>,
    jobs: RwLock<HashMap<String, Arc<Mutex<JobStatus>>>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                cfg,
                sessions: RwLock::new(HashMap::new()),
                jobs: RwLock::new(HashMap::new()),
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.cfg
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<LiveSession>> {
        self.inner
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Prepare a session from a config and register it. Blocking.
    pub fn open_session(&self, cfg: &SessionConfig) -> ApiResult<Arc<LiveSession>> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let live = Arc::new(LiveSession::open(id.clone(), cfg)?);
        self.inner.sessions.write().expect("sessions lock").insert(id, live.clone());
        log::info!("opened session {} at {}", live.id(), cfg.output.session_dir.display());
        Ok(live)
    }

    pub fn close_session(&self, id: &str) -> ApiResult<()> {
        self.inner
            .sessions
            .write()
            .expect("sessions lock")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn job(&self, id: &str) -> ApiResult<JobStatus> {
        let jobs = self.inner.jobs.read().expect("jobs lock");
        let job = jobs.get(id).ok_or_else(|| ApiError::not_found("job", id))?;
        let status = job.lock().expect("job lock").clone();
        Ok(status)
    }
}

/// Extractor wrapper turning JSON body errors into the service's error shape.
struct Body<T>(T);

impl<S, T> axum::extract::FromRequest<S> for Body<T>
where
    Json<T>: axum::extract::FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::bad_request(e.body_text())),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Inline config; relative paths resolve against the service base dir.
    pub config: Option<SessionConfig>,
    /// Config file on the server; relative paths resolve against its folder.
    pub config_path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRequest {
    /// Frames to export; the whole clip when absent.
    pub range: Option<Range<usize>>,
}

fn load_config(base: &Path, req: CreateSession) -> ApiResult<SessionConfig> {
    match (req.config, req.config_path) {
        (Some(mut cfg), None) => {
            cfg.resolve_paths(base);
            Ok(cfg)
        }
        (None, Some(path)) => {
            let path = if path.is_relative() { base.join(path) } else { path };
            Ok(SessionConfig::load(&path)?)
        }
        _ => Err(ApiError::validation("config", "send exactly one of `config` and `config_path`")),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

async fn create_session(State(app): State<AppState>, Body(req): Body<CreateSession>) -> ApiResult<Response> {
    let cfg = load_config(&app.config().base_dir, req)?;
    let app2 = app.clone();
    let live = blocking(move || app2.open_session(&cfg)).await?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "id": live.id() }))).into_response())
}

async fn list_sessions(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "sessions": app.session_ids() }))
}

async fn get_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionStatus>> {
    Ok(Json(app.session(&id)?.status()))
}

async fn delete_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    app.close_session(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_channels(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let live = app.session(&id)?;
    let text = live.catalog().to_json()?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn patch_params(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Body(patch): Body<ParamsPatch>,
) -> ApiResult<Json<SessionStatus>> {
    let live = app.session(&id)?;
    live.apply_patch(&patch)?;
    Ok(Json(live.status()))
}

async fn put_override(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Body(req): Body<OverrideRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let live = app.session(&id)?;
    let state = live.set_override(&req)?;
    Ok(Json(serde_json::json!({ "overrides": session::override_list(&state.overrides) })))
}

fn check_frame(live: &LiveSession, j: usize) -> ApiResult<()> {
    let n = live.prepared().frame_count();
    if j >= n {
        return Err(ApiError::validation("frame", format!("frame {j} outside 0..{n}")));
    }
    Ok(())
}

async fn render_frame(State(app): State<AppState>, UrlPath((id, j)): UrlPath<(String, usize)>) -> ApiResult<Response> {
    let live = app.session(&id)?;
    check_frame(&live, j)?;
    let cfg = app.config();
    let permit = live.acquire_render(cfg.busy_wait, cfg.retry_after_ms).await?;
    let state = live.snapshot();
    let png = blocking(move || {
        let _permit = permit;
        let img = live.prepared().render_frame(&state.coefficients, &state.overrides, j)?;
        Ok(img.to_png()?)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn frame_latents(
    State(app): State<AppState>,
    UrlPath((id, j)): UrlPath<(String, usize)>,
) -> ApiResult<Json<FrameLatents>> {
    let live = app.session(&id)?;
    check_frame(&live, j)?;
    let state = live.snapshot();
    Ok(Json(blocking(move || live.latents(&state, j)).await?))
}

async fn start_export(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Body(req): Body<ExportRequest>,
) -> ApiResult<Response> {
    let live = app.session(&id)?;
    let n = live.prepared().frame_count();
    let range = req.range.unwrap_or(0..n);
    if range.start >= range.end || range.end > n {
        return Err(ApiError::validation("range", format!("{range:?} outside 0..{n}")));
    }
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    let status = Arc::new(Mutex::new(JobStatus {
        id: job_id.clone(),
        session: id.clone(),
        state: JobState::Running,
        done: 0,
        total: range.len(),
        result: None,
        error: None,
    }));
    app.inner.jobs.write().expect("jobs lock").insert(job_id.clone(), status.clone());
    let state = live.snapshot();
    let reply = job_id.clone();
    tokio::spawn(async move {
        let outcome = run_export(&live, &state, range, &job_id, &status).await;
        let mut s = status.lock().expect("job lock");
        match outcome {
            Ok(result) => {
                s.state = JobState::Done;
                s.result = Some(result);
            }
            Err(e) => {
                log::warn!("export {job_id} failed: {e}");
                s.state = JobState::Failed;
                s.error = Some(e.body);
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "job": reply }))).into_response())
}

async fn run_export(
    live: &Arc<LiveSession>,
    state: &LiveState,
    range: Range<usize>,
    job_id: &str,
    status: &Arc<Mutex<JobStatus>>,
) -> ApiResult<ExportResult> {
    let mut frames = Vec::with_capacity(range.len());
    for j in range {
        let permit = live.acquire_render_queued().await?;
        let (l, s) = (live.clone(), state.clone());
        let img = blocking(move || {
            let _permit = permit;
            Ok(l.prepared().render_frame(&s.coefficients, &s.overrides, j)?)
        })
        .await?;
        frames.push(img);
        status.lock().expect("job lock").done += 1;
    }
    let out = live.prepared().dir.join("exports").join(job_id);
    let fps = live.prepared().fps();
    blocking(move || {
        write_frames_dir(&frames, fps, &out)?;
        let video = out.join("video.y4m");
        write_y4m(&frames, fps, &video)?;
        Ok(ExportResult {
            frames_dir: out.display().to_string(),
            video: video.display().to_string(),
            frame_count: frames.len(),
        })
    })
    .await
}

async fn get_job(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JobStatus>> {
    Ok(Json(app.job(&id)?))
}

async fn fallback() -> ApiError {
    ApiError::not_found("route", "for this method and path")
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/channels", get(get_channels))
        .route("/sessions/{id}/params", patch(patch_params))
        .route("/sessions/{id}/overrides", put(put_override))
        .route("/sessions/{id}/frames/{j}/render", get(render_frame))
        .route("/sessions/{id}/frames/{j}/latents", get(frame_latents))
        .route("/sessions/{id}/export", post(start_export))
        .route("/jobs/{id}", get(get_job))
        .fallback(fallback)
        .with_state(app)
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, app: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("studio service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
