//! Routes and handlers.

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use roizoom::harness::io::{encode_png, encode_rzf};
use roizoom::harness::ScanSpec;
use roizoom::Error;

use crate::jobs::{self, FieldError, JobSpec};
use crate::session::{session_id, Session};
use crate::store::{CancelError, JobKind, JobRecord, JobResult};
use crate::AppState;

/// JSON error body `{"error": ..., "field": ...}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        Self {
            status,
            message: message.to_string(),
            field: None,
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} {id:?}"))
    }

    fn internal(e: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e)
    }
}

impl From<FieldError> for ApiError {
    fn from(e: FieldError) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: format!("{}: {}", e.field, e.message),
            field: Some(e.field),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = f.into();
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let ui = state.ui_dir.clone();
    let api = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/jobs", post(submit_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/images/{id}", get(get_image))
        .route("/traces/{id}", get(get_trace))
        .with_state(state);
    let api = match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.layer(CorsLayer::permissive())
}

fn scan_error(e: Error) -> ApiError {
    match e {
        Error::UnknownPhantom(_) | Error::UnknownPreset(_) => ApiError::new(StatusCode::BAD_REQUEST, e),
        Error::InvalidParameter { name, reason } => FieldError {
            field: name,
            message: reason,
        }
        .into(),
        other => ApiError::internal(other),
    }
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<Value>) -> ApiResult<Response> {
    let spec: ScanSpec = serde_json::from_value(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    spec.validate().map_err(scan_error)?;
    let id = session_id(&spec);
    let _guard = state.creating.lock().await;
    if let Some(s) = state.session(&id) {
        return Ok((StatusCode::OK, Json(s.view())).into_response());
    }
    let artifacts = state.artifacts.clone();
    let session = tokio::task::spawn_blocking(move || Session::create(spec, &artifacts))
        .await
        .map_err(ApiError::internal)?
        .map_err(scan_error)?;
    let session = Arc::new(session);
    state
        .sessions
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id, session.clone());
    Ok((StatusCode::CREATED, Json(session.view())).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = state.session(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    Ok(Json(s.view()).into_response())
}

async fn submit_job(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<Value>,
) -> ApiResult<Response> {
    let session = state.session(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    let spec = jobs::parse(&body, &session)?;
    let job_id = format!("job-{}", uuid::Uuid::new_v4().simple());
    let record = JobRecord::new(job_id.clone(), session.id.clone(), spec.kind());
    let cancel = state.jobs.insert(record.clone());
    session.add_job(job_id.clone());
    spawn_job(state, session, job_id, spec, cancel);
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

fn spawn_job(state: Arc<AppState>, session: Arc<Session>, id: String, spec: JobSpec, cancel: Arc<AtomicBool>) {
    tokio::spawn(async move {
        let Ok(_permit) = state.workers.clone().acquire_owned().await else {
            return;
        };
        if !state.jobs.start(&id) {
            return;
        }
        let worker_state = state.clone();
        let job = id.clone();
        let work = tokio::task::spawn_blocking(move || {
            let store = worker_state.jobs.clone();
            let report = |p: f64| store.progress(&job, p);
            let out = jobs::execute(&spec, &session, &report, &cancel).map_err(|e| e.to_string())?;
            publish(&worker_state, &session, &job, spec.kind(), out).map_err(|e| e.to_string())
        })
        .await;
        let outcome = work.unwrap_or_else(|e| Err(format!("worker stopped: {e}")));
        if let Err(msg) = &outcome {
            log::warn!("job {id} failed: {msg}");
        }
        if let Some(rec) = state.jobs.finish(&id, outcome) {
            if let Err(e) = state.artifacts.save_job(&rec) {
                log::warn!("could not persist job {id}: {e}");
            }
        }
    });
}

/// Stores the images and traces of a finished job.
fn publish(
    state: &AppState,
    session: &Session,
    job: &str,
    kind: JobKind,
    out: jobs::Output,
) -> roizoom::Result<JobResult> {
    let mut result = JobResult {
        selected_lambda: out.selected_lambda,
        ..JobResult::default()
    };
    for p in out.images {
        let prov = json!({
            "session": session.id,
            "job": job,
            "kind": kind,
            "seed": session.spec.seed,
            "strength": p.strength,
        });
        let image_id = state.artifacts.put_image(p.image.clone(), session.window, prov)?;
        if let Some(t) = p.trace {
            result.traces.push(state.artifacts.put_trace(t)?);
        }
        if kind == JobKind::Reconstruct {
            session.add_reconstruction(jobs::reconstruction_of(job, &image_id, p.image));
        }
        result.images.push(image_id);
        result.strengths.push(p.strength);
        result.psnr.push(p.psnr);
        result.iterations.push(p.iterations);
    }
    Ok(result)
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    if let Some(rec) = state.jobs.get(&id) {
        return Ok(Json(rec).into_response());
    }
    let rec = state.artifacts.load_job(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    state.jobs.restore(rec.clone());
    Ok(Json(rec).into_response())
}

async fn cancel_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    match state.jobs.cancel(&id) {
        Ok(rec) => {
            if let Err(e) = state.artifacts.save_job(&rec) {
                log::warn!("could not persist job {id}: {e}");
            }
            Ok(Json(rec).into_response())
        }
        Err(CancelError::NotFound) => Err(ApiError::not_found("job", &id)),
        Err(CancelError::AlreadyFinished(s)) => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("job {id} is already {}", serde_json::to_value(s).unwrap_or_default().as_str().unwrap_or("finished")),
        )),
    }
}

#[derive(Deserialize)]
struct ImageQuery {
    format: Option<String>,
}

async fn get_image(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let format = q.format.as_deref().unwrap_or("png");
    if !matches!(format, "png" | "raw") {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("format must be png or raw, got {format:?}")));
    }
    let stored = state.artifacts.image(&id).ok_or_else(|| ApiError::not_found("image", &id))?;
    let (bytes, mime) = if format == "png" {
        (encode_png(&stored.image, stored.window), "image/png")
    } else {
        (encode_rzf(&stored.image), "application/octet-stream")
    };
    let bytes = bytes.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response())
}

async fn get_trace(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let csv = state.artifacts.trace(&id).ok_or_else(|| ApiError::not_found("trace", &id))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}
