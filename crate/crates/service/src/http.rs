//! HTTP interface of the job service.

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::DynamicImage;
use omnitext_core::masks::{shrink_pixel_mask, BBox, ShrinkAnchor};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::error::ServiceError;
use crate::imaging::{png_base64, ImageRef};
use crate::jobs::{JobManager, JobRecord, JobRequest, ResultError};
use crate::run::OUTPUT_FILE;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::Validation(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Pipeline(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn router(manager: JobManager) -> Router {
    Router::new()
        .route("/jobs", post(submit).get(list))
        .route("/jobs/{id}", get(status))
        .route("/jobs/{id}/result", get(result))
        .route("/jobs/{id}/attention/{step}", get(attention))
        .route("/preview/shrink", post(preview_shrink))
        .route("/health", get(|| async { Json(json!({ "ok": true })) }))
        .layer(CorsLayer::permissive())
        .with_state(manager)
}

#[derive(Serialize)]
struct StatusBody<'a> {
    id: &'a str,
    task: omnitext_core::pipeline::TaskKind,
    state: crate::jobs::JobState,
    progress: f64,
    error: &'a Option<String>,
    timings: &'a std::collections::BTreeMap<String, f64>,
}

impl<'a> From<&'a JobRecord> for StatusBody<'a> {
    fn from(r: &'a JobRecord) -> Self {
        Self {
            id: &r.id,
            task: r.spec.task,
            state: r.state,
            progress: r.progress,
            error: &r.error,
            timings: &r.timings,
        }
    }
}

async fn submit(State(manager): State<JobManager>, body: axum::body::Bytes) -> Result<Response, ServiceError> {
    let request: JobRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::validation(format!("malformed request: {e}")))?;
    let id = tokio::task::spawn_blocking(move || manager.submit(&request))
        .await
        .map_err(|e| ServiceError::Pipeline(e.to_string()))??;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response())
}

async fn list(State(manager): State<JobManager>) -> Json<serde_json::Value> {
    let jobs = manager.list();
    Json(json!({ "jobs": jobs.iter().map(StatusBody::from).collect::<Vec<_>>() }))
}

async fn status(State(manager): State<JobManager>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let record = manager
        .status(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("job {id}")))?;
    Ok(Json(StatusBody::from(&record)).into_response())
}

async fn result(State(manager): State<JobManager>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let record = match manager.result(&id) {
        Ok(r) => r,
        Err(ResultError::NotFound) => return Err(ServiceError::NotFound(format!("job {id}"))),
        Err(ResultError::NotReady(r)) => {
            let body = json!({ "error": "job is not done", "state": r.state, "progress": r.progress, "job_error": r.error });
            return Ok((StatusCode::CONFLICT, Json(body)).into_response());
        }
    };
    let dir = manager.artifacts_dir(&id);
    let output = std::fs::read(dir.join(OUTPUT_FILE))?;
    let artifacts: Vec<_> = record
        .artifacts
        .iter()
        .map(|name| json!({ "name": name, "path": dir.join(name) }))
        .collect();
    Ok(Json(json!({
        "id": record.id,
        "task": record.spec.task,
        "artifacts": artifacts,
        "timings": record.timings,
        "output_png_base64": STANDARD.encode(output),
    }))
    .into_response())
}

async fn attention(
    State(manager): State<JobManager>,
    Path((id, step)): Path<(String, usize)>,
) -> Result<Response, ServiceError> {
    let files = tokio::task::spawn_blocking(move || manager.attention(&id, step))
        .await
        .map_err(|e| ServiceError::Pipeline(e.to_string()))??;
    let images: Vec<_> = files
        .into_iter()
        .map(|(name, png)| {
            let stem = name.trim_end_matches(".png").to_owned();
            json!({ "name": stem, "png_base64": STANDARD.encode(png) })
        })
        .collect();
    Ok(Json(json!({ "step": step, "images": images })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShrinkRequest {
    mask: ImageRef,
    source_text: String,
    target_text: String,
    #[serde(default)]
    anchor: ShrinkAnchor,
}

#[derive(Serialize)]
struct ShrinkResponse {
    ratio: f64,
    original: BBox,
    shrunk: BBox,
    mask_png_base64: String,
}

async fn preview_shrink(State(manager): State<JobManager>, body: axum::body::Bytes) -> Result<Response, ServiceError> {
    let request: ShrinkRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::validation(format!("malformed request: {e}")))?;
    let workspace = manager.config().workspace.clone();
    let mask = request.mask.load(&workspace)?.to_luma8();
    let priors = omnitext_core::CharWidthPriors::default();
    let out = shrink_pixel_mask(&mask, &request.source_text, &request.target_text, &priors, request.anchor)?;
    Ok(Json(ShrinkResponse {
        ratio: out.ratio,
        original: out.original,
        shrunk: out.shrunk,
        mask_png_base64: png_base64(&DynamicImage::ImageLuma8(out.mask))?,
    })
    .into_response())
}
