//! HTTP transport. Every handler is a thin wrapper over [`Workflow`].
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | GET | `/frames/{id}` | | [`FrameView`] |
//! | GET | `/frames/{id}/image` | `?box=x,y,w,h` | stored image bytes, or a PNG crop |
//! | GET | `/tasks/next` | `?kind=refine\|rate` | [`Task`], or 204 when exhausted |
//! | POST | `/tasks/{id}/refinement` | [`RefinementBody`] | [`RefinementAccepted`] |
//! | POST | `/tasks/{id}/rating` | [`RatingBody`] | stored `RatingRecord` |
//! | POST | `/validate` | [`ValidateBody`] | [`ValidationReport`] |
//! | GET | `/reports/agreement` | `?source=auto,human,model&distance=ordinal` | `AgreementReport` |
//! | GET | `/reports/metrics` | `?split=eval&source=auto` | [`MetricsReport`] |
//!
//! Every route requires `Authorization: Bearer <token>`.
//! Errors are `{"error": <kind>, "message": <text>}` plus `diagnostics` for
//! captions that fail to parse.

use std::io::Cursor;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use groundcap_core::metrics::agreement::Distance;
use groundcap_core::model::{BBox, Split};
use groundcap_core::store::CaptionSource;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[allow(unused_imports)]
use crate::workflow::{FrameView, MetricsReport, RefinementAccepted, Task, ValidationReport};
use crate::workflow::{TaskKind, Workflow, WorkflowError};

pub type AppState = Arc<Workflow>;

impl IntoResponse for WorkflowError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            WorkflowError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            WorkflowError::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            WorkflowError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            WorkflowError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            WorkflowError::Validation { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            WorkflowError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            WorkflowError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut body = json!({ "error": kind, "message": self.to_string() });
        if let WorkflowError::Validation {
            diagnostics: Some(d), ..
        } = &self
        {
            body["diagnostics"] = json!(d);
        }
        (status, Json(body)).into_response()
    }
}

/// The authenticated rater id.
pub struct Rater(pub String);

impl FromRequestParts<AppState> for Rater {
    type Rejection = WorkflowError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(WorkflowError::Unauthorized)?;
        state.rater_for_token(token.trim()).map(|r| Rater(r.to_owned()))
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, WorkflowError> + Send + 'static,
) -> Result<T, WorkflowError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| WorkflowError::Internal(e.to_string()))?
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, WorkflowError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| WorkflowError::BadRequest(e.body_text()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementBody {
    pub text: String,
    pub base_revision: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingBody {
    /// Five integers in 1..=5, in criterion order.
    pub criteria: Vec<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateBody {
    pub frame_id: String,
    pub text: String,
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    kind: String,
}

#[derive(Debug, Deserialize)]
struct ImageQuery {
    #[serde(rename = "box")]
    crop: Option<String>,
}

#[derive(Debug, Deserialize)]
struct AgreementQuery {
    source: Option<String>,
    distance: Option<String>,
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    split: Option<String>,
    source: Option<String>,
}

pub fn router(workflow: AppState) -> Router {
    Router::new()
        .route("/frames/{id}", get(get_frame))
        .route("/frames/{id}/image", get(get_image))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}/refinement", post(post_refinement))
        .route("/tasks/{id}/rating", post(post_rating))
        .route("/validate", post(post_validate))
        .route("/reports/agreement", get(get_agreement))
        .route("/reports/metrics", get(get_metrics))
        .with_state(workflow)
}

pub async fn serve(workflow: AppState, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    axum::serve(listener, router(workflow)).await
}

async fn get_frame(
    State(wf): State<AppState>,
    _rater: Rater,
    Path(id): Path<String>,
) -> Result<Json<FrameView>, WorkflowError> {
    blocking(move || wf.frame_view(&id)).await.map(Json)
}

pub fn parse_box(s: &str) -> Result<BBox, WorkflowError> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| WorkflowError::BadRequest(format!("box `{s}` must be x,y,w,h non-negative integers")))?;
    let [x, y, w, h] = parts[..] else {
        return Err(WorkflowError::BadRequest(format!("box `{s}` must have four fields")));
    };
    BBox::new(x, y, w, h).map_err(|e| WorkflowError::BadRequest(e.to_string()))
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

/// Loads the frame's image; with a box, returns those pixels as PNG.
pub fn frame_image(
    wf: &Workflow,
    frame_id: &str,
    crop: Option<BBox>,
) -> Result<(&'static str, Vec<u8>), WorkflowError> {
    let frame = wf.store().load_frame(frame_id)?.value.frame;
    let path = wf.store().resolve(&frame.image_ref);
    let bytes = std::fs::read(&path).map_err(|e| WorkflowError::NotFound(format!("{}: {e}", path.display())))?;
    let Some(b) = crop else {
        return Ok((content_type(&path), bytes));
    };
    let img =
        image::load_from_memory(&bytes).map_err(|e| WorkflowError::Internal(format!("{}: {e}", path.display())))?;
    if !b.fits_in(img.width(), img.height()) {
        return Err(WorkflowError::Validation {
            message: format!("box {b:?} exceeds the {}x{} image", img.width(), img.height()),
            diagnostics: None,
        });
    }
    let mut out = Vec::new();
    img.crop_imm(b.x, b.y, b.w, b.h)
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| WorkflowError::Internal(e.to_string()))?;
    Ok(("image/png", out))
}

async fn get_image(
    State(wf): State<AppState>,
    _rater: Rater,
    Path(id): Path<String>,
    Query(q): Query<ImageQuery>,
) -> Result<Response, WorkflowError> {
    let crop = q.crop.as_deref().map(parse_box).transpose()?;
    let (ctype, bytes) = blocking(move || frame_image(&wf, &id, crop)).await?;
    Ok(([(header::CONTENT_TYPE, ctype)], Body::from(bytes)).into_response())
}

async fn next_task(
    State(wf): State<AppState>,
    Rater(rater): Rater,
    Query(q): Query<NextQuery>,
) -> Result<Response, WorkflowError> {
    let kind: TaskKind = q.kind.parse().map_err(WorkflowError::BadRequest)?;
    match blocking(move || wf.next_task(&rater, kind)).await? {
        Some(task) => Ok(Json(task).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn post_refinement(
    State(wf): State<AppState>,
    Rater(rater): Rater,
    Path(id): Path<String>,
    payload: Result<Json<RefinementBody>, JsonRejection>,
) -> Result<Json<RefinementAccepted>, WorkflowError> {
    let b = body(payload)?;
    blocking(move || wf.submit_refinement(&rater, &id, &b.text, b.base_revision))
        .await
        .map(Json)
}

async fn post_rating(
    State(wf): State<AppState>,
    Rater(rater): Rater,
    Path(id): Path<String>,
    payload: Result<Json<RatingBody>, JsonRejection>,
) -> Result<Response, WorkflowError> {
    let b = body(payload)?;
    let record = blocking(move || wf.submit_rating(&rater, &id, &b.criteria)).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn post_validate(
    State(wf): State<AppState>,
    _rater: Rater,
    payload: Result<Json<ValidateBody>, JsonRejection>,
) -> Result<Json<ValidationReport>, WorkflowError> {
    let b = body(payload)?;
    blocking(move || wf.validate(&b.frame_id, &b.text)).await.map(Json)
}

pub fn parse_sources(s: Option<&str>) -> Result<Vec<CaptionSource>, WorkflowError> {
    match s {
        None | Some("") => Ok(CaptionSource::ALL.to_vec()),
        Some(list) => list
            .split(',')
            .map(|p| p.trim().parse::<CaptionSource>().map_err(WorkflowError::BadRequest))
            .collect(),
    }
}

pub fn parse_distance(s: Option<&str>) -> Result<Distance, WorkflowError> {
    match s {
        None => Ok(Distance::default()),
        Some("nominal") => Ok(Distance::Nominal),
        Some("ordinal") => Ok(Distance::Ordinal),
        Some("interval") => Ok(Distance::Interval),
        Some(other) => Err(WorkflowError::BadRequest(format!(
            "unknown distance `{other}` (expected nominal, ordinal or interval)"
        ))),
    }
}

async fn get_agreement(
    State(wf): State<AppState>,
    _rater: Rater,
    Query(q): Query<AgreementQuery>,
) -> Result<Response, WorkflowError> {
    let sources = parse_sources(q.source.as_deref())?;
    let distance = parse_distance(q.distance.as_deref())?;
    let report = blocking(move || wf.agreement(&sources, distance)).await?;
    Ok(Json(report).into_response())
}

async fn get_metrics(
    State(wf): State<AppState>,
    _rater: Rater,
    Query(q): Query<MetricsQuery>,
) -> Result<Json<MetricsReport>, WorkflowError> {
    let split = q
        .split
        .as_deref()
        .map(str::parse::<Split>)
        .transpose()
        .map_err(WorkflowError::BadRequest)?;
    let sources = parse_sources(q.source.as_deref())?;
    blocking(move || wf.metrics(split, &sources)).await.map(Json)
}
