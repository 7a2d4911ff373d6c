//! HTTP front of the survey service.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use memscore::model::Answer;
use memscore::service::{CreateStudy, ServiceError};
use memscore::SurveyService;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::UnknownStudy(_) | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::UnknownQuestion(_) | ServiceError::InvalidStudy(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::DuplicateStudy(_)
            | ServiceError::WrongState { .. }
            | ServiceError::RepeatParticipant(_)
            | ServiceError::NoCompletedSessions
            | ServiceError::Protocol(_) => StatusCode::CONFLICT,
            ServiceError::Scoring(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Io(_) | ServiceError::BadLog { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<SurveyService>;

#[derive(Deserialize)]
struct ParticipantQuery {
    participant: String,
}

#[derive(Deserialize)]
struct ResponseBody {
    question_id: String,
    answer: Answer,
    client_latency_ms: u64,
}

#[derive(Deserialize, Default)]
struct FocusBody {
    #[serde(default)]
    detail: Option<String>,
}

async fn create_study(State(s): State<Shared>, Json(req): Json<CreateStudy>) -> ApiResult<impl IntoResponse> {
    let id = s.create_study(req)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn get_study(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.study(&id)?))
}

async fn open_study(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    s.open_study(&id)?;
    Ok(Json(json!({ "id": id, "state": "live" })))
}

async fn close_study(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    s.close_study(&id)?;
    Ok(Json(json!({ "id": id, "state": "closed" })))
}

async fn assign(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<ParticipantQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.assign_sequence(&id, &q.participant)?))
}

async fn next(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.next(&id)?))
}

async fn respond(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<ResponseBody>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.record_response(&id, &body.question_id, body.answer, body.client_latency_ms)?))
}

async fn focus_loss(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Option<Json<FocusBody>>,
) -> ApiResult<impl IntoResponse> {
    s.record_focus_loss(&id, body.unwrap_or_default().0.detail)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn scores_csv(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let csv = s.scores_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}

/// Routes of the survey API; media files under `media_root` are served at `/media`.
pub fn router(service: Shared, media_root: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/studies", post(create_study))
        .route("/studies/{id}", get(get_study))
        .route("/studies/{id}/open", post(open_study))
        .route("/studies/{id}/close", post(close_study))
        .route("/studies/{id}/session", get(assign))
        .route("/studies/{id}/scores.csv", get(scores_csv))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/focus-loss", post(focus_loss))
        .with_state(service);
    match media_root {
        Some(root) => api.nest_service("/media", ServeDir::new(root)),
        None => api,
    }
}
