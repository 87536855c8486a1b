//! HTTP+JSON front end over [`SessionManager`].

use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use follower_core::service::{CreateSession, ServiceError, SessionManager};
use follower_core::UserAnswer;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.code(), "reason": self.0.to_string() }))).into_response()
    }
}

type Shared = Arc<SessionManager>;
type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub query_id: String,
    pub same_object: bool,
}

// Blocking work runs on the blocking pool: a step is one NN scan plus one
// threshold solve, but the per-session lock may be contended.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(ServiceError::Internal(e.to_string())))?.map_err(ApiError)
}

async fn create(
    State(m): State<Shared>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let session_id = blocking(move || m.create(req)).await?;
    Ok((StatusCode::CREATED, Json(Created { session_id })))
}

async fn list(State(m): State<Shared>) -> Json<Vec<String>> {
    Json(m.session_ids())
}

async fn step(State(m): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<serde_json::Value> {
    let r = blocking(move || m.step(&id)).await?;
    Ok(Json(serde_json::to_value(r).expect("serializable")))
}

async fn pending(State(m): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<serde_json::Value> {
    let p = m.pending(&id)?;
    Ok(Json(json!({ "pending": p })))
}

async fn answer(
    State(m): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<AnswerRequest>,
) -> ApiResult<follower_core::DecisionRecord> {
    let answer = UserAnswer { same_object: req.same_object };
    Ok(Json(blocking(move || m.answer(&id, &req.query_id, answer)).await?))
}

async fn state(
    State(m): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<follower_core::service::SessionState> {
    Ok(Json(m.state(&id)?))
}

async fn trace(State(m): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Vec<follower_core::DecisionRecord>> {
    Ok(Json(m.trace(&id)?))
}

/// Session API, plus files under `static_dir` at `/static` (thumbnails and UI assets).
pub fn router(manager: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/pending", get(pending))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/trace", get(trace))
        .with_state(manager);
    match static_dir {
        Some(dir) => api.nest_service("/static", ServeDir::new(dir)),
        None => api,
    }
}
