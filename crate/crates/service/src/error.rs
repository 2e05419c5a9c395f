use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

use telewatch_core::api::ErrorBody;
use telewatch_core::detect::EventStatus;

use crate::log::ReplayError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("unknown event {0}")]
    UnknownEvent(String),
    #[error("unknown report {0}")]
    UnknownReport(String),
    #[error("unknown track {0}")]
    UnknownTrack(String),
    #[error("event {id} is already {status}")]
    AlreadyResolved { id: String, status: EventStatus },
    #[error("bad dataset: {0}")]
    BadDataset(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("event log: {0}")]
    Log(#[from] ReplayError),
    #[error("internal: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownRun(_) => "unknown-run",
            ServiceError::UnknownEvent(_) => "unknown-event",
            ServiceError::UnknownReport(_) => "unknown-report",
            ServiceError::UnknownTrack(_) => "unknown-track",
            ServiceError::AlreadyResolved { .. } => "already-resolved",
            ServiceError::BadDataset(_) => "bad-dataset",
            ServiceError::BadConfig(_) => "bad-config",
            ServiceError::BadRequest(_) => "bad-request",
            ServiceError::Log(_) => "event-log",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownRun(_)
            | ServiceError::UnknownEvent(_)
            | ServiceError::UnknownReport(_)
            | ServiceError::UnknownTrack(_) => StatusCode::NOT_FOUND,
            ServiceError::AlreadyResolved { .. } => StatusCode::CONFLICT,
            ServiceError::BadDataset(_) | ServiceError::BadConfig(_) | ServiceError::BadRequest(_) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::Log(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.to_string(),
            code: self.code().to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
