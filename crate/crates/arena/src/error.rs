use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use gomoku_core::engine::EngineError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("{0}")]
    BadRequest(String),
    #[error("checkpoint unusable: {0}")]
    Checkpoint(String),
    #[error("cell {0} is occupied")]
    Occupied(String),
    #[error("{0}")]
    OutOfBounds(String),
    #[error("it is not {0}'s turn")]
    NotYourTurn(&'static str),
    #[error("session is finished")]
    SessionFinished,
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("no game {0} in the store")]
    UnknownGame(u64),
    #[error("evaluator failed: {0}")]
    Backend(String),
    #[error("store unreadable: {0}")]
    Store(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl ArenaError {
    pub fn code(&self) -> &'static str {
        match self {
            ArenaError::BadRequest(_) => "bad_request",
            ArenaError::Checkpoint(_) => "checkpoint_error",
            ArenaError::Occupied(_) => "occupied",
            ArenaError::OutOfBounds(_) => "out_of_bounds",
            ArenaError::NotYourTurn(_) => "not_your_turn",
            ArenaError::SessionFinished => "session_finished",
            ArenaError::UnknownSession(_) => "unknown_session",
            ArenaError::UnknownGame(_) => "unknown_game",
            ArenaError::Backend(_) => "backend_error",
            ArenaError::Store(_) => "store_error",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ArenaError::BadRequest(_) | ArenaError::Checkpoint(_) | ArenaError::OutOfBounds(_) => {
                StatusCode::BAD_REQUEST
            }
            ArenaError::Occupied(_) | ArenaError::NotYourTurn(_) | ArenaError::SessionFinished => {
                StatusCode::CONFLICT
            }
            ArenaError::UnknownSession(_) | ArenaError::UnknownGame(_) => StatusCode::NOT_FOUND,
            ArenaError::Backend(_) => StatusCode::BAD_GATEWAY,
            ArenaError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<EngineError> for ArenaError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Occupied(p) => ArenaError::Occupied(p.to_string()),
            EngineError::OutOfBounds { .. } => ArenaError::OutOfBounds(e.to_string()),
            EngineError::GameOver => ArenaError::SessionFinished,
            other => ArenaError::BadRequest(other.to_string()),
        }
    }
}

impl IntoResponse for ArenaError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
