use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use reeltree_core::engine::EngineError;
use serde_json::{json, Value};

/// Error envelope returned by every endpoint: `{code, message, details}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: code.into(),
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            ..Self::bad_request(code, message)
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            ..Self::bad_request("Internal", message)
        }
    }
}

/// HTTP status for an engine error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UnknownProject" | "UnknownNode" | "UnknownParent" | "UnknownJob" | "UnknownAsset" | "UnknownEntry"
        | "UnknownSegment" | "UnknownCandidate" | "UnknownProducer" => StatusCode::NOT_FOUND,
        "RootAlreadyExists" | "ProjectExists" | "NodeBusy" | "PlanInFlight" | "PruneConflict" | "RevisionConflict"
        | "AlreadyLocked" | "IntentLocked" | "StaleWriter" | "LeaseHeld" | "JobNotCancellable"
        | "ProvenanceConflict" | "InvalidStatus" | "NodeNotSucceeded" | "NodeNotPlanned" | "ClosedSession" => {
            StatusCode::CONFLICT
        }
        "ProviderUnavailable" | "ExecutorUnavailable" => StatusCode::SERVICE_UNAVAILABLE,
        "UnparseableResponse" | "EncoderFailed" | "ExecutionFailed" => StatusCode::BAD_GATEWAY,
        "StorageFailure"
        | "CorruptLog"
        | "Io"
        | "SeqMismatch"
        | "CorruptTree"
        | "ConfigError"
        | "TimestampRegression"
        | "DanglingSegment" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = e.code();
        Self {
            status: status_for(code),
            code: code.into(),
            message: e.to_string(),
            details: e.details(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::warn!(code = %self.code, "{}", self.message);
        }
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}
