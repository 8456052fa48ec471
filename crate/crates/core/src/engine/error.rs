use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::AgentError;
use crate::ids::{JobId, ProjectId};
use crate::layout::LayoutError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::stitching::StitchError;
use crate::store::StoreError;
use crate::workflows::WorkflowError;

/// Any failure surfaced by the engine. `code()` is the stable name used in
/// API error envelopes and CLI diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Stitch(#[from] StitchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("unrecognized media; pass a modality explicitly")]
    UnknownMedia,
    #[error("session event {0} is recorded by the engine and cannot be submitted")]
    ReservedSessionEvent(&'static str),
    #[error("a plan for this node is already in flight")]
    PlanInFlight,
    #[error("job {job} does not belong to project {project}")]
    ForeignJob { job: JobId, project: ProjectId },
    #[error("configuration error: {0}")]
    Config(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Model(e) => e.code(),
            EngineError::Store(e) => e.code(),
            EngineError::Workflow(e) => e.code(),
            EngineError::Agent(e) => e.code(),
            EngineError::Stitch(e) => e.code(),
            EngineError::Metrics(e) => e.code(),
            EngineError::Layout(LayoutError::InvalidConfig(_)) => "InvalidConfig",
            EngineError::Layout(LayoutError::CorruptTree(_)) => "CorruptTree",
            EngineError::InvalidSettings(_) => "InvalidSettings",
            EngineError::UnknownMedia => "UnknownMedia",
            EngineError::ReservedSessionEvent(_) => "ReservedSessionEvent",
            EngineError::PlanInFlight => "PlanInFlight",
            EngineError::ForeignJob { .. } => "UnknownJob",
            EngineError::Config(_) => "ConfigError",
        }
    }

    /// Structured extras for the error envelope.
    pub fn details(&self) -> Value {
        match self {
            EngineError::Model(ModelError::PruneConflict(blockers)) => json!({ "blockers": blockers }),
            EngineError::Model(ModelError::RevisionConflict { expected, actual }) => {
                json!({ "expected": expected, "actual": actual })
            }
            EngineError::Agent(AgentError::UnparseableResponse { role, raw }) => json!({ "role": role, "raw": raw }),
            EngineError::Stitch(StitchError::BadTrim {
                trim_in_ms,
                trim_out_ms,
                limit_ms,
            }) => json!({ "trim_in_ms": trim_in_ms, "trim_out_ms": trim_out_ms, "limit_ms": limit_ms }),
            _ => Value::Null,
        }
    }
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Store(StoreError::from(e))
    }
}
