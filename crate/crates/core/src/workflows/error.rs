use thiserror::Error;

use crate::ids::{AssetId, JobId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkflowError {
    #[error("registry parse error: {0}")]
    ParseError(String),
    #[error("duplicate workflow id {0}")]
    DuplicateWorkflowId(String),
    #[error("registry schema error: {0}")]
    SchemaError(String),
    #[error("missing required input for slot {0}")]
    MissingRequiredInput(String),
    #[error("parameter {0} out of range")]
    ParamOutOfRange(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("parameter {0} has the wrong type")]
    ParamTypeMismatch(String),
    #[error("referenced asset {0} does not exist")]
    UnknownAsset(AssetId),
    #[error("no workflow of that category is satisfiable with the available inputs")]
    NoCompatibleWorkflow,
    #[error("node is not planned for execution")]
    NodeNotPlanned,
    #[error("spec failed validation: {0}")]
    ValidationFailed(String),
    #[error("executor {0} is not available")]
    ExecutorUnavailable(String),
    #[error("executor failed: {0}")]
    ExecutionFailed(String),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} is not queued and cannot be cancelled")]
    JobNotCancellable(JobId),
}

impl WorkflowError {
    pub fn code(&self) -> &'static str {
        match self {
            WorkflowError::ParseError(_) => "ParseError",
            WorkflowError::DuplicateWorkflowId(_) => "DuplicateWorkflowId",
            WorkflowError::SchemaError(_) => "SchemaError",
            WorkflowError::MissingRequiredInput(_) => "MissingRequiredInput",
            WorkflowError::ParamOutOfRange(_) => "ParamOutOfRange",
            WorkflowError::UnknownParam(_) => "UnknownParam",
            WorkflowError::ParamTypeMismatch(_) => "ParamTypeMismatch",
            WorkflowError::UnknownAsset(_) => "UnknownAsset",
            WorkflowError::NoCompatibleWorkflow => "NoCompatibleWorkflow",
            WorkflowError::NodeNotPlanned => "NodeNotPlanned",
            WorkflowError::ValidationFailed(_) => "ValidationFailed",
            WorkflowError::ExecutorUnavailable(_) => "ExecutorUnavailable",
            WorkflowError::ExecutionFailed(_) => "ExecutionFailed",
            WorkflowError::UnknownJob(_) => "UnknownJob",
            WorkflowError::JobNotCancellable(_) => "JobNotCancellable",
        }
    }
}
