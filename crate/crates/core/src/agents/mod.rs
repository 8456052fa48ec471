//! Planning agents: Master picks an action category, Knowledge optionally
//! clarifies unfamiliar terms, Workflow picks a compatible module and
//! Prompt drafts the prompt and parameters. All four talk to a pluggable
//! text-model provider through curated, versioned system templates.

#[cfg(feature = "http")]
mod http;
mod mock;
mod pipeline;
mod templates;

#[cfg(feature = "http")]
pub use http::HttpProvider;
pub use mock::{
    classify_intent, keyword_class, unknown_terms, FaultMode, KeywordClass, MockProvider, RecordingProvider,
    KEYWORD_CLASSES, ROLE_TOKEN_BOUNDS,
};
pub use pipeline::{parse_fenced_json, plan_step, PlanInput};
pub use templates::{Templates, CONTENT_RULES};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::AssetId;
use crate::model::{PathContext, TokenUsage};
use crate::store::GlobalContext;
use crate::workflows::WorkflowError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Master,
    Knowledge,
    Workflow,
    Prompt,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Master, Role::Knowledge, Role::Workflow, Role::Prompt];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Master => "master",
            Role::Knowledge => "knowledge",
            Role::Workflow => "workflow",
            Role::Prompt => "prompt",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What every agent sees: the parent's path context plus the project's
/// global context.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentContext {
    pub path: PathContext,
    pub global: GlobalContext,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub role: Role,
    pub system_template_id: String,
    pub context: AgentContext,
    pub user_intent: String,
    pub attachments: Vec<AssetId>,
    /// Role-specific structured input (chosen category, compatible
    /// workflows, parameter schema, clarification notes).
    pub role_input: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    pub token_usage: TokenUsage,
}

/// A text-completion backend. `system` is the rendered template text.
pub trait Provider: Send + Sync {
    fn generate(&self, system: &str, request: &ProviderRequest) -> Result<ProviderResponse, AgentError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("unparseable {role} response: {raw}")]
    UnparseableResponse { role: Role, raw: String },
    #[error("no compatible workflow")]
    NoCompatibleWorkflow,
    #[error("intent is empty")]
    IntentEmpty,
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("invalid template {id}: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("agent draft failed validation: {0}")]
    InvalidDraft(WorkflowError),
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::ProviderUnavailable(_) => "ProviderUnavailable",
            AgentError::UnparseableResponse { .. } => "UnparseableResponse",
            AgentError::NoCompatibleWorkflow => "NoCompatibleWorkflow",
            AgentError::IntentEmpty => "IntentEmpty",
            AgentError::UnknownTemplate(_) => "UnknownTemplate",
            AgentError::InvalidTemplate { .. } => "InvalidTemplate",
            AgentError::InvalidDraft(_) => "InvalidDraft",
        }
    }
}
