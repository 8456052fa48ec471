use thiserror::Error;

use super::{NodeKind, NodeStatus, PruneBlocker};
use crate::ids::{AssetId, NodeId, ProjectId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown project {0}")]
    UnknownProject(ProjectId),
    #[error("project {0} already has a root")]
    RootAlreadyExists(ProjectId),
    #[error("project has no Init root yet")]
    MissingRoot,
    #[error("unknown parent node {0}")]
    UnknownParent(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is a Planning node in Draft; plan and materialize it (or prune it) before extending")]
    ParentNotExtendable(NodeId),
    #[error("add_child only creates IntentDraft or Planning nodes, not {0}")]
    InvalidChildKind(NodeKind),
    #[error("node {0} is not an IntentDraft")]
    NotIntentDraft(NodeId),
    #[error("intent text is empty")]
    EmptyIntent,
    #[error("intent of node {0} is already locked")]
    AlreadyLocked(NodeId),
    #[error("intent of node {0} is locked and cannot be edited")]
    IntentLocked(NodeId),
    #[error("node {0} is not a Planning node")]
    NotPlanningNode(NodeId),
    #[error("unknown workflow {0}")]
    UnknownWorkflow(String),
    #[error("edit touches {0}, which this operation may not change")]
    EditOutOfBounds(&'static str),
    #[error("candidate ({batch}, {candidate}) out of range")]
    IndexOutOfRange { batch: usize, candidate: usize },
    #[error("node {node} is {status}, not Succeeded")]
    NodeNotSucceeded { node: NodeId, status: NodeStatus },
    #[error("node {node} is {status}; expected {expected}")]
    InvalidStatus {
        node: NodeId,
        status: NodeStatus,
        expected: &'static str,
    },
    #[error("node {0} has a job in flight")]
    NodeBusy(NodeId),
    #[error("the Init root cannot be collapsed")]
    CannotCollapseRoot,
    #[error("the Init root cannot be pruned")]
    CannotPruneRoot,
    #[error("prune blocked by {} live reference(s)", .0.len())]
    PruneConflict(Vec<PruneBlocker>),
    #[error("asset {0} is not an output of a Succeeded node in this project")]
    InvalidReference(AssetId),
    #[error("spec revision conflict: expected {expected}, node is at {actual}")]
    RevisionConflict { expected: u64, actual: u64 },
    #[error("workflow {workflow} outputs {output:?} but node is {kind}")]
    WorkflowKindMismatch {
        workflow: String,
        output: crate::model::Modality,
        kind: NodeKind,
    },
    #[error("plan category {plan} does not match workflow {workflow} category {registered}")]
    PlanCategoryMismatch {
        plan: crate::model::ActionCategory,
        workflow: String,
        registered: crate::model::ActionCategory,
    },
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::UnknownProject(_) => "UnknownProject",
            ModelError::RootAlreadyExists(_) => "RootAlreadyExists",
            ModelError::MissingRoot => "MissingRoot",
            ModelError::UnknownParent(_) => "UnknownParent",
            ModelError::UnknownNode(_) => "UnknownNode",
            ModelError::ParentNotExtendable(_) => "ParentNotExtendable",
            ModelError::InvalidChildKind(_) => "InvalidChildKind",
            ModelError::NotIntentDraft(_) => "NotIntentDraft",
            ModelError::EmptyIntent => "EmptyIntent",
            ModelError::AlreadyLocked(_) => "AlreadyLocked",
            ModelError::IntentLocked(_) => "IntentLocked",
            ModelError::NotPlanningNode(_) => "NotPlanningNode",
            ModelError::UnknownWorkflow(_) => "UnknownWorkflow",
            ModelError::EditOutOfBounds(_) => "EditOutOfBounds",
            ModelError::IndexOutOfRange { .. } => "IndexOutOfRange",
            ModelError::NodeNotSucceeded { .. } => "NodeNotSucceeded",
            ModelError::InvalidStatus { .. } => "InvalidStatus",
            ModelError::NodeBusy(_) => "NodeBusy",
            ModelError::CannotCollapseRoot => "CannotCollapseRoot",
            ModelError::CannotPruneRoot => "CannotPruneRoot",
            ModelError::PruneConflict(_) => "PruneConflict",
            ModelError::InvalidReference(_) => "InvalidReference",
            ModelError::RevisionConflict { .. } => "RevisionConflict",
            ModelError::WorkflowKindMismatch { .. } => "WorkflowKindMismatch",
            ModelError::PlanCategoryMismatch { .. } => "PlanCategoryMismatch",
        }
    }
}
