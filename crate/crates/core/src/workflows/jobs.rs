use serde::{Deserialize, Serialize};

use crate::ids::{AssetId, JobId, NodeId, ProjectId};
use crate::model::{Modality, NodeStatus, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::Cancelled)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotBinding {
    pub slot: String,
    pub modality: Modality,
    pub asset_id: Option<AssetId>,
}

/// Everything an executor needs, frozen when the job is enqueued.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRequest {
    pub workflow_id: String,
    pub parameters: Params,
    pub prompt_text: String,
    pub inputs: Vec<SlotBinding>,
    /// Index the resulting batch will take in the node's candidate list.
    pub batch_ordinal: usize,
}

impl ExecutionRequest {
    pub fn num_candidates(&self) -> usize {
        self.parameters
            .get("num_candidates")
            .and_then(|v| v.as_i64())
            .unwrap_or(1)
            .max(1) as usize
    }

    pub fn input(&self, slot: &str) -> Option<&AssetId> {
        self.inputs
            .iter()
            .find(|b| b.slot == slot)
            .and_then(|b| b.asset_id.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: JobId,
    pub project_id: ProjectId,
    pub node_id: NodeId,
    pub state: JobState,
    pub progress: f32,
    pub requested_at: u64,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub error: Option<String>,
    /// Node status to restore if the job is cancelled while queued.
    pub prior_status: NodeStatus,
    pub request: ExecutionRequest,
}
