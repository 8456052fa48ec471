//! Project events. Every mutation of a project is one or more of these,
//! appended to the project log before it is applied.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{AssetId, EntryId, JobId, NodeId, SegmentId};
use crate::model::{CandidateBatch, CandidateRef, NodeKind, Plan, SpecPatch, StepSpec};
use crate::stitching::{CollectionEntry, Segment};
use crate::store::{Asset, GlobalContext, Project, SpacingConfig};
use crate::workflows::Job;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum ProjectEvent {
    ProjectCreated {
        project: Project,
    },
    SettingsUpdated {
        global_context: GlobalContext,
        layout: SpacingConfig,
        modality_colors: BTreeMap<NodeKind, String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        still_duration_ms: Option<u64>,
    },
    RootCreated {
        node_id: NodeId,
    },
    NodeAdded {
        node_id: NodeId,
        parent_id: NodeId,
        kind: NodeKind,
        order_key: u64,
    },
    SpecEdited {
        node_id: NodeId,
        patch: SpecPatch,
    },
    IntentLocked {
        node_id: NodeId,
    },
    PlanStored {
        node_id: NodeId,
        intent_text: String,
        reference_asset_ids: Vec<AssetId>,
        plan: Plan,
    },
    Materialized {
        node_id: NodeId,
        prior_kind: NodeKind,
        new_kind: NodeKind,
        plan: Plan,
        spec: StepSpec,
    },
    JobQueued {
        job: Job,
    },
    JobStarted {
        job_id: JobId,
        node_id: NodeId,
    },
    BatchAppended {
        job_id: JobId,
        node_id: NodeId,
        batch: CandidateBatch,
        assets: Vec<Asset>,
    },
    JobFailed {
        job_id: JobId,
        node_id: NodeId,
        error: String,
    },
    JobCancelled {
        job_id: JobId,
        node_id: NodeId,
    },
    AssetImported {
        asset: Asset,
    },
    CandidateSelected {
        node_id: NodeId,
        candidate: CandidateRef,
    },
    RetainChanged {
        node_id: NodeId,
        candidate: CandidateRef,
        retained: bool,
    },
    CollapseChanged {
        node_id: NodeId,
        collapsed: bool,
    },
    Pruned {
        node_id: NodeId,
        removed: Vec<NodeId>,
    },
    Collected {
        entry: CollectionEntry,
    },
    EntryRemoved {
        entry_id: EntryId,
    },
    SegmentPlaced {
        segment: Segment,
    },
    SegmentMoved {
        segment_id: SegmentId,
        new_index: u32,
    },
    SegmentRemoved {
        segment_id: SegmentId,
    },
    AssetsReleased {
        asset_ids: Vec<AssetId>,
    },
}

impl ProjectEvent {
    pub fn tag(&self) -> &'static str {
        match self {
            ProjectEvent::ProjectCreated { .. } => "ProjectCreated",
            ProjectEvent::SettingsUpdated { .. } => "SettingsUpdated",
            ProjectEvent::RootCreated { .. } => "RootCreated",
            ProjectEvent::NodeAdded { .. } => "NodeAdded",
            ProjectEvent::SpecEdited { .. } => "SpecEdited",
            ProjectEvent::IntentLocked { .. } => "IntentLocked",
            ProjectEvent::PlanStored { .. } => "PlanStored",
            ProjectEvent::Materialized { .. } => "Materialized",
            ProjectEvent::JobQueued { .. } => "JobQueued",
            ProjectEvent::JobStarted { .. } => "JobStarted",
            ProjectEvent::BatchAppended { .. } => "BatchAppended",
            ProjectEvent::JobFailed { .. } => "JobFailed",
            ProjectEvent::JobCancelled { .. } => "JobCancelled",
            ProjectEvent::AssetImported { .. } => "AssetImported",
            ProjectEvent::CandidateSelected { .. } => "CandidateSelected",
            ProjectEvent::RetainChanged { .. } => "RetainChanged",
            ProjectEvent::CollapseChanged { .. } => "CollapseChanged",
            ProjectEvent::Pruned { .. } => "Pruned",
            ProjectEvent::Collected { .. } => "Collected",
            ProjectEvent::EntryRemoved { .. } => "EntryRemoved",
            ProjectEvent::SegmentPlaced { .. } => "SegmentPlaced",
            ProjectEvent::SegmentMoved { .. } => "SegmentMoved",
            ProjectEvent::SegmentRemoved { .. } => "SegmentRemoved",
            ProjectEvent::AssetsReleased { .. } => "AssetsReleased",
        }
    }
}

/// One line of a project's event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub event: ProjectEvent,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_wire_shape() {
        let r = EventRecord {
            seq: 1,
            timestamp: 5,
            event: ProjectEvent::IntentLocked {
                node_id: NodeId::new("ab"),
            },
        };
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(
            line,
            r#"{"seq":1,"timestamp":5,"kind":"IntentLocked","payload":{"node_id":"ab"}}"#
        );
        let back: EventRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }
}
