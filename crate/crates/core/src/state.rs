//! A project's full state as the fold of its event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::event::{EventRecord, ProjectEvent};
use crate::ids::{AssetId, JobId, NodeId, ProjectId};
use crate::model::{summarize, ModelError, Node, NodeKind, NodeStatus, PathContext, PathEntry, StepSpec};
use crate::stitching::Timeline;
use crate::store::{Asset, Project, StoreError};
use crate::workflows::{Job, JobState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub project: Project,
    pub root: Option<NodeId>,
    pub nodes: BTreeMap<NodeId, Node>,
    pub assets: BTreeMap<AssetId, Asset>,
    pub timeline: Timeline,
    pub jobs: BTreeMap<JobId, Job>,
    /// Sequence number of the last applied event. Not part of the snapshot.
    #[serde(skip)]
    pub last_seq: u64,
}

impl ProjectState {
    pub fn new(project: Project) -> Self {
        Self {
            project,
            root: None,
            nodes: BTreeMap::new(),
            assets: BTreeMap::new(),
            timeline: Timeline::default(),
            jobs: BTreeMap::new(),
            last_seq: 0,
        }
    }

    pub fn project_id(&self) -> &ProjectId {
        &self.project.project_id
    }

    /// Folds a complete event log. The first record must be `ProjectCreated`
    /// and sequence numbers must be gapless from 1.
    pub fn replay<'a>(records: impl IntoIterator<Item = &'a EventRecord>) -> Result<Self, StoreError> {
        let mut state: Option<ProjectState> = None;
        for r in records {
            match (&mut state, &r.event) {
                (None, ProjectEvent::ProjectCreated { project }) if r.seq == 1 => {
                    let mut s = ProjectState::new(project.clone());
                    s.last_seq = 1;
                    state = Some(s);
                }
                (None, _) => {
                    return Err(StoreError::CorruptLog(format!(
                        "log must start with ProjectCreated at seq 1, found {} at {}",
                        r.event.tag(),
                        r.seq
                    )))
                }
                (Some(s), _) => {
                    if r.seq != s.last_seq + 1 {
                        return Err(StoreError::CorruptLog(format!(
                            "sequence gap: {} follows {}",
                            r.seq, s.last_seq
                        )));
                    }
                    s.apply(r);
                }
            }
        }
        state.ok_or_else(|| StoreError::CorruptLog("empty log".into()))
    }

    /// Applies one already-validated event.
    pub fn apply(&mut self, record: &EventRecord) {
        self.last_seq = record.seq;
        let ts = record.timestamp;
        let pid = self.project.project_id.clone();
        match &record.event {
            ProjectEvent::ProjectCreated { project } => self.project = project.clone(),
            ProjectEvent::SettingsUpdated {
                global_context,
                layout,
                modality_colors,
                still_duration_ms,
            } => {
                self.project.global_context = global_context.clone();
                self.project.layout_config = *layout;
                self.project.modality_colors = modality_colors.clone();
                if let Some(ms) = still_duration_ms {
                    self.timeline.still_duration_ms = *ms;
                }
            }
            ProjectEvent::RootCreated { node_id } => {
                self.root = Some(node_id.clone());
                self.nodes.insert(
                    node_id.clone(),
                    blank_node(node_id.clone(), pid, None, NodeKind::Init, NodeStatus::Succeeded, ts, 0),
                );
            }
            ProjectEvent::NodeAdded {
                node_id,
                parent_id,
                kind,
                order_key,
            } => {
                if let Some(p) = self.nodes.get_mut(parent_id) {
                    p.next_child_order = p.next_child_order.max(order_key + 1);
                }
                self.nodes.insert(
                    node_id.clone(),
                    blank_node(
                        node_id.clone(),
                        pid,
                        Some(parent_id.clone()),
                        *kind,
                        NodeStatus::Draft,
                        ts,
                        *order_key,
                    ),
                );
            }
            ProjectEvent::SpecEdited { node_id, patch } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    patch.apply_to(&mut n.spec);
                    n.spec_revision += 1;
                }
            }
            ProjectEvent::IntentLocked { node_id } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.spec.locked = true;
                    n.spec_revision += 1;
                }
            }
            ProjectEvent::PlanStored {
                node_id,
                intent_text,
                reference_asset_ids,
                plan,
            } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.spec.intent_text = intent_text.clone();
                    n.spec.reference_asset_ids = reference_asset_ids.clone();
                    n.plan = Some(plan.clone());
                    n.status = NodeStatus::Planned;
                    n.spec_revision += 1;
                }
            }
            ProjectEvent::Materialized {
                node_id,
                new_kind,
                plan,
                spec,
                ..
            } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.kind = *new_kind;
                    n.plan = Some(plan.clone());
                    n.spec = spec.clone();
                    n.spec_revision += 1;
                }
            }
            ProjectEvent::JobQueued { job } => {
                if let Some(n) = self.nodes.get_mut(&job.node_id) {
                    n.status = NodeStatus::Queued;
                }
                let mut job = job.clone();
                job.requested_at = ts;
                self.jobs.insert(job.job_id.clone(), job);
            }
            ProjectEvent::JobStarted { job_id, node_id } => {
                if let Some(j) = self.jobs.get_mut(job_id) {
                    j.state = JobState::Running;
                    j.started_at = Some(ts);
                    j.progress = 0.5;
                }
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.status = NodeStatus::Running;
                }
            }
            ProjectEvent::BatchAppended {
                job_id,
                node_id,
                batch,
                assets,
            } => {
                if let Some(j) = self.jobs.get_mut(job_id) {
                    j.state = JobState::Done;
                    j.finished_at = Some(ts);
                    j.progress = 1.0;
                }
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.candidates.push(batch.clone());
                    n.status = NodeStatus::Succeeded;
                }
                for a in assets {
                    self.assets.entry(a.asset_id.clone()).or_insert_with(|| a.clone());
                }
            }
            ProjectEvent::JobFailed { job_id, node_id, error } => {
                if let Some(j) = self.jobs.get_mut(job_id) {
                    j.state = JobState::Failed;
                    j.finished_at = Some(ts);
                    j.error = Some(error.clone());
                }
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.status = NodeStatus::Failed;
                }
            }
            ProjectEvent::JobCancelled { job_id, node_id } => {
                let mut prior = NodeStatus::Planned;
                if let Some(j) = self.jobs.get_mut(job_id) {
                    j.state = JobState::Cancelled;
                    j.finished_at = Some(ts);
                    prior = j.prior_status;
                }
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.status = prior;
                }
            }
            ProjectEvent::AssetImported { asset } => {
                self.assets
                    .entry(asset.asset_id.clone())
                    .or_insert_with(|| asset.clone());
            }
            ProjectEvent::CandidateSelected { node_id, candidate } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.selected = Some(*candidate);
                }
            }
            ProjectEvent::RetainChanged {
                node_id,
                candidate,
                retained,
            } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    if *retained {
                        n.retained_flags.insert(*candidate);
                    } else {
                        n.retained_flags.remove(candidate);
                    }
                }
            }
            ProjectEvent::CollapseChanged { node_id, collapsed } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.collapsed = *collapsed;
                }
            }
            ProjectEvent::Pruned { removed, .. } => {
                for id in removed {
                    self.nodes.remove(id);
                }
            }
            ProjectEvent::Collected { entry } => self.timeline.collection.push(entry.clone()),
            ProjectEvent::EntryRemoved { entry_id } => self.timeline.collection.retain(|e| &e.entry_id != entry_id),
            ProjectEvent::SegmentPlaced { segment } => self.timeline.insert_segment(segment.clone()),
            ProjectEvent::SegmentMoved { segment_id, new_index } => self.timeline.move_segment(segment_id, *new_index),
            ProjectEvent::SegmentRemoved { segment_id } => self.timeline.remove_segment(segment_id),
            ProjectEvent::AssetsReleased { asset_ids } => {
                for id in asset_ids {
                    self.assets.remove(id);
                }
            }
        }
    }

    /// Canonical serialized snapshot (excludes `last_seq`).
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    pub fn snapshot_hash(&self) -> String {
        hex::encode(Sha256::digest(self.snapshot_bytes()))
    }

    pub fn node(&self, id: &NodeId) -> Result<&Node, ModelError> {
        self.nodes.get(id).ok_or_else(|| ModelError::UnknownNode(id.clone()))
    }

    pub fn root_node(&self) -> Option<&Node> {
        self.root.as_ref().and_then(|r| self.nodes.get(r))
    }

    /// Children of every node, each list in `order_key` order.
    pub fn child_index(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut idx: BTreeMap<NodeId, Vec<(u64, NodeId)>> = BTreeMap::new();
        for n in self.nodes.values() {
            if let Some(p) = &n.parent_id {
                idx.entry(p.clone()).or_default().push((n.order_key, n.node_id.clone()));
            }
        }
        idx.into_iter()
            .map(|(k, mut v)| {
                v.sort();
                (k, v.into_iter().map(|(_, id)| id).collect())
            })
            .collect()
    }

    pub fn children(&self, id: &NodeId) -> Vec<&Node> {
        let mut c: Vec<&Node> = self
            .nodes
            .values()
            .filter(|n| n.parent_id.as_ref() == Some(id))
            .collect();
        c.sort_by_key(|n| n.order_key);
        c
    }

    /// Pre-order listing of `id` and its descendants, siblings in order.
    pub fn subtree(&self, id: &NodeId) -> Vec<NodeId> {
        let idx = self.child_index();
        let mut out = vec![];
        let mut stack = vec![id.clone()];
        while let Some(n) = stack.pop() {
            if let Some(kids) = idx.get(&n) {
                stack.extend(kids.iter().rev().cloned());
            }
            out.push(n);
        }
        out
    }

    /// Nodes from the root down to `id`, inclusive.
    pub fn path_to(&self, id: &NodeId) -> Result<Vec<&Node>, ModelError> {
        let mut path = vec![self.node(id)?];
        while let Some(p) = path.last().and_then(|n| n.parent_id.as_ref()) {
            path.push(self.node(p)?);
            if path.len() > self.nodes.len() {
                break;
            }
        }
        path.reverse();
        Ok(path)
    }

    pub fn depth(&self, id: &NodeId) -> Result<usize, ModelError> {
        Ok(self.path_to(id)?.len() - 1)
    }

    /// Scene intent of the nearest locked IntentDraft at or above `id`, and
    /// the root-to-node path summary.
    pub fn derive_context(&self, id: &NodeId) -> Result<PathContext, ModelError> {
        let path = self.path_to(id)?;
        let scene_intent = path
            .iter()
            .rev()
            .find(|n| n.kind == NodeKind::IntentDraft && n.spec.locked)
            .map(|n| n.spec.intent_text.clone())
            .unwrap_or_default();
        let path = path
            .into_iter()
            .map(|n| PathEntry {
                node_id: n.node_id.clone(),
                kind: n.kind,
                action_category: n.spec.action_category,
                prompt_summary: summarize(if n.spec.prompt_text.is_empty() {
                    &n.spec.intent_text
                } else {
                    &n.spec.prompt_text
                }),
                selected_asset_ids: n.selected_asset().cloned().into_iter().collect(),
            })
            .collect();
        Ok(PathContext { scene_intent, path })
    }

    /// An asset may be referenced when it is indexed and its producer is alive.
    pub fn asset_referenceable(&self, id: &AssetId) -> bool {
        self.assets
            .get(id)
            .is_some_and(|a| self.nodes.contains_key(&a.producer_node_id))
    }

    pub fn check_references(&self, spec: &StepSpec) -> Result<(), ModelError> {
        for id in &spec.reference_asset_ids {
            if !self.asset_referenceable(id) {
                return Err(ModelError::InvalidReference(id.clone()));
            }
        }
        Ok(())
    }

    pub fn active_job_for(&self, node: &NodeId) -> Option<&Job> {
        self.jobs
            .values()
            .find(|j| &j.node_id == node && !j.state.is_terminal())
    }

    /// Asset ids reachable from live state: produced by a live node, held by
    /// the timeline, or referenced by a live spec.
    pub fn live_assets(&self) -> BTreeSet<AssetId> {
        let mut live = BTreeSet::new();
        for a in self.assets.values() {
            if self.nodes.contains_key(&a.producer_node_id) {
                live.insert(a.asset_id.clone());
            }
        }
        for n in self.nodes.values() {
            live.extend(n.spec.reference_asset_ids.iter().cloned());
        }
        live.extend(self.timeline.collection.iter().map(|e| e.asset_id.clone()));
        live.extend(self.timeline.segments.iter().map(|s| s.asset_id.clone()));
        live
    }
}

fn blank_node(
    node_id: NodeId,
    project_id: ProjectId,
    parent_id: Option<NodeId>,
    kind: NodeKind,
    status: NodeStatus,
    created_at: u64,
    order_key: u64,
) -> Node {
    Node {
        node_id,
        project_id,
        parent_id,
        kind,
        status,
        spec: StepSpec::default(),
        plan: None,
        candidates: vec![],
        selected: None,
        retained_flags: BTreeSet::new(),
        collapsed: false,
        created_at,
        order_key,
        next_child_order: 0,
        spec_revision: 0,
    }
}
