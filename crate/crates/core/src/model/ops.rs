//! Structural operations on a project tree.
//!
//! Each operation validates against the current state and returns the
//! events that perform it. Nothing here mutates state; the caller appends
//! the events and folds them through `ProjectState::apply`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CandidateRef, ModelError, NodeKind, NodeStatus, Params, Plan, StepSpec, TokenUsage};
use crate::event::ProjectEvent;
use crate::ids::{AssetId, EntryId, IdSource, JobId, NodeId, SegmentId};
use crate::state::ProjectState;
use crate::workflows::Registry;

/// A partial spec edit. `parameters` overlays the existing map.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecPatch {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameters: Option<Params>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_asset_ids: Option<Vec<AssetId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workflow_id: Option<String>,
}

impl SpecPatch {
    pub fn is_empty(&self) -> bool {
        self == &SpecPatch::default()
    }

    pub fn apply_to(&self, spec: &mut StepSpec) {
        if let Some(t) = &self.intent_text {
            spec.intent_text = t.clone();
        }
        if let Some(t) = &self.prompt_text {
            spec.prompt_text = t.clone();
        }
        if let Some(p) = &self.parameters {
            for (k, v) in p {
                spec.parameters.insert(k.clone(), v.clone());
            }
        }
        if let Some(r) = &self.reference_asset_ids {
            spec.reference_asset_ids = r.clone();
        }
        if let Some(w) = &self.workflow_id {
            spec.workflow_id = Some(w.clone());
        }
    }
}

/// A live reference that keeps a subtree from being pruned.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PruneBlocker {
    Segment { segment_id: SegmentId, asset_id: AssetId },
    CollectionEntry { entry_id: EntryId, asset_id: AssetId },
    NodeSpec { node_id: NodeId, asset_id: AssetId },
    ActiveJob { job_id: JobId, node_id: NodeId },
}

impl ProjectState {
    pub fn op_create_root(&self, ids: &mut IdSource) -> Result<(NodeId, ProjectEvent), ModelError> {
        if self.root.is_some() {
            return Err(ModelError::RootAlreadyExists(self.project_id().clone()));
        }
        let node_id = NodeId::new(ids.next("node"));
        Ok((node_id.clone(), ProjectEvent::RootCreated { node_id }))
    }

    pub fn op_add_child(
        &self,
        parent_id: &NodeId,
        kind: NodeKind,
        ids: &mut IdSource,
    ) -> Result<(NodeId, ProjectEvent), ModelError> {
        let parent = self
            .nodes
            .get(parent_id)
            .ok_or_else(|| ModelError::UnknownParent(parent_id.clone()))?;
        if !matches!(kind, NodeKind::IntentDraft | NodeKind::Planning) {
            return Err(ModelError::InvalidChildKind(kind));
        }
        // A Planning node is extended only once it has become a modal node.
        if parent.kind == NodeKind::Planning {
            return Err(ModelError::ParentNotExtendable(parent_id.clone()));
        }
        let node_id = NodeId::new(ids.next("node"));
        let event = ProjectEvent::NodeAdded {
            node_id: node_id.clone(),
            parent_id: parent_id.clone(),
            kind,
            order_key: parent.next_child_order,
        };
        Ok((node_id, event))
    }

    /// Adds a modal child with its workflow chosen up front, skipping the
    /// planning agents. The node lands in `Planned` like a materialized one.
    pub fn op_add_modal(
        &self,
        parent_id: &NodeId,
        workflow_id: &str,
        spec: SpecPatch,
        registry: &Registry,
        ids: &mut IdSource,
    ) -> Result<(NodeId, Vec<ProjectEvent>), ModelError> {
        let wf = registry
            .get(workflow_id)
            .ok_or_else(|| ModelError::UnknownWorkflow(workflow_id.to_owned()))?;
        if spec.workflow_id.is_some() {
            return Err(ModelError::EditOutOfBounds("workflow_id"));
        }
        let (node_id, added) = self.op_add_child(parent_id, NodeKind::Planning, ids)?;
        let refs = spec.reference_asset_ids.clone().unwrap_or_default();
        for r in &refs {
            if !self.asset_referenceable(r) {
                return Err(ModelError::InvalidReference(r.clone()));
            }
        }
        let intent = spec.intent_text.clone().unwrap_or_default();
        let plan = Plan {
            action_category: wf.action_category,
            workflow_id: wf.workflow_id.clone(),
            prompt_draft: spec.prompt_text.clone().unwrap_or_else(|| intent.clone()),
            parameter_draft: spec.parameters.clone().unwrap_or_default(),
            knowledge_notes: None,
            token_usage: TokenUsage::default(),
        };
        let mut new_spec = StepSpec {
            intent_text: intent.clone(),
            reference_asset_ids: refs.clone(),
            ..StepSpec::default()
        };
        fill_from_plan(&mut new_spec, &plan);
        let events = vec![
            added,
            ProjectEvent::PlanStored {
                node_id: node_id.clone(),
                intent_text: intent,
                reference_asset_ids: refs,
                plan: plan.clone(),
            },
            ProjectEvent::Materialized {
                node_id: node_id.clone(),
                prior_kind: NodeKind::Planning,
                new_kind: wf.output_modality.node_kind(),
                plan,
                spec: new_spec,
            },
        ];
        Ok((node_id, events))
    }

    pub fn op_edit_spec(
        &self,
        node_id: &NodeId,
        patch: SpecPatch,
        base_revision: Option<u64>,
        registry: &Registry,
    ) -> Result<ProjectEvent, ModelError> {
        let node = self.node(node_id)?;
        if let Some(expected) = base_revision {
            if expected != node.spec_revision {
                return Err(ModelError::RevisionConflict {
                    expected,
                    actual: node.spec_revision,
                });
            }
        }
        if node.kind == NodeKind::Init {
            return Err(ModelError::EditOutOfBounds("the Init root"));
        }
        if node.status.is_busy() {
            return Err(ModelError::NodeBusy(node_id.clone()));
        }
        if patch.intent_text.is_some() {
            match node.kind {
                NodeKind::IntentDraft if node.spec.locked => return Err(ModelError::IntentLocked(node_id.clone())),
                NodeKind::IntentDraft | NodeKind::Planning => {}
                _ => return Err(ModelError::EditOutOfBounds("intent_text")),
            }
        }
        if let Some(wf_id) = &patch.workflow_id {
            let Some(output) = node.kind.modality() else {
                return Err(ModelError::EditOutOfBounds("workflow_id"));
            };
            let wf = registry
                .get(wf_id)
                .ok_or_else(|| ModelError::UnknownWorkflow(wf_id.clone()))?;
            if wf.output_modality != output {
                return Err(ModelError::WorkflowKindMismatch {
                    workflow: wf_id.clone(),
                    output: wf.output_modality,
                    kind: node.kind,
                });
            }
        }
        if let Some(refs) = &patch.reference_asset_ids {
            for r in refs {
                if !self.asset_referenceable(r) {
                    return Err(ModelError::InvalidReference(r.clone()));
                }
            }
        }
        Ok(ProjectEvent::SpecEdited {
            node_id: node_id.clone(),
            patch,
        })
    }

    pub fn op_lock_intent(&self, node_id: &NodeId) -> Result<ProjectEvent, ModelError> {
        let node = self.node(node_id)?;
        if node.kind != NodeKind::IntentDraft {
            return Err(ModelError::NotIntentDraft(node_id.clone()));
        }
        if node.spec.locked {
            return Err(ModelError::AlreadyLocked(node_id.clone()));
        }
        if node.spec.intent_text.trim().is_empty() {
            return Err(ModelError::EmptyIntent);
        }
        Ok(ProjectEvent::IntentLocked {
            node_id: node_id.clone(),
        })
    }

    /// Checks that `node_id` may receive a plan: a Planning node that has not
    /// been materialized, with a non-empty intent and valid references.
    pub fn check_plannable(
        &self,
        node_id: &NodeId,
        intent_text: &str,
        reference_asset_ids: &[AssetId],
    ) -> Result<(), ModelError> {
        let node = self.node(node_id)?;
        if node.kind != NodeKind::Planning {
            return Err(ModelError::NotPlanningNode(node_id.clone()));
        }
        if !matches!(node.status, NodeStatus::Draft | NodeStatus::Planned) {
            return Err(ModelError::InvalidStatus {
                node: node_id.clone(),
                status: node.status,
                expected: "Draft or Planned",
            });
        }
        if intent_text.trim().is_empty() {
            return Err(ModelError::EmptyIntent);
        }
        for r in reference_asset_ids {
            if !self.asset_referenceable(r) {
                return Err(ModelError::InvalidReference(r.clone()));
            }
        }
        Ok(())
    }

    pub fn op_store_plan(
        &self,
        node_id: &NodeId,
        intent_text: &str,
        reference_asset_ids: Vec<AssetId>,
        plan: Plan,
        registry: &Registry,
    ) -> Result<ProjectEvent, ModelError> {
        self.check_plannable(node_id, intent_text, &reference_asset_ids)?;
        check_plan(&plan, registry)?;
        Ok(ProjectEvent::PlanStored {
            node_id: node_id.clone(),
            intent_text: intent_text.to_owned(),
            reference_asset_ids,
            plan,
        })
    }

    /// Turns a planned Planning node into the modal node its workflow
    /// produces. `plan` overrides the stored plan when given.
    pub fn op_materialize(
        &self,
        node_id: &NodeId,
        plan: Option<Plan>,
        edits: SpecPatch,
        registry: &Registry,
    ) -> Result<ProjectEvent, ModelError> {
        let node = self.node(node_id)?;
        if node.kind != NodeKind::Planning {
            return Err(ModelError::NotPlanningNode(node_id.clone()));
        }
        if edits.intent_text.is_some() {
            return Err(ModelError::EditOutOfBounds("intent_text"));
        }
        if edits.workflow_id.is_some() {
            return Err(ModelError::EditOutOfBounds("workflow_id"));
        }
        let plan = match plan.or_else(|| node.plan.clone()) {
            Some(p) if node.status == NodeStatus::Planned => p,
            _ => {
                return Err(ModelError::InvalidStatus {
                    node: node_id.clone(),
                    status: node.status,
                    expected: "Planned",
                })
            }
        };
        let wf = check_plan(&plan, registry)?;
        let mut spec = node.spec.clone();
        fill_from_plan(&mut spec, &plan);
        edits.apply_to(&mut spec);
        self.check_references(&spec)?;
        Ok(ProjectEvent::Materialized {
            node_id: node_id.clone(),
            prior_kind: node.kind,
            new_kind: wf.output_modality.node_kind(),
            plan,
            spec,
        })
    }

    fn succeeded_candidate(&self, node_id: &NodeId, at: CandidateRef) -> Result<(), ModelError> {
        let node = self.node(node_id)?;
        if node.status != NodeStatus::Succeeded {
            return Err(ModelError::NodeNotSucceeded {
                node: node_id.clone(),
                status: node.status,
            });
        }
        if node.candidate(at).is_none() {
            return Err(ModelError::IndexOutOfRange {
                batch: at.batch_index,
                candidate: at.candidate_index,
            });
        }
        Ok(())
    }

    pub fn op_select(&self, node_id: &NodeId, at: CandidateRef) -> Result<ProjectEvent, ModelError> {
        self.succeeded_candidate(node_id, at)?;
        Ok(ProjectEvent::CandidateSelected {
            node_id: node_id.clone(),
            candidate: at,
        })
    }

    /// `None` when the flag already has the requested value.
    pub fn op_retain(
        &self,
        node_id: &NodeId,
        at: CandidateRef,
        retained: bool,
    ) -> Result<Option<ProjectEvent>, ModelError> {
        self.succeeded_candidate(node_id, at)?;
        let node = self.node(node_id)?;
        if node.retained_flags.contains(&at) == retained {
            return Ok(None);
        }
        Ok(Some(ProjectEvent::RetainChanged {
            node_id: node_id.clone(),
            candidate: at,
            retained,
        }))
    }

    /// `None` when the node already has the requested flag.
    pub fn op_collapse(&self, node_id: &NodeId, collapsed: bool) -> Result<Option<ProjectEvent>, ModelError> {
        let node = self.node(node_id)?;
        if node.kind == NodeKind::Init {
            return Err(ModelError::CannotCollapseRoot);
        }
        if node.collapsed == collapsed {
            return Ok(None);
        }
        Ok(Some(ProjectEvent::CollapseChanged {
            node_id: node_id.clone(),
            collapsed,
        }))
    }

    /// Every live reference into the subtree rooted at `node_id`, sorted.
    pub fn prune_blockers(&self, node_id: &NodeId) -> Vec<PruneBlocker> {
        let doomed: BTreeSet<NodeId> = self.subtree(node_id).into_iter().collect();
        let produced: BTreeSet<&AssetId> = self
            .assets
            .values()
            .filter(|a| doomed.contains(&a.producer_node_id))
            .map(|a| &a.asset_id)
            .collect();
        let mut out = vec![];
        for s in &self.timeline.segments {
            if produced.contains(&s.asset_id) {
                out.push(PruneBlocker::Segment {
                    segment_id: s.segment_id.clone(),
                    asset_id: s.asset_id.clone(),
                });
            }
        }
        for e in &self.timeline.collection {
            if produced.contains(&e.asset_id) {
                out.push(PruneBlocker::CollectionEntry {
                    entry_id: e.entry_id.clone(),
                    asset_id: e.asset_id.clone(),
                });
            }
        }
        for n in self.nodes.values().filter(|n| !doomed.contains(&n.node_id)) {
            for r in &n.spec.reference_asset_ids {
                if produced.contains(r) {
                    out.push(PruneBlocker::NodeSpec {
                        node_id: n.node_id.clone(),
                        asset_id: r.clone(),
                    });
                }
            }
        }
        for j in self.jobs.values() {
            if !j.state.is_terminal() && doomed.contains(&j.node_id) {
                out.push(PruneBlocker::ActiveJob {
                    job_id: j.job_id.clone(),
                    node_id: j.node_id.clone(),
                });
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn op_prune(&self, node_id: &NodeId) -> Result<(Vec<NodeId>, ProjectEvent), ModelError> {
        let node = self.node(node_id)?;
        if node.kind == NodeKind::Init {
            return Err(ModelError::CannotPruneRoot);
        }
        let blockers = self.prune_blockers(node_id);
        if !blockers.is_empty() {
            return Err(ModelError::PruneConflict(blockers));
        }
        let removed = self.subtree(node_id);
        Ok((
            removed.clone(),
            ProjectEvent::Pruned {
                node_id: node_id.clone(),
                removed,
            },
        ))
    }
}

fn check_plan<'r>(plan: &Plan, registry: &'r Registry) -> Result<&'r crate::workflows::WorkflowModule, ModelError> {
    let wf = registry
        .get(&plan.workflow_id)
        .ok_or_else(|| ModelError::UnknownWorkflow(plan.workflow_id.clone()))?;
    if wf.action_category != plan.action_category {
        return Err(ModelError::PlanCategoryMismatch {
            plan: plan.action_category,
            workflow: wf.workflow_id.clone(),
            registered: wf.action_category,
        });
    }
    Ok(wf)
}

fn fill_from_plan(spec: &mut StepSpec, plan: &Plan) {
    spec.prompt_text = plan.prompt_draft.clone();
    spec.parameters = plan.parameter_draft.clone();
    spec.workflow_id = Some(plan.workflow_id.clone());
    spec.action_category = Some(plan.action_category);
}
