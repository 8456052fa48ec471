//! Totality of the planning pipeline over the mock provider.
//!
//! Every keyword class is planned against every multiset of up to three
//! reference modalities, with and without an unfamiliar term that wakes
//! the Knowledge agent. Each outcome is a plan that validates against its
//! workflow, or a typed error.

use reeltree_core::agents::{plan_step, AgentContext, AgentError, MockProvider, PlanInput, Templates, KEYWORD_CLASSES};
use reeltree_core::engine::EngineError;
use reeltree_core::ids::AssetId;
use reeltree_core::model::{Modality, NodeKind, NodeStatus, SpecPatch, StepSpec};
use reeltree_core::workflows::{validate_spec, Registry};

use crate::bench::Bench;
use crate::{ensure, Tally};

pub const TOKEN_ENVELOPE: (u32, u32) = (2000, 4000);

const MODALITIES: [Modality; 3] = [Modality::Image, Modality::Video, Modality::Audio];

/// Multisets of modalities up to `max` elements, in canonical order.
pub fn multisets(max: usize) -> Vec<Vec<Modality>> {
    fn go(from: usize, left: usize, cur: &mut Vec<Modality>, out: &mut Vec<Vec<Modality>>) {
        out.push(cur.clone());
        if left == 0 {
            return;
        }
        for (i, &m) in MODALITIES.iter().enumerate().skip(from) {
            cur.push(m);
            go(i, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = vec![];
    go(0, max, &mut vec![], &mut out);
    out
}

/// Intents to try: each class's example and one phrase per stem, plain and
/// with an out-of-vocabulary term.
pub fn intents() -> Vec<String> {
    let mut out = vec![];
    for c in KEYWORD_CLASSES {
        out.push(c.example.to_string());
        out.extend(c.stems.iter().map(|s| format!("{s} the lantern scene")));
    }
    let plain = out.len();
    for i in 0..plain {
        out.push(format!("{} beside the guqin", out[i]));
    }
    out
}

fn allowed_error(e: &AgentError) -> bool {
    matches!(e, AgentError::NoCompatibleWorkflow)
}

/// Pure pipeline check over every intent and multiset.
pub fn check_pipeline(max_refs: usize) -> Result<Tally, String> {
    let provider = MockProvider::new();
    let templates = Templates::builtin();
    let registry = Registry::baseline();
    let mut tally = Tally::default();
    for intent in intents() {
        for set in multisets(max_refs) {
            tally.cases += 1;
            let references: Vec<(AssetId, Modality)> = set
                .iter()
                .enumerate()
                .map(|(i, m)| (AssetId::new(format!("{:064x}", i + 1)), *m))
                .collect();
            let input = PlanInput {
                context: AgentContext::default(),
                intent: intent.clone(),
                references: references.clone(),
            };
            match plan_step(&provider, &templates, &registry, &input) {
                Ok(plan) => {
                    let wf = registry
                        .get(&plan.workflow_id)
                        .ok_or_else(|| format!("{intent:?} {set:?}: unknown workflow {}", plan.workflow_id))?;
                    ensure!(
                        wf.action_category == plan.action_category,
                        "{intent:?} {set:?}: {} is not a {} workflow",
                        wf.workflow_id,
                        plan.action_category
                    );
                    let spec = StepSpec {
                        intent_text: intent.clone(),
                        reference_asset_ids: references.iter().map(|(a, _)| a.clone()).collect(),
                        prompt_text: plan.prompt_draft.clone(),
                        parameters: plan.parameter_draft.clone(),
                        workflow_id: Some(plan.workflow_id.clone()),
                        action_category: Some(plan.action_category),
                        locked: false,
                    };
                    let modality_of = |id: &AssetId| references.iter().find(|(a, _)| a == id).map(|(_, m)| *m);
                    validate_spec(&spec, wf, modality_of).map_err(|e| {
                        format!("{intent:?} {set:?}: plan for {} does not validate: {e}", wf.workflow_id)
                    })?;
                    let t = plan.token_usage.total();
                    ensure!(
                        (TOKEN_ENVELOPE.0..=TOKEN_ENVELOPE.1).contains(&t),
                        "{intent:?} {set:?}: {t} tokens outside {TOKEN_ENVELOPE:?}"
                    );
                    tally.checks += 3;
                }
                Err(e) if allowed_error(&e) => {
                    let has_candidates = registry.modules().any(|w| {
                        w.action_category == reeltree_core::agents::classify_intent(&intent) && w.satisfiable_with(&set)
                    });
                    ensure!(!has_candidates, "{intent:?} {set:?}: {e} although a workflow fits");
                    tally.checks += 1;
                }
                Err(e) => return Err(format!("{intent:?} {set:?}: unexpected {} ({e})", e.code())),
            }
        }
    }
    Ok(tally)
}

/// Planning through the engine stores a plan for review and nothing else:
/// no assets, no jobs, and the node stays at or below Planned.
pub fn check_review_gate(max_refs: usize) -> Result<Tally, String> {
    let mut tally = Tally::default();
    let b = Bench::new(3);
    let (e, pid) = (&b.engine, &b.pid);
    let mut uploads = vec![];
    for (i, m) in MODALITIES.iter().enumerate() {
        for k in 0..max_refs {
            let bytes = format!("upload {i} {k}").into_bytes();
            let a = e
                .import_asset(pid, bytes, Some(*m), Some("bin".into()))
                .map_err(|e| e.to_string())?;
            uploads.push((a.asset_id, *m));
        }
    }
    let root = b.state().root.clone().ok_or("no root")?;
    let scene = e
        .add_child(pid, &root, NodeKind::IntentDraft)
        .map_err(|e| e.to_string())?;
    let patch = SpecPatch {
        intent_text: Some("a lantern festival at dusk".into()),
        ..SpecPatch::default()
    };
    e.edit_spec(pid, &scene, patch, None).map_err(|e| e.to_string())?;
    e.lock_intent(pid, &scene).map_err(|e| e.to_string())?;

    for c in KEYWORD_CLASSES {
        for set in multisets(max_refs) {
            tally.cases += 1;
            let mut used = vec![false; uploads.len()];
            let refs: Vec<AssetId> = set
                .iter()
                .map(|m| {
                    let j = (0..uploads.len())
                        .find(|&j| !used[j] && uploads[j].1 == *m)
                        .expect("enough uploads");
                    used[j] = true;
                    uploads[j].0.clone()
                })
                .collect();
            let node = e
                .add_child(pid, &scene, NodeKind::Planning)
                .map_err(|e| e.to_string())?;
            let before = b.state();
            let outcome = e.plan(pid, &node, Some(c.example.into()), Some(refs));
            let after = b.state();
            ensure!(after.assets == before.assets, "planning {} created assets", c.name);
            ensure!(after.jobs == before.jobs, "planning {} queued a job", c.name);
            let n = &after.nodes[&node];
            ensure!(
                n.kind == NodeKind::Planning,
                "planning {} changed the node kind",
                c.name
            );
            ensure!(
                matches!(n.status, NodeStatus::Draft | NodeStatus::Planned),
                "planning {} left the node {}",
                c.name,
                n.status
            );
            match outcome {
                Ok(plan) => ensure!(n.plan.as_ref() == Some(&plan), "stored plan differs for {}", c.name),
                Err(EngineError::Agent(a)) if allowed_error(&a) => {
                    ensure!(before.nodes[&node] == *n, "a failed plan touched the node")
                }
                Err(other) => return Err(format!("planning {} {set:?}: unexpected {}", c.name, other.code())),
            }
            tally.checks += 5;
        }
    }
    Ok(tally)
}
