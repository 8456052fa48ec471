//! Randomized operation sequences over one project tree.
//!
//! After every operation, successful or not, the suite checks single-root
//! acyclicity, append-only candidate batches and that a rejected operation
//! changed nothing. Successful prunes must leave everything outside the
//! removed subtree byte-identical, a collapse round trip must restore the
//! snapshot bytes exactly, and the stored log must fold to the live
//! snapshot.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use reeltree_core::ids::{AssetId, NodeId};
use reeltree_core::model::{CandidateRef, Modality, NodeKind, ParamValue, Params, SpecPatch};
use reeltree_core::state::ProjectState;

use crate::bench::{bytes, Bench};
use crate::{ensure, Tally};

const INTENTS: &[&str] = &[
    "a moonlit river between trees",
    "animate this street scene into a video",
    "upscale the chosen frame",
    "add background music",
    "add a narration for the ending",
    "remove the lamp on the left",
];

const SHORTCUT_WORKFLOWS: &[&str] = &["wf-t2i", "wf-i2v", "wf-upscale", "wf-tts", "wf-music"];

#[derive(Clone, Debug)]
pub enum Op {
    AddDraft {
        parent: usize,
    },
    AddPlanning {
        parent: usize,
    },
    Edit {
        node: usize,
        intent: usize,
    },
    Lock {
        node: usize,
    },
    Plan {
        node: usize,
        with_ref: bool,
    },
    Materialize {
        node: usize,
    },
    AddModal {
        parent: usize,
        workflow: usize,
        reference: usize,
    },
    Execute {
        node: usize,
    },
    RunJobs,
    Select {
        node: usize,
        batch: usize,
        candidate: usize,
    },
    Collapse {
        node: usize,
    },
    CollapseRoundTrip {
        node: usize,
    },
    Prune {
        node: usize,
    },
}

pub fn op() -> impl Strategy<Value = Op> {
    let ix = || 0usize..64;
    prop_oneof![
        2 => ix().prop_map(|parent| Op::AddDraft { parent }),
        2 => ix().prop_map(|parent| Op::AddPlanning { parent }),
        2 => (ix(), 0..INTENTS.len()).prop_map(|(node, intent)| Op::Edit { node, intent }),
        2 => ix().prop_map(|node| Op::Lock { node }),
        2 => (ix(), any::<bool>()).prop_map(|(node, with_ref)| Op::Plan { node, with_ref }),
        2 => ix().prop_map(|node| Op::Materialize { node }),
        3 => (ix(), 0..SHORTCUT_WORKFLOWS.len(), ix())
            .prop_map(|(parent, workflow, reference)| Op::AddModal { parent, workflow, reference }),
        3 => ix().prop_map(|node| Op::Execute { node }),
        2 => Just(Op::RunJobs),
        2 => (ix(), 0usize..3, 0usize..4).prop_map(|(node, batch, candidate)| Op::Select { node, batch, candidate }),
        1 => ix().prop_map(|node| Op::Collapse { node }),
        1 => ix().prop_map(|node| Op::CollapseRoundTrip { node }),
        2 => ix().prop_map(|node| Op::Prune { node }),
    ]
}

pub fn sequence(max_len: usize) -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(op(), 1..=max_len)
}

fn pick(state: &ProjectState, i: usize) -> NodeId {
    let ids: Vec<&NodeId> = state.nodes.keys().collect();
    ids[i % ids.len()].clone()
}

fn image_assets(state: &ProjectState) -> Vec<AssetId> {
    state
        .assets
        .values()
        .filter(|a| a.modality == Modality::Image && state.nodes.contains_key(&a.producer_node_id))
        .map(|a| a.asset_id.clone())
        .collect()
}

/// Applies one operation; `Ok(true)` when the engine accepted it.
fn apply(b: &Bench, op: &Op, tally: &mut Tally) -> Result<bool, String> {
    let (e, pid) = (&b.engine, &b.pid);
    let s = b.state();
    let accepted = match *op {
        Op::AddDraft { parent } => e.add_child(pid, &pick(&s, parent), NodeKind::IntentDraft).is_ok(),
        Op::AddPlanning { parent } => e.add_child(pid, &pick(&s, parent), NodeKind::Planning).is_ok(),
        Op::Edit { node, intent } => {
            let patch = SpecPatch {
                intent_text: Some(INTENTS[intent].into()),
                ..SpecPatch::default()
            };
            e.edit_spec(pid, &pick(&s, node), patch, None).is_ok()
        }
        Op::Lock { node } => e.lock_intent(pid, &pick(&s, node)).is_ok(),
        Op::Plan { node, with_ref } => {
            let refs = if with_ref {
                image_assets(&s).into_iter().take(1).collect()
            } else {
                vec![]
            };
            let n = pick(&s, node);
            let intent = INTENTS[n.as_str().len() % INTENTS.len()];
            e.plan(pid, &n, Some(intent.into()), Some(refs)).is_ok()
        }
        Op::Materialize { node } => e.materialize(pid, &pick(&s, node), None, SpecPatch::default()).is_ok(),
        Op::AddModal {
            parent,
            workflow,
            reference,
        } => {
            let images = image_assets(&s);
            let wf = SHORTCUT_WORKFLOWS[workflow];
            let refs = match (wf, images.is_empty()) {
                ("wf-i2v" | "wf-upscale", false) => vec![images[reference % images.len()].clone()],
                _ => vec![],
            };
            let patch = SpecPatch {
                intent_text: Some(wf.trim_start_matches("wf-").into()),
                reference_asset_ids: Some(refs),
                parameters: Some(Params::from([("num_candidates".to_string(), ParamValue::Int(2))])),
                ..SpecPatch::default()
            };
            e.add_modal(pid, &pick(&s, parent), wf, patch).is_ok()
        }
        Op::Execute { node } => e.execute(pid, &pick(&s, node)).is_ok(),
        Op::RunJobs => b.run_jobs() > 0,
        Op::Select { node, batch, candidate } => e
            .select(pid, &pick(&s, node), CandidateRef::new(batch, candidate))
            .is_ok(),
        Op::Collapse { node } => {
            let n = pick(&s, node);
            let now = s.nodes[&n].collapsed;
            e.collapse(pid, &n, !now).is_ok()
        }
        Op::CollapseRoundTrip { node } => {
            let n = pick(&s, node);
            let now = s.nodes[&n].collapsed;
            let before = bytes(&s);
            if e.collapse(pid, &n, !now).is_err() {
                return Ok(false);
            }
            e.collapse(pid, &n, now).map_err(|e| format!("uncollapse {n}: {e}"))?;
            ensure!(
                bytes(&b.state()) == before,
                "collapse round trip on {n} changed the snapshot"
            );
            tally.checks += 1;
            true
        }
        Op::Prune { node } => {
            let n = pick(&s, node);
            match e.prune(pid, &n) {
                Ok(removed) => {
                    check_prune_isolation(&s, &b.state(), &n, &removed)?;
                    tally.checks += 1;
                    true
                }
                Err(_) => false,
            }
        }
    };
    Ok(accepted)
}

/// Descendants of `target` (inclusive) found by walking parent pointers.
fn descendants_by_walk(state: &ProjectState, target: &NodeId) -> BTreeSet<NodeId> {
    state
        .nodes
        .keys()
        .filter(|id| {
            let mut cur = Some((*id).clone());
            let mut hops = 0;
            while let Some(c) = cur {
                if &c == target {
                    return true;
                }
                hops += 1;
                if hops > state.nodes.len() {
                    return false;
                }
                cur = state.nodes.get(&c).and_then(|n| n.parent_id.clone());
            }
            false
        })
        .cloned()
        .collect()
}

/// Everything outside the removed subtree is byte-identical after a prune,
/// and the removed set is exactly the target's descendants.
pub fn check_prune_isolation(
    before: &ProjectState,
    after: &ProjectState,
    target: &NodeId,
    removed: &[NodeId],
) -> Result<(), String> {
    let expected = descendants_by_walk(before, target);
    let removed: BTreeSet<NodeId> = removed.iter().cloned().collect();
    ensure!(
        removed == expected,
        "prune of {target} removed {removed:?}, expected {expected:?}"
    );
    for (id, n) in &before.nodes {
        match after.nodes.get(id) {
            Some(_) if removed.contains(id) => return Err(format!("{id} survived its prune")),
            None if !removed.contains(id) => return Err(format!("{id} vanished outside the pruned subtree")),
            Some(m) => ensure!(
                serde_json::to_vec(n).unwrap() == serde_json::to_vec(m).unwrap(),
                "node {id} changed when pruning {target}"
            ),
            None => {}
        }
    }
    ensure!(
        after.timeline == before.timeline,
        "timeline changed when pruning {target}"
    );
    ensure!(
        after.project == before.project,
        "project header changed when pruning {target}"
    );
    let kept = |s: &ProjectState| -> BTreeMap<AssetId, Vec<u8>> {
        s.assets
            .iter()
            .filter(|(_, a)| !removed.contains(&a.producer_node_id))
            .map(|(k, a)| (k.clone(), serde_json::to_vec(a).unwrap()))
            .collect()
    };
    ensure!(kept(before) == kept(after), "assets outside the pruned subtree changed");
    let jobs = |s: &ProjectState| -> Vec<Vec<u8>> {
        s.jobs
            .values()
            .filter(|j| !removed.contains(&j.node_id))
            .map(|j| serde_json::to_vec(j).unwrap())
            .collect()
    };
    ensure!(jobs(before) == jobs(after), "jobs outside the pruned subtree changed");
    Ok(())
}

/// Exactly one parentless node, the Init root, and every parent chain
/// reaches it.
pub fn check_single_root(state: &ProjectState) -> Result<(), String> {
    let root = state.root.clone().ok_or("no root")?;
    let parentless: Vec<&NodeId> = state
        .nodes
        .values()
        .filter(|n| n.parent_id.is_none())
        .map(|n| &n.node_id)
        .collect();
    ensure!(
        parentless == vec![&root],
        "parentless nodes {parentless:?}, root {root}"
    );
    ensure!(state.nodes[&root].kind == NodeKind::Init, "root is not Init");
    for id in state.nodes.keys() {
        let mut cur = id.clone();
        let mut hops = 0;
        while cur != root {
            let parent = state.nodes[&cur]
                .parent_id
                .clone()
                .ok_or_else(|| format!("{cur} has no parent"))?;
            ensure!(
                state.nodes.contains_key(&parent),
                "{cur} points at missing parent {parent}"
            );
            cur = parent;
            hops += 1;
            ensure!(hops <= state.nodes.len(), "parent cycle through {id}");
        }
    }
    let mut seen = BTreeSet::new();
    for n in state.nodes.values() {
        if let Some(p) = &n.parent_id {
            ensure!(
                seen.insert((p.clone(), n.order_key)),
                "duplicate order key {} under {p}",
                n.order_key
            );
        }
    }
    Ok(())
}

/// Every surviving node's batches extend its earlier batches.
pub fn check_append_only(before: &ProjectState, after: &ProjectState) -> Result<(), String> {
    for (id, old) in &before.nodes {
        if let Some(new) = after.nodes.get(id) {
            ensure!(
                new.candidates.len() >= old.candidates.len()
                    && new.candidates[..old.candidates.len()] == old.candidates[..],
                "candidate batches of {id} were rewritten"
            );
        }
    }
    Ok(())
}

/// Runs one sequence against a fresh project.
pub fn run_sequence(ops: &[Op], seed: u64, tally: &mut Tally) -> Result<(), String> {
    let b = Bench::new(seed);
    for (i, op) in ops.iter().enumerate() {
        let before = b.state();
        let accepted = apply(&b, op, tally).map_err(|e| format!("step {i} {op:?}: {e}"))?;
        let after = b.state();
        if accepted {
            tally.accepted += 1;
        } else {
            ensure!(
                bytes(&before) == bytes(&after),
                "step {i}: rejected {op:?} changed the snapshot"
            );
        }
        check_single_root(&after).map_err(|e| format!("step {i} {op:?}: {e}"))?;
        check_append_only(&before, &after).map_err(|e| format!("step {i} {op:?}: {e}"))?;
        tally.steps += 1;
        tally.checks += 3;
    }
    b.run_jobs();
    let live = b.state();
    let folded = b.replayed()?;
    ensure!(folded == *live, "fold(events) differs from the live snapshot");
    ensure!(bytes(&folded) == bytes(&live), "fold(events) serializes differently");
    tally.checks += 2;
    Ok(())
}

/// `cases` random sequences of up to `max_len` operations.
pub fn suite(cases: u32, max_len: usize) -> Result<Tally, String> {
    let mut tally = Tally::default();
    let mut runner = crate::runner(cases, 4);
    let cell = std::cell::RefCell::new(&mut tally);
    let result = runner.run(&sequence(max_len), |ops| {
        let mut t = cell.borrow_mut();
        t.cases += 1;
        run_sequence(&ops, 1, &mut t).map_err(TestCaseError::fail)
    });
    match result {
        Ok(()) => Ok(tally),
        Err(e) => Err(e.to_string()),
    }
}
