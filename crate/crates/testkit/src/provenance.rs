//! Random interleavings of stitching, execution and prune operations.
//!
//! After every step each segment must trace back to a live producer node.
//! Before every prune an independent scan of the snapshot predicts the
//! blocking references; the engine must refuse exactly when the scan finds
//! any, and name exactly those.

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use reeltree_core::engine::EngineError;
use reeltree_core::ids::{AssetId, NodeId};
use reeltree_core::model::{
    CandidateRef, Modality, ModelError, NodeKind, NodeStatus, ParamValue, Params, PruneBlocker, SpecPatch,
};
use reeltree_core::state::ProjectState;
use reeltree_core::stitching::{Track, Trim};
use reeltree_core::workflows::JobState;

use crate::bench::Bench;
use crate::{ensure, Tally};

#[derive(Clone, Debug)]
pub enum Step {
    Grow {
        parent: usize,
        workflow: usize,
        reference: usize,
        run: bool,
    },
    RunJobs,
    Collect {
        node: usize,
        batch: usize,
        candidate: usize,
    },
    Uncollect {
        entry: usize,
    },
    Place {
        entry: usize,
        audio: bool,
        at: Option<u32>,
        trim: Option<(u64, u64)>,
    },
    Reorder {
        segment: usize,
        at: u32,
    },
    Unplace {
        segment: usize,
    },
    Reference {
        node: usize,
        asset: usize,
    },
    Prune {
        node: usize,
    },
}

const GROW: &[&str] = &["wf-t2i", "wf-i2v", "wf-tts", "wf-upscale"];

pub fn step() -> impl Strategy<Value = Step> {
    let ix = || 0usize..256;
    prop_oneof![
        3 => (ix(), 0..GROW.len(), ix(), proptest::bool::weighted(0.8))
            .prop_map(|(parent, workflow, reference, run)| Step::Grow { parent, workflow, reference, run }),
        1 => Just(Step::RunJobs),
        4 => (ix(), 0usize..2, 0usize..2).prop_map(|(node, batch, candidate)| Step::Collect { node, batch, candidate }),
        1 => ix().prop_map(|entry| Step::Uncollect { entry }),
        3 => (ix(), any::<bool>(), proptest::option::of(0u32..6), proptest::option::of((0u64..3000, 1u64..6000)))
            .prop_map(|(entry, audio, at, trim)| Step::Place { entry, audio, at, trim }),
        2 => (ix(), 0u32..6).prop_map(|(segment, at)| Step::Reorder { segment, at }),
        2 => ix().prop_map(|segment| Step::Unplace { segment }),
        1 => (ix(), ix()).prop_map(|(node, asset)| Step::Reference { node, asset }),
        4 => ix().prop_map(|node| Step::Prune { node }),
    ]
}

fn nth<T: Clone>(items: &[T], i: usize) -> Option<T> {
    (!items.is_empty()).then(|| items[i % items.len()].clone())
}

/// The reference scan: subtree membership by parent walk, producers from
/// the asset index, then every holder of a produced asset.
pub fn expected_blockers(state: &ProjectState, target: &NodeId) -> BTreeSet<(String, String)> {
    let in_subtree = |id: &NodeId| {
        let mut cur = Some(id.clone());
        while let Some(c) = cur {
            if &c == target {
                return true;
            }
            cur = state.nodes.get(&c).and_then(|n| n.parent_id.clone());
        }
        false
    };
    let produced: BTreeSet<&AssetId> = state
        .assets
        .values()
        .filter(|a| in_subtree(&a.producer_node_id))
        .map(|a| &a.asset_id)
        .collect();
    let mut out = BTreeSet::new();
    for s in &state.timeline.segments {
        if produced.contains(&s.asset_id) {
            out.insert(("segment".into(), s.segment_id.to_string()));
        }
    }
    for c in &state.timeline.collection {
        if produced.contains(&c.asset_id) {
            out.insert(("entry".into(), c.entry_id.to_string()));
        }
    }
    for n in state.nodes.values() {
        if in_subtree(&n.node_id) {
            continue;
        }
        for r in &n.spec.reference_asset_ids {
            if produced.contains(r) {
                out.insert(("spec".into(), format!("{}:{r}", n.node_id)));
            }
        }
    }
    for j in state.jobs.values() {
        if matches!(j.state, JobState::Queued | JobState::Running) && in_subtree(&j.node_id) {
            out.insert(("job".into(), j.job_id.to_string()));
        }
    }
    out
}

fn reported(blockers: &[PruneBlocker]) -> BTreeSet<(String, String)> {
    blockers
        .iter()
        .map(|b| match b {
            PruneBlocker::Segment { segment_id, .. } => ("segment".into(), segment_id.to_string()),
            PruneBlocker::CollectionEntry { entry_id, .. } => ("entry".into(), entry_id.to_string()),
            PruneBlocker::NodeSpec { node_id, asset_id } => ("spec".into(), format!("{node_id}:{asset_id}")),
            PruneBlocker::ActiveJob { job_id, .. } => ("job".into(), job_id.to_string()),
        })
        .collect()
}

/// Every segment resolves to the live node that produced its asset.
pub fn check_provenance(b: &Bench) -> Result<u64, String> {
    let s = b.state();
    for seg in &s.timeline.segments {
        let origin = b
            .engine
            .trace_origin(&b.pid, &seg.segment_id)
            .map_err(|e| format!("trace_origin({}) failed: {e}", seg.segment_id))?;
        ensure!(
            s.nodes.contains_key(&origin),
            "segment {} traces to dead node {origin}",
            seg.segment_id
        );
        let producer = &s.assets[&seg.asset_id].producer_node_id;
        ensure!(
            &origin == producer,
            "segment {} traces to {origin}, asset made by {producer}",
            seg.segment_id
        );
        ensure!(
            seg.track.accepts(s.assets[&seg.asset_id].modality),
            "segment {} on the wrong track",
            seg.segment_id
        );
    }
    for c in &s.timeline.collection {
        ensure!(
            s.asset_referenceable(&c.asset_id),
            "collection entry {} lost its producer",
            c.entry_id
        );
    }
    Ok(s.timeline.segments.len() as u64 + 1)
}

fn grow_params() -> Params {
    Params::from([("num_candidates".to_string(), ParamValue::Int(2))])
}

fn apply(b: &Bench, step: &Step, tally: &mut Tally) -> Result<(), String> {
    let (e, pid) = (&b.engine, &b.pid);
    let s = b.state();
    let nodes: Vec<NodeId> = s.nodes.keys().cloned().collect();
    let hosts: Vec<NodeId> = s
        .nodes
        .values()
        .filter(|n| n.kind != NodeKind::Planning)
        .map(|n| n.node_id.clone())
        .collect();
    let producing: Vec<NodeId> = s
        .nodes
        .values()
        .filter(|n| n.status == NodeStatus::Succeeded && !n.candidates.is_empty())
        .map(|n| n.node_id.clone())
        .collect();
    let images: Vec<AssetId> = s
        .assets
        .values()
        .filter(|a| a.modality == Modality::Image && s.asset_referenceable(&a.asset_id))
        .map(|a| a.asset_id.clone())
        .collect();
    let entries: Vec<_> = s.timeline.collection.iter().map(|c| c.entry_id.clone()).collect();
    let segments: Vec<_> = s.timeline.segments.iter().map(|g| g.segment_id.clone()).collect();
    match *step {
        Step::Grow {
            parent,
            workflow,
            reference,
            run,
        } => {
            let wf = GROW[workflow];
            let refs = match wf {
                "wf-i2v" | "wf-upscale" => match nth(&images, reference) {
                    Some(a) => vec![a],
                    None => return Ok(()),
                },
                _ => vec![],
            };
            let patch = SpecPatch {
                intent_text: Some(wf.into()),
                reference_asset_ids: Some(refs),
                parameters: Some(grow_params()),
                ..SpecPatch::default()
            };
            let parent = nth(&hosts, parent).ok_or("no host nodes")?;
            let node = e
                .add_modal(pid, &parent, wf, patch)
                .map_err(|e| format!("grow {wf}: {e}"))?;
            e.execute(pid, &node).map_err(|e| format!("execute {wf}: {e}"))?;
            if run {
                b.run_jobs();
            }
        }
        Step::RunJobs => {
            b.run_jobs();
        }
        Step::Collect { node, batch, candidate } => {
            if let Some(n) = nth(&producing, node) {
                let _ = e.collect(pid, &n, CandidateRef::new(batch, candidate));
            }
        }
        Step::Uncollect { entry } => {
            if let Some(id) = nth(&entries, entry) {
                e.uncollect(pid, &id).map_err(|e| format!("uncollect: {e}"))?;
            }
        }
        Step::Place { entry, audio, at, trim } => {
            if let Some(id) = nth(&entries, entry) {
                let track = if audio { Track::Audio } else { Track::Video };
                let trim = trim.map(|(i, len)| Trim {
                    trim_in_ms: i,
                    trim_out_ms: i + len,
                });
                let _ = e.place(pid, &id, track, at, trim);
            }
        }
        Step::Reorder { segment, at } => {
            if let Some(id) = nth(&segments, segment) {
                let _ = e.reorder(pid, &id, at);
            }
        }
        Step::Unplace { segment } => {
            if let Some(id) = nth(&segments, segment) {
                e.remove_segment(pid, &id).map_err(|e| format!("unplace: {e}"))?;
            }
        }
        Step::Reference { node, asset } => {
            let n = nth(&nodes, node).expect("root exists");
            if let Some(a) = nth(&images, asset) {
                let patch = SpecPatch {
                    reference_asset_ids: Some(vec![a]),
                    ..SpecPatch::default()
                };
                let _ = e.edit_spec(pid, &n, patch, None);
            }
        }
        Step::Prune { node } => {
            let target = nth(&nodes, node).expect("root exists");
            let expected = expected_blockers(&s, &target);
            let outcome = e.prune(pid, &target);
            tally.checks += 1;
            match outcome {
                _ if s.nodes[&target].kind == NodeKind::Init => ensure!(
                    matches!(outcome, Err(EngineError::Model(ModelError::CannotPruneRoot))),
                    "pruning the root gave {outcome:?}"
                ),
                Ok(removed) => {
                    ensure!(expected.is_empty(), "prune of {target} succeeded despite {expected:?}");
                    let after = b.state();
                    ensure!(
                        removed.iter().all(|r| !after.nodes.contains_key(r)),
                        "pruned nodes are still present"
                    );
                }
                Err(EngineError::Model(ModelError::PruneConflict(blockers))) => {
                    let got = reported(&blockers);
                    ensure!(
                        got == expected,
                        "prune of {target} reported {got:?}, the scan found {expected:?}"
                    );
                    ensure!(!expected.is_empty(), "empty PruneConflict");
                }
                Err(other) => return Err(format!("prune of {target}: unexpected {other}")),
            }
        }
    }
    Ok(())
}

/// Seeds a project with one image, one clip and one voice track, all run.
fn seeded(b: &Bench) -> Result<(), String> {
    let (e, pid) = (&b.engine, &b.pid);
    let root = b.state().root.clone().ok_or("no root")?;
    let scene = e
        .add_child(pid, &root, NodeKind::IntentDraft)
        .map_err(|e| e.to_string())?;
    for wf in ["wf-t2i", "wf-tts"] {
        let patch = SpecPatch {
            intent_text: Some(wf.into()),
            parameters: Some(grow_params()),
            ..SpecPatch::default()
        };
        let n = e.add_modal(pid, &scene, wf, patch).map_err(|e| e.to_string())?;
        e.execute(pid, &n).map_err(|e| e.to_string())?;
    }
    b.run_jobs();
    Ok(())
}

pub fn run_steps(steps: &[Step], seed: u64, tally: &mut Tally) -> Result<(), String> {
    let b = Bench::new(seed);
    seeded(&b)?;
    for (i, st) in steps.iter().enumerate() {
        let seq = b.state().last_seq;
        apply(&b, st, tally).map_err(|e| format!("step {i} {st:?}: {e}"))?;
        tally.checks += check_provenance(&b).map_err(|e| format!("step {i} {st:?}: {e}"))?;
        tally.steps += 1;
        if b.state().last_seq > seq {
            tally.accepted += 1;
        }
    }
    Ok(())
}

/// `runs` interleavings of `len` steps each.
pub fn suite(runs: u32, len: usize) -> Result<Tally, String> {
    let mut tally = Tally::default();
    let cell = std::cell::RefCell::new(&mut tally);
    let strategy = proptest::collection::vec(step(), len);
    let result = crate::runner(runs, 7).run(&strategy, |steps| {
        let mut t = cell.borrow_mut();
        t.cases += 1;
        run_steps(&steps, 2, &mut t).map_err(TestCaseError::fail)
    });
    result.map(|_| tally).map_err(|e| e.to_string())
}
