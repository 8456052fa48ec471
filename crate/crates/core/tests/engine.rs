use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use reeltree_core::clock::ManualClock;
use reeltree_core::engine::{Engine, EngineError, SettingsPatch};
use reeltree_core::ids::{IdScheme, NodeId, ProjectId};
use reeltree_core::metrics::{SessionEventKind, WaitRule};
use reeltree_core::model::{ActionCategory, CandidateRef, Modality, NodeKind, NodeStatus, SpecPatch};
use reeltree_core::stitching::{Track, MANIFEST_FILE};
use reeltree_core::store::{FsStore, MemStore, Storage};
use reeltree_core::workflows::{
    ExecutionInput, ExecutionOutput, ExecutionRequest, Executor, ExecutorSet, JobState, MockExecutor, WorkflowError,
    WorkflowModule,
};

fn engine_on(storage: Arc<dyn Storage>, clock: Arc<ManualClock>) -> Engine {
    Engine::builder(storage)
        .clock(clock)
        .id_scheme(IdScheme::Seeded(1))
        .build()
        .unwrap()
}

fn mem_engine() -> (Engine, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(1_000));
    (engine_on(Arc::new(MemStore::new()), clock.clone()), clock)
}

/// Scene root with a locked intent and one planned, materialized image node.
fn anchor(e: &Engine, pid: &ProjectId) -> (NodeId, NodeId) {
    let root = e.snapshot(pid).unwrap().root.clone().unwrap();
    let scene = e.add_child(pid, &root, NodeKind::IntentDraft).unwrap();
    e.edit_spec(
        pid,
        &scene,
        SpecPatch {
            intent_text: Some("a quiet atmosphere with trees, river, and moon".into()),
            ..Default::default()
        },
        None,
    )
    .unwrap();
    e.lock_intent(pid, &scene).unwrap();
    let img = e.add_child(pid, &scene, NodeKind::Planning).unwrap();
    let plan = e
        .plan(pid, &img, Some("a moonlit river between trees".into()), Some(vec![]))
        .unwrap();
    assert_eq!(plan.action_category, ActionCategory::EstablishAnchor);
    e.materialize(pid, &img, None, SpecPatch::default()).unwrap();
    (scene, img)
}

#[test]
fn fresh_project_has_only_the_root() {
    let (e, _) = mem_engine();
    let p = e.create_project("demo").unwrap();
    assert_eq!(p.nodes.len(), 1);
    let root = p.root_node().unwrap();
    assert_eq!(
        (root.kind, root.status, root.parent_id.clone()),
        (NodeKind::Init, NodeStatus::Succeeded, None)
    );
    assert!(matches!(
        e.create_root(p.project_id()),
        Err(EngineError::Model(reeltree_core::model::ModelError::RootAlreadyExists(
            _
        )))
    ));
    let log = e.session_log(p.project_id()).unwrap();
    assert_eq!(log.events()[0].kind, SessionEventKind::SessionStarted);
    assert_eq!(e.layout(p.project_id()).unwrap().positions.len(), 1);
}

#[test]
fn plan_execute_stitch_export() {
    let (e, clock) = mem_engine();
    let pid = e.create_project("flow").unwrap().project_id().clone();
    let (_, img) = anchor(&e, &pid);

    let job = e.execute(&pid, &img).unwrap();
    assert_eq!(e.job(&pid, &job).unwrap().state, JobState::Queued);
    assert_eq!(e.snapshot(&pid).unwrap().node(&img).unwrap().status, NodeStatus::Queued);
    clock.advance(60_000);
    let done = e.run_queued();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].state, JobState::Done);
    let node = e.snapshot(&pid).unwrap().node(&img).unwrap().clone();
    assert_eq!(node.status, NodeStatus::Succeeded);
    assert_eq!(node.candidates[0].asset_ids.len(), 4);

    e.select(&pid, &img, CandidateRef::new(0, 2)).unwrap();
    e.retain(&pid, &img, CandidateRef::new(0, 2), true).unwrap();
    e.retain(&pid, &img, CandidateRef::new(0, 2), true).unwrap();
    let still = node.candidates[0].asset_ids[2].clone();

    let vid = e.add_child(&pid, &img, NodeKind::Planning).unwrap();
    let plan = e
        .plan(
            &pid,
            &vid,
            Some("animate this street scene into a video".into()),
            Some(vec![still.clone()]),
        )
        .unwrap();
    assert_eq!(plan.workflow_id, "wf-i2v");
    let v = e.materialize(&pid, &vid, None, SpecPatch::default()).unwrap();
    assert_eq!((v.kind, v.node_id.clone()), (NodeKind::Video, vid.clone()));
    let ctx = e.snapshot(&pid).unwrap().derive_context(&vid).unwrap();
    assert_eq!(ctx.path[ctx.path.len() - 2].selected_asset_ids, vec![still.clone()]);
    e.execute(&pid, &vid).unwrap();
    clock.advance(120_000);
    e.run_queued();

    let clip_entry = e.collect(&pid, &vid, CandidateRef::new(0, 0)).unwrap();
    let img_entry = e.collect(&pid, &img, CandidateRef::new(0, 2)).unwrap();
    assert!(matches!(
        e.place(&pid, &img_entry.entry_id, Track::Audio, None, None),
        Err(EngineError::Stitch(_))
    ));
    let seg = e.place(&pid, &clip_entry.entry_id, Track::Video, None, None).unwrap();
    e.place(&pid, &img_entry.entry_id, Track::Video, Some(0), None).unwrap();
    assert_eq!(e.trace_origin(&pid, &seg.segment_id).unwrap(), vid);

    let out = tempfile::tempdir().unwrap();
    clock.advance(30_000);
    let bundle = e.export(&pid, out.path()).unwrap();
    assert_eq!(bundle.manifest.segments.len(), 2);
    let first = std::fs::read(out.path().join(MANIFEST_FILE)).unwrap();
    let again = tempfile::tempdir().unwrap();
    e.export(&pid, again.path()).unwrap();
    assert_eq!(first, std::fs::read(again.path().join(MANIFEST_FILE)).unwrap());

    let r = e.metrics(&pid, WaitRule::Union).unwrap();
    assert_eq!(r.n_calls, 2);
    assert_eq!(r.n_variants, 3, "one retain plus two collects");
    assert_eq!(r.t_wait, reeltree_core::metrics::minutes(180_000));
    assert!(r.t_assemble.is_some());
    assert!(r.pending_requests.is_empty());
}

#[test]
fn uploads_are_referenceable_and_shared_content_is_deduplicated() {
    let (e, _) = mem_engine();
    let pid = e.create_project("up").unwrap().project_id().clone();
    let png = {
        let mut b = b"\x89PNG\r\n\x1a\n\0\0\0\rIHDR".to_vec();
        b.extend(640u32.to_be_bytes());
        b.extend(360u32.to_be_bytes());
        b
    };
    let a = e.import_asset(&pid, png.clone(), None, None).unwrap();
    assert_eq!((a.modality, a.metadata.width), (Modality::Image, Some(640)));
    assert_eq!(e.import_asset(&pid, png, None, None).unwrap().asset_id, a.asset_id);
    assert_eq!(e.snapshot(&pid).unwrap().assets.len(), 1);
    assert!(matches!(
        e.import_asset(&pid, b"??".to_vec(), None, None),
        Err(EngineError::UnknownMedia)
    ));
    assert!(e.import_asset(&pid, vec![], Some(Modality::Audio), None).is_err());

    let root = e.snapshot(&pid).unwrap().root.clone().unwrap();
    let n = e.add_child(&pid, &root, NodeKind::Planning).unwrap();
    let plan = e
        .plan(
            &pid,
            &n,
            Some("upscale the photo".into()),
            Some(vec![a.asset_id.clone()]),
        )
        .unwrap();
    assert_eq!(plan.workflow_id, "wf-upscale");
}

#[test]
fn review_gate_and_guards() {
    let (e, _) = mem_engine();
    let pid = e.create_project("g").unwrap().project_id().clone();
    let root = e.snapshot(&pid).unwrap().root.clone().unwrap();
    let n = e.add_child(&pid, &root, NodeKind::Planning).unwrap();
    assert_eq!(
        e.plan(&pid, &n, Some("".into()), None).unwrap_err().code(),
        "EmptyIntent"
    );
    e.plan(&pid, &n, Some("add background music".into()), None).unwrap();
    let s = e.snapshot(&pid).unwrap();
    assert_eq!(s.node(&n).unwrap().status, NodeStatus::Planned);
    assert!(s.assets.is_empty() && s.jobs.is_empty());
    assert_eq!(
        e.add_child(&pid, &n, NodeKind::Planning).unwrap_err().code(),
        "ParentNotExtendable"
    );
    assert_eq!(e.execute(&pid, &n).unwrap_err().code(), "NodeNotPlanned");
    e.materialize(&pid, &n, None, SpecPatch::default()).unwrap();
    let job = e.execute(&pid, &n).unwrap();
    assert_eq!(e.execute(&pid, &n).unwrap_err().code(), "NodeBusy");
    assert_eq!(e.prune(&pid, &n).unwrap_err().code(), "PruneConflict");
    let cancelled = e.cancel_job(&pid, &job).unwrap();
    assert_eq!(cancelled.state, JobState::Cancelled);
    assert_eq!(e.snapshot(&pid).unwrap().node(&n).unwrap().status, NodeStatus::Planned);
    assert!(e.run_queued().is_empty());
    assert_eq!(e.cancel_job(&pid, &job).unwrap_err().code(), "JobNotCancellable");
    assert_eq!(
        e.record_session_event(&pid, SessionEventKind::ExportCompleted)
            .unwrap_err()
            .code(),
        "ReservedSessionEvent"
    );
    e.record_session_event(&pid, SessionEventKind::SceneCompleted { scene_index: 1 })
        .unwrap();
    assert_eq!(e.prune(&pid, &n).unwrap(), vec![n.clone()]);
}

#[test]
fn settings_validate_and_apply() {
    let (e, _) = mem_engine();
    let pid = e.create_project("s").unwrap().project_id().clone();
    let bad = SettingsPatch {
        layout: Some(reeltree_core::store::SpacingConfig {
            h_spacing: 0.0,
            v_spacing: 10.0,
        }),
        ..Default::default()
    };
    assert_eq!(e.update_settings(&pid, bad).unwrap_err().code(), "InvalidSettings");
    let p = e
        .update_settings(
            &pid,
            SettingsPatch {
                global_context: Some(reeltree_core::store::GlobalContext {
                    style: "ink wash".into(),
                    ..Default::default()
                }),
                still_duration_ms: Some(2000),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(p.global_context.style, "ink wash");
    assert_eq!(e.snapshot(&pid).unwrap().timeline.still_duration_ms, 2000);
}

#[test]
fn restart_reproduces_state_and_requeues_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(5));
    let store = || -> Arc<dyn Storage> { Arc::new(FsStore::open(dir.path()).unwrap().without_fsync()) };
    let (pid, img, hash) = {
        let e = engine_on(store(), clock.clone());
        let pid = e.create_project("persist").unwrap().project_id().clone();
        let (_, img) = anchor(&e, &pid);
        e.execute(&pid, &img).unwrap();
        (pid.clone(), img, e.snapshot(&pid).unwrap().snapshot_hash())
    };
    let e = engine_on(store(), clock.clone());
    assert_eq!(e.snapshot(&pid).unwrap().snapshot_hash(), hash);
    let done = e.run_queued();
    assert_eq!(done.len(), 1);
    assert_eq!(
        e.snapshot(&pid).unwrap().node(&img).unwrap().status,
        NodeStatus::Succeeded
    );

    let removed = e.delete_project(&pid).unwrap();
    assert!(removed.events > 0 && removed.assets == 4);
    assert_eq!(e.snapshot(&pid).unwrap_err().code(), "UnknownProject");
}

/// Blocks inside `execute` until released, so a job can be caught running.
struct Gate {
    entered: Mutex<Option<mpsc::Sender<()>>>,
    release: Mutex<mpsc::Receiver<()>>,
}

impl Executor for Gate {
    fn execute(
        &self,
        node_id: &NodeId,
        workflow: &WorkflowModule,
        request: &ExecutionRequest,
        inputs: &[ExecutionInput],
    ) -> Result<ExecutionOutput, WorkflowError> {
        if let Some(tx) = self.entered.lock().unwrap().take() {
            tx.send(()).unwrap();
        }
        self.release.lock().unwrap().recv().ok();
        MockExecutor.execute(node_id, workflow, request, inputs)
    }
}

#[test]
fn interrupted_job_fails_on_recovery_and_old_writer_goes_stale() {
    let storage: Arc<dyn Storage> = Arc::new(MemStore::new());
    let clock = Arc::new(ManualClock::new(0));
    let (entered_tx, entered_rx) = mpsc::channel();
    let (release_tx, release_rx) = mpsc::channel();
    let mut executors = ExecutorSet::default();
    executors.insert(
        "mock",
        Arc::new(Gate {
            entered: Mutex::new(Some(entered_tx)),
            release: Mutex::new(release_rx),
        }),
    );
    let first = Arc::new(
        Engine::builder(storage.clone())
            .clock(clock.clone())
            .id_scheme(IdScheme::Seeded(3))
            .executors(executors)
            .build()
            .unwrap(),
    );
    let pid = first.create_project("crash").unwrap().project_id().clone();
    let (_, img) = anchor(&first, &pid);
    let job = first.execute(&pid, &img).unwrap();
    let workers = first.start_workers(1);
    entered_rx.recv().unwrap();

    // A second engine takes over the project while the job is running.
    let second = engine_on(storage.clone(), clock.clone());
    let j = second.job(&pid, &job).unwrap();
    assert_eq!(j.state, JobState::Failed);
    let snap = second.snapshot(&pid).unwrap();
    assert_eq!(snap.node(&img).unwrap().status, NodeStatus::Failed);
    assert!(snap.node(&img).unwrap().candidates.is_empty());

    release_tx.send(()).unwrap();
    drop(workers);
    // The old writer's completion was rejected; nothing leaked into the log.
    let after = second.snapshot(&pid).unwrap();
    assert_eq!(after.snapshot_hash(), snap.snapshot_hash());
    assert!(reeltree_core::store::load_project(storage.as_ref(), &pid)
        .unwrap()
        .node(&img)
        .unwrap()
        .candidates
        .is_empty());
    // Failed nodes can be re-run.
    second.execute(&pid, &img).unwrap();
    second.run_queued();
    assert_eq!(second.snapshot(&pid).unwrap().node(&img).unwrap().candidates.len(), 1);
}
