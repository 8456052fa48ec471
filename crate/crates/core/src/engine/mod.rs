//! The engine: one serialized writer per project, immutable snapshots for
//! readers, the planning pipeline, the job board and session telemetry.
//!
//! Every mutation is computed by a pure `op_*` function against the current
//! state, appended to the project log through the writer lease and only then
//! applied and published. Executors and providers run outside the writer.

mod board;
mod error;

pub use error::EngineError;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard, PoisonError, RwLock};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use board::JobBoard;

use crate::agents::{plan_step, AgentContext, MockProvider, PlanInput, Provider, Templates};
use crate::clock::{Clock, SystemClock};
use crate::event::{EventRecord, ProjectEvent};
use crate::ids::{AssetId, BatchId, EntryId, IdScheme, IdSource, JobId, NodeId, ProjectId, SegmentId};
use crate::layout::{layout_project, LayoutConfig, LayoutResult};
use crate::metrics::{compute_report, MetricsReport, SessionEvent, SessionEventKind, SessionLog, WaitRule};
use crate::model::{CandidateRef, Modality, ModelError, Node, NodeKind, NodeStatus, Plan, SpecPatch};
use crate::state::ProjectState;
use crate::stitching::{run_encoder, write_bundle, CollectionEntry, ExportBundle, Segment, Timeline, Track, Trim};
use crate::store::{
    address_asset, gc_event, load_project, Asset, GlobalContext, MediaPayload, Project, RemovedCounts, SpacingConfig,
    Storage, StoreError, WriterLease,
};
use crate::workflows::media::sniff;
use crate::workflows::{
    validate_spec, ExecutionInput, ExecutionOutput, ExecutionRequest, ExecutorSet, Job, JobState, Registry,
    WorkflowError,
};

/// Batch id recorded for assets uploaded by the user rather than generated.
pub const UPLOAD_BATCH: &str = "upload";

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

/// Partial update of project settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SettingsPatch {
    pub global_context: Option<GlobalContext>,
    pub layout: Option<SpacingConfig>,
    pub modality_colors: Option<BTreeMap<NodeKind, String>>,
    pub still_duration_ms: Option<u64>,
}

pub struct EngineBuilder {
    storage: Arc<dyn Storage>,
    provider: Arc<dyn Provider>,
    templates: Templates,
    registry: Registry,
    executors: ExecutorSet,
    clock: Arc<dyn Clock>,
    id_scheme: IdScheme,
    encoder_cmd: Option<String>,
}

impl EngineBuilder {
    pub fn provider(mut self, p: Arc<dyn Provider>) -> Self {
        self.provider = p;
        self
    }

    pub fn templates(mut self, t: Templates) -> Self {
        self.templates = t;
        self
    }

    pub fn registry(mut self, r: Registry) -> Self {
        self.registry = r;
        self
    }

    pub fn executors(mut self, e: ExecutorSet) -> Self {
        self.executors = e;
        self
    }

    pub fn clock(mut self, c: Arc<dyn Clock>) -> Self {
        self.clock = c;
        self
    }

    pub fn id_scheme(mut self, s: IdScheme) -> Self {
        self.id_scheme = s;
        self
    }

    /// Shell template run after export; empty or `None` disables it.
    pub fn encoder_cmd(mut self, cmd: Option<String>) -> Self {
        self.encoder_cmd = cmd.filter(|c| !c.trim().is_empty());
        self
    }

    /// Builds the engine and opens every stored project, recovering jobs
    /// interrupted by a previous shutdown.
    pub fn build(self) -> Result<Engine, EngineError> {
        let engine = Engine {
            storage: self.storage,
            provider: self.provider,
            templates: Arc::new(self.templates),
            registry: RwLock::new(Arc::new(self.registry)),
            executors: self.executors,
            clock: self.clock,
            id_scheme: self.id_scheme,
            encoder_cmd: self.encoder_cmd,
            projects: Mutex::new(HashMap::new()),
            planning: Mutex::new(HashSet::new()),
            board: Arc::new(JobBoard::default()),
        };
        for pid in engine.storage.list_projects()? {
            engine.handle(&pid)?;
        }
        Ok(engine)
    }
}

struct Writer {
    lease: WriterLease,
    state: ProjectState,
    session: SessionLog,
    last_ts: u64,
}

struct Handle {
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<ProjectState>>,
}

impl Handle {
    fn snapshot(&self) -> Arc<ProjectState> {
        self.snapshot.read().unwrap_or_else(PoisonError::into_inner).clone()
    }
}

type Mutation<T> = (T, Vec<ProjectEvent>, Vec<SessionEventKind>);

pub struct Engine {
    storage: Arc<dyn Storage>,
    provider: Arc<dyn Provider>,
    templates: Arc<Templates>,
    registry: RwLock<Arc<Registry>>,
    executors: ExecutorSet,
    clock: Arc<dyn Clock>,
    id_scheme: IdScheme,
    encoder_cmd: Option<String>,
    projects: Mutex<HashMap<ProjectId, Arc<Handle>>>,
    planning: Mutex<HashSet<NodeId>>,
    board: Arc<JobBoard>,
}

/// Background job runners. Dropping the pool stops and joins them.
pub struct WorkerPool {
    board: Arc<JobBoard>,
    threads: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.board.shutdown();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.stop();
    }
}

struct PlanningGuard<'a> {
    set: &'a Mutex<HashSet<NodeId>>,
    node: NodeId,
}

impl Drop for PlanningGuard<'_> {
    fn drop(&mut self) {
        lock(self.set).remove(&self.node);
    }
}

impl Engine {
    /// Defaults: mock provider, built-in templates, baseline registry, mock
    /// executors, system clock, random ids, no encoder.
    pub fn builder(storage: Arc<dyn Storage>) -> EngineBuilder {
        EngineBuilder {
            storage,
            provider: Arc::new(MockProvider::new()),
            templates: Templates::builtin(),
            registry: Registry::baseline(),
            executors: ExecutorSet::with_mock(),
            clock: Arc::new(SystemClock),
            id_scheme: IdScheme::Random,
            encoder_cmd: None,
        }
    }

    pub fn storage(&self) -> &Arc<dyn Storage> {
        &self.storage
    }

    pub fn registry(&self) -> Arc<Registry> {
        self.registry.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    /// Swaps the registry atomically.
    pub fn replace_registry(&self, registry: Registry) {
        *self.registry.write().unwrap_or_else(PoisonError::into_inner) = Arc::new(registry);
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    // ---- project handles -------------------------------------------------

    fn handle(&self, pid: &ProjectId) -> Result<Arc<Handle>, EngineError> {
        let mut projects = lock(&self.projects);
        if let Some(h) = projects.get(pid) {
            return Ok(h.clone());
        }
        if !self.storage.project_exists(pid) {
            return Err(StoreError::UnknownProject(pid.clone()).into());
        }
        let lease = self.storage.acquire_writer(pid)?;
        let state = load_project(self.storage.as_ref(), pid)?;
        let lines = self.storage.read_session(pid)?;
        let session = parse_session(&lines)?;
        let last_ts = session.events().last().map_or(0, |e| e.timestamp);
        let h = Arc::new(Handle {
            snapshot: RwLock::new(Arc::new(state.clone())),
            writer: Mutex::new(Writer {
                lease,
                state,
                session,
                last_ts,
            }),
        });
        projects.insert(pid.clone(), h.clone());
        drop(projects);
        self.recover(pid, &h)?;
        Ok(h)
    }

    /// Running jobs cannot survive a restart: their executor is gone and no
    /// batch was appended, so they fail. Queued jobs go back on the board.
    fn recover(&self, pid: &ProjectId, h: &Handle) -> Result<(), EngineError> {
        let mut w = lock(&h.writer);
        let mut events = vec![];
        let mut session = vec![];
        let mut requeue = vec![];
        for j in w.state.jobs.values() {
            match j.state {
                JobState::Running => {
                    events.push(ProjectEvent::JobFailed {
                        job_id: j.job_id.clone(),
                        node_id: j.node_id.clone(),
                        error: "interrupted before completion".into(),
                    });
                    session.push(SessionEventKind::ResultPreviewable {
                        node_id: j.node_id.clone(),
                        job_id: j.job_id.clone(),
                    });
                }
                JobState::Queued => requeue.push(j.job_id.clone()),
                _ => {}
            }
        }
        if !events.is_empty() {
            tracing::warn!(project = %pid, count = events.len(), "failing jobs interrupted by shutdown");
            self.commit(h, &mut w, events, session)?;
        }
        for j in requeue {
            self.board.push(pid.clone(), j);
        }
        Ok(())
    }

    fn commit(
        &self,
        h: &Handle,
        w: &mut Writer,
        events: Vec<ProjectEvent>,
        session: Vec<SessionEventKind>,
    ) -> Result<(), EngineError> {
        let pid = w.lease.project_id.clone();
        for event in events {
            let ts = self.now().max(w.last_ts);
            let record = EventRecord {
                seq: w.state.last_seq + 1,
                timestamp: ts,
                event,
            };
            self.storage.append_event(&w.lease, &record)?;
            w.state.apply(&record);
            w.last_ts = ts;
        }
        for kind in session {
            let ts = self.now().max(w.last_ts);
            let ev = w.session.prepare(ts, kind)?;
            let line = serde_json::to_string(&ev).expect("session event serializes");
            self.storage.append_session(&pid, &line)?;
            w.session.commit(ev);
            w.last_ts = ts;
        }
        *h.snapshot.write().unwrap_or_else(PoisonError::into_inner) = Arc::new(w.state.clone());
        Ok(())
    }

    fn mutate<T>(
        &self,
        pid: &ProjectId,
        f: impl FnOnce(&ProjectState, &mut IdSource) -> Result<Mutation<T>, EngineError>,
    ) -> Result<T, EngineError> {
        let h = self.handle(pid)?;
        let mut w = lock(&h.writer);
        let mut ids = IdSource::new(self.id_scheme, pid.as_str(), w.state.last_seq + 1);
        let (out, events, session) = f(&w.state, &mut ids)?;
        self.commit(&h, &mut w, events, session)?;
        Ok(out)
    }

    fn node_after(&self, pid: &ProjectId, node: &NodeId) -> Result<Node, EngineError> {
        Ok(self.snapshot(pid)?.node(node)?.clone())
    }

    // ---- projects --------------------------------------------------------

    /// Creates a project together with its Init root and opens its session.
    pub fn create_project(&self, name: &str) -> Result<Arc<ProjectState>, EngineError> {
        if name.trim().is_empty() {
            return Err(EngineError::InvalidSettings("project name is empty".into()));
        }
        let existing = self.storage.list_projects()?;
        let mut ids = IdSource::new(self.id_scheme, "projects", existing.len() as u64 + 1);
        let pid = loop {
            let id = ProjectId::new(ids.next(name));
            if !self.storage.project_exists(&id) {
                break id;
            }
        };
        let project = Project::new(pid.clone(), name.trim(), self.now());
        self.storage.create_project(&project)?;
        let lease = self.storage.acquire_writer(&pid)?;
        let h = Arc::new(Handle {
            snapshot: RwLock::new(Arc::new(ProjectState::new(project.clone()))),
            writer: Mutex::new(Writer {
                lease,
                state: ProjectState::new(project.clone()),
                session: SessionLog::new(),
                last_ts: 0,
            }),
        });
        lock(&self.projects).insert(pid.clone(), h.clone());
        {
            let mut w = lock(&h.writer);
            let mut node_ids = IdSource::new(self.id_scheme, pid.as_str(), 1);
            let root = NodeId::new(node_ids.next("node"));
            self.commit(
                &h,
                &mut w,
                vec![
                    ProjectEvent::ProjectCreated { project },
                    ProjectEvent::RootCreated { node_id: root },
                ],
                vec![SessionEventKind::SessionStarted],
            )?;
        }
        Ok(h.snapshot())
    }

    pub fn list_projects(&self) -> Result<Vec<Project>, EngineError> {
        let mut out = vec![];
        for pid in self.storage.list_projects()? {
            out.push(self.snapshot(&pid)?.project.clone());
        }
        Ok(out)
    }

    /// Removes the project's tree, log, session, timeline and assets.
    pub fn delete_project(&self, pid: &ProjectId) -> Result<RemovedCounts, EngineError> {
        let h = self.handle(pid)?;
        let w = lock(&h.writer);
        self.board.forget_project(pid);
        self.storage.release_writer(&w.lease);
        let counts = self.storage.delete_project(pid)?;
        lock(&self.projects).remove(pid);
        Ok(counts)
    }

    /// The latest fully applied state. Never blocks on the writer.
    pub fn snapshot(&self, pid: &ProjectId) -> Result<Arc<ProjectState>, EngineError> {
        Ok(self.handle(pid)?.snapshot())
    }

    pub fn session_log(&self, pid: &ProjectId) -> Result<SessionLog, EngineError> {
        let h = self.handle(pid)?;
        let w = lock(&h.writer);
        Ok(w.session.clone())
    }

    fn loaded_snapshots(&self) -> Vec<Arc<ProjectState>> {
        let handles: Vec<Arc<Handle>> = lock(&self.projects).values().cloned().collect();
        handles.iter().map(|h| h.snapshot()).collect()
    }

    pub fn locate_node(&self, node: &NodeId) -> Result<ProjectId, EngineError> {
        self.loaded_snapshots()
            .iter()
            .find(|s| s.nodes.contains_key(node))
            .map(|s| s.project_id().clone())
            .ok_or_else(|| ModelError::UnknownNode(node.clone()).into())
    }

    pub fn locate_job(&self, job: &JobId) -> Result<ProjectId, EngineError> {
        self.loaded_snapshots()
            .iter()
            .find(|s| s.jobs.contains_key(job))
            .map(|s| s.project_id().clone())
            .ok_or_else(|| WorkflowError::UnknownJob(job.clone()).into())
    }

    pub fn locate_asset(&self, asset: &AssetId) -> Result<ProjectId, EngineError> {
        self.loaded_snapshots()
            .iter()
            .find(|s| s.assets.contains_key(asset))
            .map(|s| s.project_id().clone())
            .ok_or_else(|| StoreError::UnknownAsset(asset.clone()).into())
    }

    pub fn update_settings(&self, pid: &ProjectId, patch: SettingsPatch) -> Result<Project, EngineError> {
        self.mutate(pid, |s, _| {
            let layout = patch.layout.unwrap_or(s.project.layout_config);
            if !layout.is_valid() {
                return Err(EngineError::InvalidSettings(
                    "h_spacing and v_spacing must be positive".into(),
                ));
            }
            let colors = patch
                .modality_colors
                .unwrap_or_else(|| s.project.modality_colors.clone());
            if !Project::colors_cover_media(&colors) {
                return Err(EngineError::InvalidSettings(
                    "modality colors must cover Image, Video and Audio".into(),
                ));
            }
            if patch.still_duration_ms == Some(0) {
                return Err(EngineError::InvalidSettings("still duration must be positive".into()));
            }
            let ev = ProjectEvent::SettingsUpdated {
                global_context: patch.global_context.unwrap_or_else(|| s.project.global_context.clone()),
                layout,
                modality_colors: colors,
                still_duration_ms: patch.still_duration_ms,
            };
            Ok(((), vec![ev], vec![]))
        })?;
        Ok(self.snapshot(pid)?.project.clone())
    }

    // ---- tree ------------------------------------------------------------

    pub fn create_root(&self, pid: &ProjectId) -> Result<NodeId, EngineError> {
        self.mutate(pid, |s, ids| {
            let (id, ev) = s.op_create_root(ids)?;
            Ok((id, vec![ev], vec![]))
        })
    }

    pub fn add_child(&self, pid: &ProjectId, parent: &NodeId, kind: NodeKind) -> Result<NodeId, EngineError> {
        self.mutate(pid, |s, ids| {
            let (id, ev) = s.op_add_child(parent, kind, ids)?;
            Ok((id, vec![ev], vec![]))
        })
    }

    /// Adds a modal node whose workflow is chosen by the caller.
    pub fn add_modal(
        &self,
        pid: &ProjectId,
        parent: &NodeId,
        workflow_id: &str,
        spec: SpecPatch,
    ) -> Result<NodeId, EngineError> {
        let registry = self.registry();
        self.mutate(pid, |s, ids| {
            let (id, events) = s.op_add_modal(parent, workflow_id, spec, &registry, ids)?;
            Ok((id, events, vec![]))
        })
    }

    pub fn edit_spec(
        &self,
        pid: &ProjectId,
        node: &NodeId,
        patch: SpecPatch,
        base_revision: Option<u64>,
    ) -> Result<Node, EngineError> {
        let registry = self.registry();
        self.mutate(pid, |s, _| {
            let ev = s.op_edit_spec(node, patch, base_revision, &registry)?;
            Ok(((), vec![ev], vec![]))
        })?;
        self.node_after(pid, node)
    }

    pub fn lock_intent(&self, pid: &ProjectId, node: &NodeId) -> Result<Node, EngineError> {
        self.mutate(pid, |s, _| Ok(((), vec![s.op_lock_intent(node)?], vec![])))?;
        self.node_after(pid, node)
    }

    /// Runs the agent pipeline for a Planning node and stores the plan for
    /// review. `intent` and `references` default to the node's spec. The
    /// writer is not held while the provider is consulted.
    pub fn plan(
        &self,
        pid: &ProjectId,
        node: &NodeId,
        intent: Option<String>,
        references: Option<Vec<AssetId>>,
    ) -> Result<Plan, EngineError> {
        if !lock(&self.planning).insert(node.clone()) {
            return Err(EngineError::PlanInFlight);
        }
        let _guard = PlanningGuard {
            set: &self.planning,
            node: node.clone(),
        };
        let snap = self.snapshot(pid)?;
        let n = snap.node(node)?;
        let intent = intent.unwrap_or_else(|| n.spec.intent_text.clone());
        let references = references.unwrap_or_else(|| n.spec.reference_asset_ids.clone());
        snap.check_plannable(node, &intent, &references)?;
        let parent = n.parent_id.clone().ok_or(ModelError::NotPlanningNode(node.clone()))?;
        let input = PlanInput {
            context: AgentContext {
                path: snap.derive_context(&parent)?,
                global: snap.project.global_context.clone(),
            },
            intent: intent.clone(),
            references: references
                .iter()
                .map(|a| (a.clone(), snap.assets[a].modality))
                .collect(),
        };
        let registry = self.registry();
        let plan = plan_step(self.provider.as_ref(), &self.templates, &registry, &input)?;
        self.mutate(pid, |s, _| {
            let ev = s.op_store_plan(node, &intent, references, plan.clone(), &registry)?;
            Ok(((), vec![ev], vec![]))
        })?;
        Ok(plan)
    }

    pub fn materialize(
        &self,
        pid: &ProjectId,
        node: &NodeId,
        plan: Option<Plan>,
        edits: SpecPatch,
    ) -> Result<Node, EngineError> {
        let registry = self.registry();
        self.mutate(pid, |s, _| {
            let ev = s.op_materialize(node, plan, edits, &registry)?;
            Ok(((), vec![ev], vec![]))
        })?;
        self.node_after(pid, node)
    }

    pub fn select(&self, pid: &ProjectId, node: &NodeId, at: CandidateRef) -> Result<Node, EngineError> {
        self.mutate(pid, |s, _| Ok(((), vec![s.op_select(node, at)?], vec![])))?;
        self.node_after(pid, node)
    }

    /// Marks or unmarks a candidate as kept. Marking counts as a retained
    /// variant for the session.
    pub fn retain(
        &self,
        pid: &ProjectId,
        node: &NodeId,
        at: CandidateRef,
        retained: bool,
    ) -> Result<Node, EngineError> {
        self.mutate(pid, |s, _| {
            let Some(ev) = s.op_retain(node, at, retained)? else {
                return Ok(((), vec![], vec![]));
            };
            let mut session = vec![];
            if retained {
                let asset_id = s.node(node)?.candidate(at).cloned().expect("checked by op_retain");
                session.push(SessionEventKind::VariantRetained {
                    node_id: node.clone(),
                    asset_id,
                });
            }
            Ok(((), vec![ev], session))
        })?;
        self.node_after(pid, node)
    }

    pub fn collapse(&self, pid: &ProjectId, node: &NodeId, collapsed: bool) -> Result<Node, EngineError> {
        self.mutate(pid, |s, _| {
            Ok(((), s.op_collapse(node, collapsed)?.into_iter().collect(), vec![]))
        })?;
        self.node_after(pid, node)
    }

    pub fn prune(&self, pid: &ProjectId, node: &NodeId) -> Result<Vec<NodeId>, EngineError> {
        self.mutate(pid, |s, _| {
            let (removed, ev) = s.op_prune(node)?;
            Ok((removed, vec![ev], vec![]))
        })
    }

    // ---- execution -------------------------------------------------------

    /// Validates the node's spec and enqueues a job. The job runs on a
    /// worker (see [`Engine::start_workers`]) or via [`Engine::run_queued`].
    pub fn execute(&self, pid: &ProjectId, node_id: &NodeId) -> Result<JobId, EngineError> {
        let registry = self.registry();
        let job_id = self.mutate(pid, |s, ids| {
            let node = s.node(node_id)?;
            if s.active_job_for(node_id).is_some() {
                return Err(ModelError::NodeBusy(node_id.clone()).into());
            }
            if !node.kind.is_modal()
                || !matches!(
                    node.status,
                    NodeStatus::Planned | NodeStatus::Succeeded | NodeStatus::Failed
                )
            {
                return Err(WorkflowError::NodeNotPlanned.into());
            }
            let wf_id = node.spec.workflow_id.as_deref().ok_or(WorkflowError::NodeNotPlanned)?;
            let wf = registry
                .get(wf_id)
                .ok_or_else(|| ModelError::UnknownWorkflow(wf_id.to_owned()))?;
            s.check_references(&node.spec)?;
            let normalized = validate_spec(&node.spec, wf, |a| s.assets.get(a).map(|x| x.modality))
                .map_err(|e| WorkflowError::ValidationFailed(e.to_string()))?;
            self.executors.get(&wf.executor_id)?;
            let job_id = JobId::new(ids.next("job"));
            let job = Job {
                job_id: job_id.clone(),
                project_id: pid.clone(),
                node_id: node_id.clone(),
                state: JobState::Queued,
                progress: 0.0,
                requested_at: 0,
                started_at: None,
                finished_at: None,
                error: None,
                prior_status: node.status,
                request: ExecutionRequest {
                    workflow_id: wf.workflow_id.clone(),
                    parameters: normalized.parameters,
                    prompt_text: node.spec.prompt_text.clone(),
                    inputs: normalized.bindings,
                    batch_ordinal: node.candidates.len(),
                },
            };
            let request = SessionEventKind::RequestIssued {
                node_id: node_id.clone(),
                job_id: job_id.clone(),
            };
            Ok((job_id, vec![ProjectEvent::JobQueued { job }], vec![request]))
        })?;
        self.board.push(pid.clone(), job_id.clone());
        Ok(job_id)
    }

    pub fn job(&self, pid: &ProjectId, job: &JobId) -> Result<Job, EngineError> {
        self.snapshot(pid)?
            .jobs
            .get(job)
            .cloned()
            .ok_or_else(|| WorkflowError::UnknownJob(job.clone()).into())
    }

    /// Cancels a job that has not started; the node returns to the status
    /// it had before queueing.
    pub fn cancel_job(&self, pid: &ProjectId, job_id: &JobId) -> Result<Job, EngineError> {
        self.mutate(pid, |s, _| {
            let job = s
                .jobs
                .get(job_id)
                .ok_or_else(|| WorkflowError::UnknownJob(job_id.clone()))?;
            if job.state != JobState::Queued {
                return Err(WorkflowError::JobNotCancellable(job_id.clone()).into());
            }
            self.board.withdraw(job_id);
            let ev = ProjectEvent::JobCancelled {
                job_id: job_id.clone(),
                node_id: job.node_id.clone(),
            };
            let closed = SessionEventKind::ResultPreviewable {
                node_id: job.node_id.clone(),
                job_id: job_id.clone(),
            };
            Ok(((), vec![ev], vec![closed]))
        })?;
        self.job(pid, job_id)
    }

    /// Runs one queued job to completion on the calling thread.
    pub fn run_job(&self, pid: &ProjectId, job_id: &JobId) -> Result<Job, EngineError> {
        let h = self.handle(pid)?;
        let registry = self.registry();
        let prepared = {
            let mut w = lock(&h.writer);
            let job = w
                .state
                .jobs
                .get(job_id)
                .cloned()
                .ok_or_else(|| WorkflowError::UnknownJob(job_id.clone()))?;
            if job.state != JobState::Queued {
                return Ok(job);
            }
            self.commit(
                &h,
                &mut w,
                vec![ProjectEvent::JobStarted {
                    job_id: job_id.clone(),
                    node_id: job.node_id.clone(),
                }],
                vec![],
            )?;
            self.gather_inputs(pid, &w.state, &job, &registry)
                .map(|inputs| (job, inputs))
        };
        let outcome = prepared.and_then(|(job, (wf, inputs))| {
            let executor = self.executors.get(&wf.executor_id)?;
            let out = executor.execute(&job.node_id, &wf, &job.request, &inputs)?;
            Ok((job, out))
        });
        let mut w = lock(&h.writer);
        let node_id = w.state.jobs[job_id].node_id.clone();
        let result = match outcome {
            Ok((job, out)) => self.finish_job(&h, &mut w, &job, out),
            Err(e) => Err(e),
        };
        if let Err(e) = result {
            tracing::warn!(job = %job_id, error = %e, "job failed");
            self.commit(
                &h,
                &mut w,
                vec![ProjectEvent::JobFailed {
                    job_id: job_id.clone(),
                    node_id: node_id.clone(),
                    error: e.to_string(),
                }],
                vec![SessionEventKind::ResultPreviewable {
                    node_id,
                    job_id: job_id.clone(),
                }],
            )?;
        }
        Ok(w.state.jobs[job_id].clone())
    }

    fn gather_inputs(
        &self,
        pid: &ProjectId,
        state: &ProjectState,
        job: &Job,
        registry: &Registry,
    ) -> Result<(crate::workflows::WorkflowModule, Vec<ExecutionInput>), EngineError> {
        let wf = registry
            .get(&job.request.workflow_id)
            .cloned()
            .ok_or_else(|| ModelError::UnknownWorkflow(job.request.workflow_id.clone()))?;
        let mut inputs = vec![];
        for b in &job.request.inputs {
            let Some(id) = &b.asset_id else { continue };
            let asset = state
                .assets
                .get(id)
                .cloned()
                .ok_or_else(|| StoreError::UnknownAsset(id.clone()))?;
            inputs.push(ExecutionInput {
                slot: b.slot.clone(),
                bytes: self.storage.read_asset(pid, id)?,
                asset,
            });
        }
        Ok((wf, inputs))
    }

    fn finish_job(&self, h: &Handle, w: &mut Writer, job: &Job, out: ExecutionOutput) -> Result<(), EngineError> {
        if out.candidates.is_empty() {
            return Err(WorkflowError::ExecutionFailed("executor produced no candidates".into()).into());
        }
        let pid = w.lease.project_id.clone();
        let mut ids = IdSource::new(self.id_scheme, pid.as_str(), w.state.last_seq + 1);
        let batch_id = BatchId::new(ids.next("batch"));
        let now = self.now();
        let mut new_assets: Vec<Asset> = vec![];
        let mut store = |p: &MediaPayload| -> Result<AssetId, EngineError> {
            let asset = address_asset(&w.state, p, &job.node_id, &batch_id, now)?;
            self.storage.write_asset(&pid, &asset, &p.bytes)?;
            let id = asset.asset_id.clone();
            if !w.state.assets.contains_key(&id) && !new_assets.iter().any(|a| a.asset_id == id) {
                new_assets.push(asset);
            }
            Ok(id)
        };
        let asset_ids = out.candidates.iter().map(&mut store).collect::<Result<Vec<_>, _>>()?;
        let auxiliary_asset_ids = out.auxiliary.iter().map(&mut store).collect::<Result<Vec<_>, _>>()?;
        let calls = out.generation_calls.max(1);
        let batch = crate::model::CandidateBatch {
            batch_id,
            asset_ids,
            auxiliary_asset_ids,
            executed_workflow_id: job.request.workflow_id.clone(),
            executed_parameters: job.request.parameters.clone(),
            generation_call_count: calls,
        };
        self.commit(
            h,
            w,
            vec![ProjectEvent::BatchAppended {
                job_id: job.job_id.clone(),
                node_id: job.node_id.clone(),
                batch,
                assets: new_assets,
            }],
            vec![
                SessionEventKind::GenerationCall {
                    node_id: job.node_id.clone(),
                    count: calls,
                },
                SessionEventKind::ResultPreviewable {
                    node_id: job.node_id.clone(),
                    job_id: job.job_id.clone(),
                },
            ],
        )
    }

    /// Drains the job board on the calling thread. Returns the jobs run.
    pub fn run_queued(&self) -> Vec<Job> {
        let mut done = vec![];
        while let Some((pid, job)) = self.board.try_take() {
            match self.run_job(&pid, &job) {
                Ok(j) => done.push(j),
                Err(e) => tracing::error!(project = %pid, job = %job, error = %e, "job runner error"),
            }
            self.board.finish(&pid);
        }
        done
    }

    pub fn is_idle(&self) -> bool {
        self.board.is_idle()
    }

    /// Starts `n` background runners (at least one).
    pub fn start_workers(self: &Arc<Self>, n: usize) -> WorkerPool {
        let threads = (0..n.max(1))
            .map(|i| {
                let engine = Arc::clone(self);
                std::thread::Builder::new()
                    .name(format!("job-runner-{i}"))
                    .spawn(move || {
                        while let Some((pid, job)) = engine.board.take_blocking() {
                            if let Err(e) = engine.run_job(&pid, &job) {
                                tracing::error!(project = %pid, job = %job, error = %e, "job runner error");
                            }
                            engine.board.finish(&pid);
                        }
                    })
                    .expect("spawn job runner")
            })
            .collect();
        WorkerPool {
            board: self.board.clone(),
            threads,
        }
    }

    // ---- assets ----------------------------------------------------------

    /// Stores uploaded bytes as an asset produced by the Init root, so it
    /// can be referenced like any generated output. The modality is sniffed
    /// from the content unless given.
    pub fn import_asset(
        &self,
        pid: &ProjectId,
        bytes: Vec<u8>,
        modality: Option<Modality>,
        format: Option<String>,
    ) -> Result<Asset, EngineError> {
        let (modality, mut metadata) = match (sniff(&bytes), modality) {
            (Some((m, meta)), None) => (m, meta),
            (Some((m, meta)), Some(want)) if m == want => (m, meta),
            (_, Some(want)) => (want, Default::default()),
            (None, None) => return Err(EngineError::UnknownMedia),
        };
        if let Some(f) = format {
            metadata.format = f;
        } else if metadata.format.is_empty() {
            metadata.format = "bin".into();
        }
        let payload = MediaPayload {
            bytes,
            modality,
            metadata,
        };
        self.mutate(pid, |s, _| {
            let root = s.root.clone().ok_or(ModelError::MissingRoot)?;
            let asset = address_asset(s, &payload, &root, &BatchId::new(UPLOAD_BATCH), self.now())?;
            self.storage.write_asset(pid, &asset, &payload.bytes)?;
            let events = if s.assets.contains_key(&asset.asset_id) {
                vec![]
            } else {
                vec![ProjectEvent::AssetImported { asset: asset.clone() }]
            };
            Ok((asset, events, vec![]))
        })
    }

    pub fn read_asset(&self, pid: &ProjectId, asset_id: &AssetId) -> Result<(Asset, Vec<u8>), EngineError> {
        let snap = self.snapshot(pid)?;
        let asset = snap
            .assets
            .get(asset_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownAsset(asset_id.clone()))?;
        Ok((asset, self.storage.read_asset(pid, asset_id)?))
    }

    /// Releases assets nothing live reaches and deletes their bytes, plus
    /// any stored bytes the index never recorded (left by an interrupted
    /// job). Returns the removed ids.
    pub fn collect_garbage(&self, pid: &ProjectId) -> Result<Vec<AssetId>, EngineError> {
        let h = self.handle(pid)?;
        let mut w = lock(&h.writer);
        let mut removed = vec![];
        if let Some(ev) = gc_event(&w.state) {
            if let ProjectEvent::AssetsReleased { asset_ids } = &ev {
                removed.extend(asset_ids.iter().cloned());
            }
            self.commit(&h, &mut w, vec![ev], vec![])?;
        }
        for id in self.storage.list_assets(pid)? {
            if !w.state.assets.contains_key(&id) && !removed.contains(&id) {
                removed.push(id);
            }
        }
        for id in &removed {
            self.storage.delete_asset(pid, id)?;
        }
        removed.sort();
        Ok(removed)
    }

    // ---- stitching -------------------------------------------------------

    /// Adds a candidate to the collection area. The first collect of a
    /// session marks the start of assembly unless it was marked explicitly.
    pub fn collect(&self, pid: &ProjectId, node: &NodeId, at: CandidateRef) -> Result<CollectionEntry, EngineError> {
        let h = self.handle(pid)?;
        let mut w = lock(&h.writer);
        let mut ids = IdSource::new(self.id_scheme, pid.as_str(), w.state.last_seq + 1);
        let (entry, ev) = w.state.op_collect(node, at, &mut ids)?;
        let mut session = vec![];
        if !w.session.has(|k| *k == SessionEventKind::AssemblyEntered) {
            session.push(SessionEventKind::AssemblyEntered);
        }
        session.push(SessionEventKind::VariantRetained {
            node_id: node.clone(),
            asset_id: entry.asset_id.clone(),
        });
        self.commit(&h, &mut w, vec![ev], session)?;
        Ok(entry)
    }

    pub fn uncollect(&self, pid: &ProjectId, entry: &EntryId) -> Result<Timeline, EngineError> {
        self.mutate(pid, |s, _| Ok(((), vec![s.op_uncollect(entry)?], vec![])))?;
        Ok(self.snapshot(pid)?.timeline.clone())
    }

    pub fn place(
        &self,
        pid: &ProjectId,
        entry: &EntryId,
        track: Track,
        order_index: Option<u32>,
        trim: Option<Trim>,
    ) -> Result<Segment, EngineError> {
        let placed = self.mutate(pid, |s, ids| {
            let (seg, ev) = s.op_place(entry, track, order_index, trim, ids)?;
            Ok((seg.segment_id, vec![ev], vec![]))
        })?;
        let snap = self.snapshot(pid)?;
        Ok(snap.timeline.segment(&placed).cloned().expect("segment just placed"))
    }

    pub fn reorder(&self, pid: &ProjectId, segment: &SegmentId, new_index: u32) -> Result<Timeline, EngineError> {
        self.mutate(pid, |s, _| Ok(((), vec![s.op_reorder(segment, new_index)?], vec![])))?;
        Ok(self.snapshot(pid)?.timeline.clone())
    }

    pub fn remove_segment(&self, pid: &ProjectId, segment: &SegmentId) -> Result<Timeline, EngineError> {
        self.mutate(pid, |s, _| Ok(((), vec![s.op_remove_segment(segment)?], vec![])))?;
        Ok(self.snapshot(pid)?.timeline.clone())
    }

    pub fn trace_origin(&self, pid: &ProjectId, segment: &SegmentId) -> Result<NodeId, EngineError> {
        Ok(self.snapshot(pid)?.trace_origin(segment)?)
    }

    /// Writes the export bundle into `out_dir`, runs the configured encoder
    /// if any, and records the export in the session.
    pub fn export(&self, pid: &ProjectId, out_dir: &Path) -> Result<ExportBundle, EngineError> {
        let snap = self.snapshot(pid)?;
        let read = |id: &AssetId| {
            self.storage
                .read_asset(pid, id)
                .map_err(|e| std::io::Error::other(e.to_string()))
        };
        let mut bundle = write_bundle(&snap, &read, out_dir)?;
        if let Some(cmd) = &self.encoder_cmd {
            run_encoder(&mut bundle, cmd)?;
        }
        self.mutate(pid, |_, _| Ok(((), vec![], vec![SessionEventKind::ExportCompleted])))?;
        Ok(bundle)
    }

    // ---- telemetry and views ---------------------------------------------

    /// Records a creator-declared session event. Events the engine emits
    /// itself are rejected.
    pub fn record_session_event(&self, pid: &ProjectId, kind: SessionEventKind) -> Result<SessionEvent, EngineError> {
        let name = match &kind {
            SessionEventKind::SceneCompleted { .. }
            | SessionEventKind::AssemblyEntered
            | SessionEventKind::SessionClosed => None,
            SessionEventKind::SessionStarted => Some("SessionStarted"),
            SessionEventKind::RequestIssued { .. } => Some("RequestIssued"),
            SessionEventKind::ResultPreviewable { .. } => Some("ResultPreviewable"),
            SessionEventKind::GenerationCall { .. } => Some("GenerationCall"),
            SessionEventKind::VariantRetained { .. } => Some("VariantRetained"),
            SessionEventKind::ExportCompleted => Some("ExportCompleted"),
        };
        if let Some(n) = name {
            return Err(EngineError::ReservedSessionEvent(n));
        }
        self.mutate(pid, |_, _| Ok(((), vec![], vec![kind])))?;
        let log = self.session_log(pid)?;
        Ok(log.events().last().cloned().expect("just recorded"))
    }

    pub fn metrics(&self, pid: &ProjectId, rule: WaitRule) -> Result<MetricsReport, EngineError> {
        Ok(compute_report(&self.session_log(pid)?, rule)?)
    }

    pub fn layout(&self, pid: &ProjectId) -> Result<LayoutResult<NodeId>, EngineError> {
        let snap = self.snapshot(pid)?;
        Ok(layout_project(
            &snap,
            &LayoutConfig::from_spacing(snap.project.layout_config),
        )?)
    }
}

/// Parses a session log, dropping a torn final line.
fn parse_session(lines: &[String]) -> Result<SessionLog, EngineError> {
    match SessionLog::from_lines(lines.iter().map(String::as_str)) {
        Ok(log) => Ok(log),
        Err(e) if !lines.is_empty() => {
            let head = &lines[..lines.len() - 1];
            SessionLog::from_lines(head.iter().map(String::as_str)).map_err(|_| e.into())
        }
        Err(e) => Err(e.into()),
    }
}
