//! Backends the script interpreter can drive: the engine in process, or a
//! running service over HTTP. Both report failures as `(code, message)`
//! with the engine's error codes, so a script fails the same way on either.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use reeltree_core::clock::ManualClock;
use reeltree_core::engine::{Engine, EngineError, SettingsPatch};
use reeltree_core::ids::{EntryId, JobId, NodeId, ProjectId, SegmentId};
use reeltree_core::metrics::{SessionEventKind, WaitRule};
use reeltree_core::model::{CandidateRef, Node, NodeKind, Plan, SpecPatch};
use reeltree_core::state::ProjectState;
use reeltree_core::stitching::{CollectionEntry, Segment, StitchManifest, Track, Trim};
use reeltree_core::store::GlobalContext;
use reeltree_core::workflows::{Job, JobState};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct DriverError {
    pub code: String,
    pub message: String,
}

impl DriverError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<EngineError> for DriverError {
    fn from(e: EngineError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

pub type DriverResult<T> = Result<T, DriverError>;

pub trait Driver {
    fn create_project(&mut self, name: &str) -> DriverResult<(ProjectId, NodeId)>;
    fn set_context(&mut self, pid: &ProjectId, ctx: GlobalContext) -> DriverResult<()>;
    fn add_child(&mut self, pid: &ProjectId, parent: &NodeId, kind: NodeKind) -> DriverResult<NodeId>;
    fn add_modal(&mut self, pid: &ProjectId, parent: &NodeId, workflow: &str, spec: SpecPatch) -> DriverResult<NodeId>;
    fn edit_spec(&mut self, pid: &ProjectId, node: &NodeId, patch: SpecPatch) -> DriverResult<Node>;
    fn lock_intent(&mut self, pid: &ProjectId, node: &NodeId) -> DriverResult<Node>;
    fn plan(
        &mut self,
        pid: &ProjectId,
        node: &NodeId,
        intent: &str,
        refs: Vec<reeltree_core::ids::AssetId>,
    ) -> DriverResult<Plan>;
    fn materialize(&mut self, pid: &ProjectId, node: &NodeId, edits: SpecPatch) -> DriverResult<Node>;
    /// Enqueues and runs a job to a terminal state. `latency` is how long
    /// generation takes on a simulated clock; real backends ignore it.
    fn execute(&mut self, pid: &ProjectId, node: &NodeId, latency: Duration) -> DriverResult<Job>;
    fn node(&mut self, pid: &ProjectId, node: &NodeId) -> DriverResult<Node>;
    fn select(&mut self, pid: &ProjectId, node: &NodeId, at: CandidateRef) -> DriverResult<Node>;
    fn retain(&mut self, pid: &ProjectId, node: &NodeId, at: CandidateRef, on: bool) -> DriverResult<Node>;
    fn collapse(&mut self, pid: &ProjectId, node: &NodeId, on: bool) -> DriverResult<Node>;
    fn prune(&mut self, pid: &ProjectId, node: &NodeId) -> DriverResult<Vec<NodeId>>;
    fn collect(&mut self, pid: &ProjectId, node: &NodeId, at: CandidateRef) -> DriverResult<CollectionEntry>;
    fn place(
        &mut self,
        pid: &ProjectId,
        entry: &EntryId,
        track: Track,
        at: Option<u32>,
        trim: Option<Trim>,
    ) -> DriverResult<Segment>;
    fn reorder(&mut self, pid: &ProjectId, segment: &SegmentId, index: u32) -> DriverResult<()>;
    fn unplace(&mut self, pid: &ProjectId, segment: &SegmentId) -> DriverResult<()>;
    fn scene_done(&mut self, pid: &ProjectId, scene: u32) -> DriverResult<()>;
    /// Creator think time; only meaningful on a simulated clock.
    fn wait(&mut self, d: Duration);
    fn export(&mut self, pid: &ProjectId, name: &str) -> DriverResult<(PathBuf, StitchManifest)>;
    fn metrics_text(&mut self, pid: &ProjectId, rule: WaitRule) -> DriverResult<String>;
    fn snapshot(&mut self, pid: &ProjectId) -> DriverResult<ProjectState>;
}

/// Drives an engine directly. Jobs run inline; the clock is advanced by
/// the script's waits and latencies.
pub struct EngineDriver {
    engine: Arc<Engine>,
    clock: Option<Arc<ManualClock>>,
    export_root: PathBuf,
}

impl EngineDriver {
    /// `clock` should be the engine's clock when it is simulated.
    pub fn new(engine: Arc<Engine>, clock: Option<Arc<ManualClock>>, export_root: PathBuf) -> Self {
        Self {
            engine,
            clock,
            export_root,
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }
}

impl Driver for EngineDriver {
    fn create_project(&mut self, name: &str) -> DriverResult<(ProjectId, NodeId)> {
        let s = self.engine.create_project(name)?;
        let root = s
            .root
            .clone()
            .ok_or_else(|| DriverError::new("MissingRoot", "project has no root"))?;
        Ok((s.project.project_id.clone(), root))
    }

    fn set_context(&mut self, pid: &ProjectId, ctx: GlobalContext) -> DriverResult<()> {
        let patch = SettingsPatch {
            global_context: Some(ctx),
            ..Default::default()
        };
        self.engine.update_settings(pid, patch)?;
        Ok(())
    }

    fn add_child(&mut self, pid: &ProjectId, parent: &NodeId, kind: NodeKind) -> DriverResult<NodeId> {
        Ok(self.engine.add_child(pid, parent, kind)?)
    }

    fn add_modal(&mut self, pid: &ProjectId, parent: &NodeId, workflow: &str, spec: SpecPatch) -> DriverResult<NodeId> {
        Ok(self.engine.add_modal(pid, parent, workflow, spec)?)
    }

    fn edit_spec(&mut self, pid: &ProjectId, node: &NodeId, patch: SpecPatch) -> DriverResult<Node> {
        Ok(self.engine.edit_spec(pid, node, patch, None)?)
    }

    fn lock_intent(&mut self, pid: &ProjectId, node: &NodeId) -> DriverResult<Node> {
        Ok(self.engine.lock_intent(pid, node)?)
    }

    fn plan(
        &mut self,
        pid: &ProjectId,
        node: &NodeId,
        intent: &str,
        refs: Vec<reeltree_core::ids::AssetId>,
    ) -> DriverResult<Plan> {
        Ok(self.engine.plan(pid, node, Some(intent.to_owned()), Some(refs))?)
    }

    fn materialize(&mut self, pid: &ProjectId, node: &NodeId, edits: SpecPatch) -> DriverResult<Node> {
        Ok(self.engine.materialize(pid, node, None, edits)?)
    }

    fn execute(&mut self, pid: &ProjectId, node: &NodeId, latency: Duration) -> DriverResult<Job> {
        let job = self.engine.execute(pid, node)?;
        if let Some(c) = &self.clock {
            c.advance(latency.as_millis() as u64);
        }
        self.engine.run_queued();
        Ok(self.engine.job(pid, &job)?)
    }

    fn node(&mut self, pid: &ProjectId, node: &NodeId) -> DriverResult<Node> {
        Ok(self
            .engine
            .snapshot(pid)?
            .node(node)
            .map_err(EngineError::from)?
            .clone())
    }

    fn select(&mut self, pid: &ProjectId, node: &NodeId, at: CandidateRef) -> DriverResult<Node> {
        Ok(self.engine.select(pid, node, at)?)
    }

    fn retain(&mut self, pid: &ProjectId, node: &NodeId, at: CandidateRef, on: bool) -> DriverResult<Node> {
        Ok(self.engine.retain(pid, node, at, on)?)
    }

    fn collapse(&mut self, pid: &ProjectId, node: &NodeId, on: bool) -> DriverResult<Node> {
        Ok(self.engine.collapse(pid, node, on)?)
    }

    fn prune(&mut self, pid: &ProjectId, node: &NodeId) -> DriverResult<Vec<NodeId>> {
        Ok(self.engine.prune(pid, node)?)
    }

    fn collect(&mut self, pid: &ProjectId, node: &NodeId, at: CandidateRef) -> DriverResult<CollectionEntry> {
        Ok(self.engine.collect(pid, node, at)?)
    }

    fn place(
        &mut self,
        pid: &ProjectId,
        entry: &EntryId,
        track: Track,
        at: Option<u32>,
        trim: Option<Trim>,
    ) -> DriverResult<Segment> {
        Ok(self.engine.place(pid, entry, track, at, trim)?)
    }

    fn reorder(&mut self, pid: &ProjectId, segment: &SegmentId, index: u32) -> DriverResult<()> {
        self.engine.reorder(pid, segment, index)?;
        Ok(())
    }

    fn unplace(&mut self, pid: &ProjectId, segment: &SegmentId) -> DriverResult<()> {
        self.engine.remove_segment(pid, segment)?;
        Ok(())
    }

    fn scene_done(&mut self, pid: &ProjectId, scene: u32) -> DriverResult<()> {
        self.engine
            .record_session_event(pid, SessionEventKind::SceneCompleted { scene_index: scene })?;
        Ok(())
    }

    fn wait(&mut self, d: Duration) {
        if let Some(c) = &self.clock {
            c.advance(d.as_millis() as u64);
        }
    }

    fn export(&mut self, pid: &ProjectId, name: &str) -> DriverResult<(PathBuf, StitchManifest)> {
        let out = self.export_root.join(pid.as_str()).join(name);
        let b = self.engine.export(pid, &out)?;
        Ok((b.out_dir, b.manifest))
    }

    fn metrics_text(&mut self, pid: &ProjectId, rule: WaitRule) -> DriverResult<String> {
        Ok(self.engine.metrics(pid, rule)?.to_text())
    }

    fn snapshot(&mut self, pid: &ProjectId) -> DriverResult<ProjectState> {
        Ok((*self.engine.snapshot(pid)?).clone())
    }
}

/// Drives a running service through its HTTP endpoints.
pub struct HttpDriver {
    base: String,
    client: reqwest::blocking::Client,
    poll: Duration,
    job_timeout: Duration,
}

impl HttpDriver {
    pub fn new(base_url: impl Into<String>) -> DriverResult<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| DriverError::new("Transport", e.to_string()))?;
        Ok(Self {
            base: base_url.into().trim_end_matches('/').to_owned(),
            client,
            poll: Duration::from_millis(10),
            job_timeout: Duration::from_secs(600),
        })
    }

    fn send(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> DriverResult<Value> {
        let mut req = self.client.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().map_err(|e| DriverError::new("Transport", e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| DriverError::new("Transport", e.to_string()))?;
        let v: Value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        if status.is_success() {
            Ok(v)
        } else {
            let code = v["code"].as_str().unwrap_or("Http").to_owned();
            let message = v["message"]
                .as_str()
                .map_or_else(|| format!("HTTP {status}"), str::to_owned);
            Err(DriverError { code, message })
        }
    }

    fn get(&self, path: &str) -> DriverResult<Value> {
        self.send(reqwest::Method::GET, path, None)
    }

    fn post(&self, path: &str, body: Value) -> DriverResult<Value> {
        self.send(reqwest::Method::POST, path, Some(body))
    }

    fn patch(&self, path: &str, body: Value) -> DriverResult<Value> {
        self.send(reqwest::Method::PATCH, path, Some(body))
    }

    fn delete(&self, path: &str) -> DriverResult<Value> {
        self.send(reqwest::Method::DELETE, path, None)
    }
}

fn decode<T: DeserializeOwned>(v: Value) -> DriverResult<T> {
    serde_json::from_value(v).map_err(|e| DriverError::new("Decode", e.to_string()))
}

fn at_json(at: CandidateRef) -> Value {
    json!({ "batch_index": at.batch_index, "candidate_index": at.candidate_index })
}

impl Driver for HttpDriver {
    fn create_project(&mut self, name: &str) -> DriverResult<(ProjectId, NodeId)> {
        let v = self.post("/projects", json!({ "name": name }))?;
        Ok((
            decode(v["project"]["project_id"].clone())?,
            decode(v["root_id"].clone())?,
        ))
    }

    fn set_context(&mut self, pid: &ProjectId, ctx: GlobalContext) -> DriverResult<()> {
        self.patch(&format!("/projects/{pid}/context"), json!(ctx))?;
        Ok(())
    }

    fn add_child(&mut self, pid: &ProjectId, parent: &NodeId, kind: NodeKind) -> DriverResult<NodeId> {
        let v = self.post(
            &format!("/projects/{pid}/nodes"),
            json!({ "parent_id": parent, "kind": kind }),
        )?;
        decode(v["node_id"].clone())
    }

    fn add_modal(&mut self, pid: &ProjectId, parent: &NodeId, workflow: &str, spec: SpecPatch) -> DriverResult<NodeId> {
        let v = self.post(
            &format!("/projects/{pid}/nodes"),
            json!({ "parent_id": parent, "workflow_id": workflow, "spec": spec }),
        )?;
        decode(v["node_id"].clone())
    }

    fn edit_spec(&mut self, _pid: &ProjectId, node: &NodeId, patch: SpecPatch) -> DriverResult<Node> {
        decode(self.patch(&format!("/nodes/{node}/spec"), json!(patch))?)
    }

    fn lock_intent(&mut self, _pid: &ProjectId, node: &NodeId) -> DriverResult<Node> {
        decode(self.post(&format!("/nodes/{node}/lock"), json!({}))?)
    }

    fn plan(
        &mut self,
        _pid: &ProjectId,
        node: &NodeId,
        intent: &str,
        refs: Vec<reeltree_core::ids::AssetId>,
    ) -> DriverResult<Plan> {
        let v = self.post(
            &format!("/nodes/{node}/plan"),
            json!({ "intent": intent, "reference_asset_ids": refs }),
        )?;
        decode(v["plan"].clone())
    }

    fn materialize(&mut self, _pid: &ProjectId, node: &NodeId, edits: SpecPatch) -> DriverResult<Node> {
        decode(self.post(&format!("/nodes/{node}/materialize"), json!({ "edits": edits }))?)
    }

    fn execute(&mut self, _pid: &ProjectId, node: &NodeId, _latency: Duration) -> DriverResult<Job> {
        let v = self.post(&format!("/nodes/{node}/execute"), json!({}))?;
        let job_id: JobId = decode(v["job_id"].clone())?;
        let started = std::time::Instant::now();
        loop {
            let job: Job = decode(self.get(&format!("/jobs/{job_id}"))?)?;
            if job.state.is_terminal() {
                return Ok(job);
            }
            if started.elapsed() > self.job_timeout {
                return Err(DriverError::new(
                    "Timeout",
                    format!("job {job_id} still {:?}", job.state),
                ));
            }
            std::thread::sleep(self.poll);
        }
    }

    fn node(&mut self, _pid: &ProjectId, node: &NodeId) -> DriverResult<Node> {
        decode(self.get(&format!("/nodes/{node}"))?)
    }

    fn select(&mut self, _pid: &ProjectId, node: &NodeId, at: CandidateRef) -> DriverResult<Node> {
        decode(self.post(&format!("/nodes/{node}/select"), at_json(at))?)
    }

    fn retain(&mut self, _pid: &ProjectId, node: &NodeId, at: CandidateRef, on: bool) -> DriverResult<Node> {
        let mut body = at_json(at);
        body["retained"] = json!(on);
        decode(self.post(&format!("/nodes/{node}/retain"), body)?)
    }

    fn collapse(&mut self, _pid: &ProjectId, node: &NodeId, on: bool) -> DriverResult<Node> {
        decode(self.post(&format!("/nodes/{node}/collapse"), json!({ "collapsed": on }))?)
    }

    fn prune(&mut self, _pid: &ProjectId, node: &NodeId) -> DriverResult<Vec<NodeId>> {
        decode(self.delete(&format!("/nodes/{node}"))?["removed"].clone())
    }

    fn collect(&mut self, pid: &ProjectId, node: &NodeId, at: CandidateRef) -> DriverResult<CollectionEntry> {
        let mut body = at_json(at);
        body["node_id"] = json!(node);
        decode(self.post(&format!("/projects/{pid}/timeline/collection"), body)?)
    }

    fn place(
        &mut self,
        pid: &ProjectId,
        entry: &EntryId,
        track: Track,
        at: Option<u32>,
        trim: Option<Trim>,
    ) -> DriverResult<Segment> {
        let body = json!({
            "entry_id": entry,
            "track": track.name(),
            "order_index": at,
            "trim_in_ms": trim.map(|t| t.trim_in_ms),
            "trim_out_ms": trim.map(|t| t.trim_out_ms),
        });
        decode(self.post(&format!("/projects/{pid}/timeline/segments"), body)?)
    }

    fn reorder(&mut self, pid: &ProjectId, segment: &SegmentId, index: u32) -> DriverResult<()> {
        self.patch(
            &format!("/projects/{pid}/timeline/segments/{segment}"),
            json!({ "order_index": index }),
        )?;
        Ok(())
    }

    fn unplace(&mut self, pid: &ProjectId, segment: &SegmentId) -> DriverResult<()> {
        self.delete(&format!("/projects/{pid}/timeline/segments/{segment}"))?;
        Ok(())
    }

    fn scene_done(&mut self, pid: &ProjectId, scene: u32) -> DriverResult<()> {
        self.post(
            &format!("/projects/{pid}/events"),
            json!({ "kind": "SceneCompleted", "scene_index": scene }),
        )?;
        Ok(())
    }

    fn wait(&mut self, _d: Duration) {}

    fn export(&mut self, pid: &ProjectId, name: &str) -> DriverResult<(PathBuf, StitchManifest)> {
        let v = self.post(&format!("/projects/{pid}/export"), json!({ "name": name }))?;
        Ok((decode(v["out_dir"].clone())?, decode(v["manifest"].clone())?))
    }

    fn metrics_text(&mut self, pid: &ProjectId, rule: WaitRule) -> DriverResult<String> {
        let rule = match rule {
            WaitRule::Union => "union",
            WaitRule::Sum => "sum",
        };
        let url = format!("{}/projects/{pid}/metrics?format=text&wait_rule={rule}", self.base);
        let resp = self
            .client
            .get(url)
            .send()
            .map_err(|e| DriverError::new("Transport", e.to_string()))?;
        let ok = resp.status().is_success();
        let text = resp.text().map_err(|e| DriverError::new("Transport", e.to_string()))?;
        if ok {
            Ok(text)
        } else {
            let v: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
            Err(DriverError::new(
                v["code"].as_str().unwrap_or("Http"),
                v["message"].as_str().unwrap_or(&text),
            ))
        }
    }

    fn snapshot(&mut self, pid: &ProjectId) -> DriverResult<ProjectState> {
        let mut v = self.get(&format!("/projects/{pid}/tree"))?;
        if let Some(o) = v.as_object_mut() {
            o.remove("layout");
        }
        decode(v)
    }
}

/// Whether a job ended in success.
pub fn succeeded(job: &Job) -> bool {
    job.state == JobState::Done
}
