//! Executes a parsed script against a [`Driver`].

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use reeltree_core::ids::{AssetId, EntryId, NodeId, ProjectId, SegmentId};
use reeltree_core::metrics::WaitRule;
use reeltree_core::model::{CandidateRef, Node, NodeKind, Params, SpecPatch};
use reeltree_core::stitching::{StitchManifest, Trim};
use reeltree_core::workflows::JobState;
use thiserror::Error;

use crate::driver::{Driver, DriverError};
use crate::script::{AssetRef, Command, Edits, Pick, Script};

/// A command that failed while running; `code` is the engine error code.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {code}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub project_id: Option<ProjectId>,
    pub nodes: BTreeMap<String, NodeId>,
    pub exports: Vec<(PathBuf, StitchManifest)>,
    pub reports: Vec<String>,
}

pub struct Interpreter<'a, D: Driver> {
    driver: &'a mut D,
    out: &'a mut dyn Write,
    default_name: String,
    pid: Option<ProjectId>,
    root: Option<NodeId>,
    nodes: BTreeMap<String, NodeId>,
    entries: BTreeMap<String, EntryId>,
    segments: BTreeMap<String, SegmentId>,
    outcome: RunOutcome,
}

fn fail(code: &str, message: impl Into<String>) -> DriverError {
    DriverError::new(code, message)
}

impl<'a, D: Driver> Interpreter<'a, D> {
    /// `default_name` names the project unless the script does.
    pub fn new(driver: &'a mut D, out: &'a mut dyn Write, default_name: &str) -> Self {
        Self {
            driver,
            out,
            default_name: default_name.to_owned(),
            pid: None,
            root: None,
            nodes: BTreeMap::new(),
            entries: BTreeMap::new(),
            segments: BTreeMap::new(),
            outcome: RunOutcome::default(),
        }
    }

    /// Runs every line, stopping at the first failure.
    pub fn run(mut self, script: &Script) -> Result<RunOutcome, (ScriptError, Box<RunOutcome>)> {
        for line in &script.lines {
            if let Err(e) = self.step(&line.command) {
                let err = ScriptError {
                    line: line.number,
                    code: e.code,
                    message: e.message,
                };
                return Err((err, Box::new(self.finish())));
            }
        }
        if self.pid.is_none() {
            let name = self.default_name.clone();
            if let Err(e) = self.ensure_project(&name) {
                let err = ScriptError {
                    line: 0,
                    code: e.code,
                    message: e.message,
                };
                return Err((err, Box::new(self.finish())));
            }
        }
        Ok(self.finish())
    }

    fn finish(mut self) -> RunOutcome {
        self.outcome.project_id = self.pid.clone();
        self.outcome.nodes = self.nodes.clone();
        self.outcome
    }

    fn ensure_project(&mut self, name: &str) -> Result<ProjectId, DriverError> {
        if let Some(p) = &self.pid {
            return Ok(p.clone());
        }
        let (pid, root) = self.driver.create_project(name)?;
        self.pid = Some(pid.clone());
        self.root = Some(root);
        Ok(pid)
    }

    fn node_id(&self, label: &str) -> Result<NodeId, DriverError> {
        self.nodes
            .get(label)
            .cloned()
            .ok_or_else(|| fail("UndefinedLabel", format!("no node labelled {label:?}")))
    }

    fn latest_batch(node: &Node, label: &str) -> Result<usize, DriverError> {
        node.candidates
            .len()
            .checked_sub(1)
            .ok_or_else(|| fail("NoCandidates", format!("{label} has no candidates yet")))
    }

    fn candidate_ref(&mut self, pid: &ProjectId, label: &str, pick: Pick) -> Result<CandidateRef, DriverError> {
        let node = self.driver.node(pid, &self.node_id(label)?)?;
        match pick {
            Pick::Selected => node
                .selected
                .ok_or_else(|| fail("NoSelection", format!("{label} has no selected candidate"))),
            Pick::Candidate { batch, index } => {
                let b = match batch {
                    Some(b) => b,
                    None => Self::latest_batch(&node, label)?,
                };
                Ok(CandidateRef::new(b, index))
            }
            Pick::Auxiliary { .. } => Err(fail("BadReference", "auxiliary outputs are not candidates")),
        }
    }

    fn resolve_asset(&mut self, pid: &ProjectId, r: &AssetRef) -> Result<AssetId, DriverError> {
        let node = self.driver.node(pid, &self.node_id(&r.node)?)?;
        let missing = || fail("BadReference", format!("{}: no such output", r.node));
        match r.pick {
            Pick::Auxiliary { index } => {
                let b = Self::latest_batch(&node, &r.node)?;
                node.candidates[b]
                    .auxiliary_asset_ids
                    .get(index)
                    .cloned()
                    .ok_or_else(missing)
            }
            pick => {
                let at = self.candidate_ref(pid, &r.node, pick)?;
                node.candidate(at).cloned().ok_or_else(missing)
            }
        }
    }

    fn spec_patch(&mut self, pid: &ProjectId, e: &Edits) -> Result<SpecPatch, DriverError> {
        let refs = match &e.refs {
            Some(rs) => Some(
                rs.iter()
                    .map(|r| self.resolve_asset(pid, r))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let params: Option<Params> = if e.params.is_empty() {
            None
        } else {
            Some(e.params.iter().cloned().collect())
        };
        Ok(SpecPatch {
            intent_text: e.intent.clone(),
            prompt_text: e.prompt.clone(),
            parameters: params,
            reference_asset_ids: refs,
            workflow_id: None,
        })
    }

    fn say(&mut self, line: String) {
        let _ = writeln!(self.out, "{line}");
    }

    fn step(&mut self, cmd: &Command) -> Result<(), DriverError> {
        if let Command::Project(name) = cmd {
            self.ensure_project(name)?;
            return Ok(());
        }
        let name = self.default_name.clone();
        let pid = self.ensure_project(&name)?;
        match cmd {
            Command::Project(_) => unreachable!("handled above"),
            Command::Context(pairs) => {
                let mut ctx = self.driver.snapshot(&pid)?.project.global_context;
                for (k, v) in pairs {
                    let slot = match k.as_str() {
                        "model_id" => &mut ctx.model_id,
                        "style" => &mut ctx.style,
                        "mood" => &mut ctx.mood,
                        "palette" => &mut ctx.palette,
                        "reference_material" => &mut ctx.reference_material,
                        other => return Err(fail("InvalidSettings", format!("unknown context key {other}"))),
                    };
                    *slot = v.clone();
                }
                self.driver.set_context(&pid, ctx)?;
            }
            Command::NewScene { label, intent } => {
                let root = self
                    .root
                    .clone()
                    .ok_or_else(|| fail("MissingRoot", "project has no root"))?;
                let id = self.driver.add_child(&pid, &root, NodeKind::IntentDraft)?;
                self.nodes.insert(label.clone(), id.clone());
                let patch = SpecPatch {
                    intent_text: Some(intent.clone()),
                    ..Default::default()
                };
                self.driver.edit_spec(&pid, &id, patch)?;
                self.driver.lock_intent(&pid, &id)?;
            }
            Command::Plan {
                label,
                parent,
                intent,
                refs,
                ..
            } => {
                let parent = self.node_id(parent)?;
                let refs = refs
                    .iter()
                    .map(|r| self.resolve_asset(&pid, r))
                    .collect::<Result<Vec<_>, _>>()?;
                let id = self.driver.add_child(&pid, &parent, NodeKind::Planning)?;
                self.nodes.insert(label.clone(), id.clone());
                let plan = self.driver.plan(&pid, &id, intent, refs)?;
                self.say(format!(
                    "{label}: planned {} ({})",
                    plan.workflow_id, plan.action_category
                ));
            }
            Command::Add {
                label,
                parent,
                workflow,
                edits,
            } => {
                let parent = self.node_id(parent)?;
                let patch = self.spec_patch(&pid, edits)?;
                let id = self.driver.add_modal(&pid, &parent, workflow, patch)?;
                self.nodes.insert(label.clone(), id);
            }
            Command::Edit { label, edits } => {
                let id = self.node_id(label)?;
                let patch = self.spec_patch(&pid, edits)?;
                self.driver.edit_spec(&pid, &id, patch)?;
            }
            Command::Materialize { label, edits } => {
                let id = self.node_id(label)?;
                let patch = self.spec_patch(&pid, edits)?;
                self.driver.materialize(&pid, &id, patch)?;
            }
            Command::Execute { label, wait } => {
                let id = self.node_id(label)?;
                let job = self.driver.execute(&pid, &id, *wait)?;
                match job.state {
                    JobState::Done => {
                        let node = self.driver.node(&pid, &id)?;
                        let n = node.candidates.last().map_or(0, |b| b.asset_ids.len());
                        self.say(format!("{label}: {n} candidate(s)"));
                    }
                    state => {
                        return Err(fail(
                            "JobFailed",
                            format!("{label}: job {state:?}: {}", job.error.unwrap_or_default()),
                        ))
                    }
                }
            }
            Command::Select { label, pick } => {
                let at = self.candidate_ref(&pid, label, *pick)?;
                self.driver.select(&pid, &self.node_id(label)?, at)?;
            }
            Command::Retain { label, pick, on } => {
                let at = self.candidate_ref(&pid, label, *pick)?;
                self.driver.retain(&pid, &self.node_id(label)?, at, *on)?;
            }
            Command::Collapse { label, on } => {
                self.driver.collapse(&pid, &self.node_id(label)?, *on)?;
            }
            Command::Prune { label } => {
                let removed = self.driver.prune(&pid, &self.node_id(label)?)?;
                self.nodes.retain(|_, id| !removed.contains(id));
                self.say(format!("{label}: pruned {} node(s)", removed.len()));
            }
            Command::Collect { entry, source } => {
                let at = self.candidate_ref(&pid, &source.node, source.pick)?;
                let node = self.node_id(&source.node)?;
                let e = self.driver.collect(&pid, &node, at)?;
                self.entries.insert(entry.clone(), e.entry_id);
            }
            Command::Place {
                segment,
                entry,
                track,
                at,
                trim,
            } => {
                let e = self
                    .entries
                    .get(entry)
                    .cloned()
                    .ok_or_else(|| fail("UndefinedLabel", format!("no entry labelled {entry:?}")))?;
                let trim = trim.map(|(i, o)| Trim {
                    trim_in_ms: i,
                    trim_out_ms: o,
                });
                let s = self.driver.place(&pid, &e, *track, *at, trim)?;
                self.segments.insert(segment.clone(), s.segment_id);
            }
            Command::Reorder { segment, index } => {
                let s = self.segment_id(segment)?;
                self.driver.reorder(&pid, &s, *index)?;
            }
            Command::Unplace { segment } => {
                let s = self.segment_id(segment)?;
                self.driver.unplace(&pid, &s)?;
                self.segments.remove(segment);
            }
            Command::SceneDone(n) => self.driver.scene_done(&pid, *n)?,
            Command::Wait(d) => self.driver.wait(*d),
            Command::Export { name } => {
                let name = name.clone().unwrap_or_else(|| "latest".into());
                let (dir, manifest) = self.driver.export(&pid, &name)?;
                self.say(format!(
                    "exported {} segment(s) to {}",
                    manifest.segments.len(),
                    dir.display()
                ));
                self.outcome.exports.push((dir, manifest));
            }
            Command::Report => {
                let text = self.driver.metrics_text(&pid, WaitRule::Union)?;
                self.say(text.trim_end().to_owned());
                self.outcome.reports.push(text);
            }
        }
        Ok(())
    }

    fn segment_id(&self, label: &str) -> Result<SegmentId, DriverError> {
        self.segments
            .get(label)
            .cloned()
            .ok_or_else(|| fail("UndefinedLabel", format!("no segment labelled {label:?}")))
    }
}
