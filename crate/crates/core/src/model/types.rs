use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{AssetId, BatchId, NodeId, ProjectId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Init,
    IntentDraft,
    Planning,
    Image,
    Video,
    Audio,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::Init,
        NodeKind::IntentDraft,
        NodeKind::Planning,
        NodeKind::Image,
        NodeKind::Video,
        NodeKind::Audio,
    ];

    pub fn modality(self) -> Option<Modality> {
        match self {
            NodeKind::Image => Some(Modality::Image),
            NodeKind::Video => Some(Modality::Video),
            NodeKind::Audio => Some(Modality::Audio),
            _ => None,
        }
    }

    pub fn is_modal(self) -> bool {
        self.modality().is_some()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Init => "Init",
            NodeKind::IntentDraft => "IntentDraft",
            NodeKind::Planning => "Planning",
            NodeKind::Image => "Image",
            NodeKind::Video => "Video",
            NodeKind::Audio => "Audio",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output modality of a media asset or workflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Image,
    Video,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Video, Modality::Audio];

    pub fn node_kind(self) -> NodeKind {
        match self {
            Modality::Image => NodeKind::Image,
            Modality::Video => NodeKind::Video,
            Modality::Audio => NodeKind::Audio,
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Modality::Image => "image/x-portable-graymap",
            Modality::Video => "application/vnd.reeltree.clip+json",
            Modality::Audio => "audio/wav",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeStatus {
    Draft,
    Planned,
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl NodeStatus {
    /// The legal lifecycle edges. `Succeeded -> Queued` is re-execution (a
    /// new candidate batch is appended); `Queued -> Planned|Succeeded|Failed`
    /// is cancellation back to the status held before queueing.
    pub fn can_transition(self, to: NodeStatus) -> bool {
        use NodeStatus::*;
        matches!(
            (self, to),
            (Draft, Planned)
                | (Planned, Queued)
                | (Queued, Running)
                | (Running, Succeeded)
                | (Running, Failed)
                | (Failed, Queued)
                | (Succeeded, Queued)
                | (Queued, Planned)
                | (Queued, Succeeded)
                | (Queued, Failed)
        )
    }

    pub fn is_busy(self) -> bool {
        matches!(self, NodeStatus::Queued | NodeStatus::Running)
    }
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Creator-level classification of an authoring step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionCategory {
    EstablishAnchor,
    RefineVisual,
    GenerateMotion,
    ProduceAudio,
    Assemble,
}

impl ActionCategory {
    pub const ALL: [ActionCategory; 5] = [
        ActionCategory::EstablishAnchor,
        ActionCategory::RefineVisual,
        ActionCategory::GenerateMotion,
        ActionCategory::ProduceAudio,
        ActionCategory::Assemble,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionCategory::EstablishAnchor => "EstablishAnchor",
            ActionCategory::RefineVisual => "RefineVisual",
            ActionCategory::GenerateMotion => "GenerateMotion",
            ActionCategory::ProduceAudio => "ProduceAudio",
            ActionCategory::Assemble => "Assemble",
        }
    }
}

impl fmt::Display for ActionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed parameter value. JSON integers decode as `Int`, JSON numbers
/// with a fractional part or exponent as `Float`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Parses a command-line style literal: `true`, `3`, `0.5`, anything else is text.
    pub fn parse_literal(raw: &str) -> Self {
        if let Ok(b) = raw.parse::<bool>() {
            ParamValue::Bool(b)
        } else if let Ok(i) = raw.parse::<i64>() {
            ParamValue::Int(i)
        } else if let Ok(f) = raw.parse::<f64>() {
            ParamValue::Float(f)
        } else {
            ParamValue::Text(raw.to_owned())
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

/// What one authoring step should do; editable until locked.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub intent_text: String,
    pub reference_asset_ids: Vec<AssetId>,
    pub prompt_text: String,
    pub parameters: Params,
    pub workflow_id: Option<String>,
    pub action_category: Option<ActionCategory>,
    pub locked: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

impl TokenUsage {
    pub fn total(&self) -> u32 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

/// The agent pipeline's proposed next step. Stored on the node for review;
/// never executed by itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub action_category: ActionCategory,
    pub workflow_id: String,
    pub prompt_draft: String,
    pub parameter_draft: Params,
    pub knowledge_notes: Option<String>,
    pub token_usage: TokenUsage,
}

/// Address of one candidate: `(batch_index, candidate_index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateRef {
    pub batch_index: usize,
    pub candidate_index: usize,
}

impl CandidateRef {
    pub fn new(batch_index: usize, candidate_index: usize) -> Self {
        Self {
            batch_index,
            candidate_index,
        }
    }
}

/// The immutable outputs of one execution of a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateBatch {
    pub batch_id: BatchId,
    pub asset_ids: Vec<AssetId>,
    /// Intermediates derived while executing (e.g. a structural control map).
    /// They are produced by this node and can be referenced like candidates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub auxiliary_asset_ids: Vec<AssetId>,
    pub executed_workflow_id: String,
    pub executed_parameters: Params,
    pub generation_call_count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub project_id: ProjectId,
    pub parent_id: Option<NodeId>,
    pub kind: NodeKind,
    pub status: NodeStatus,
    pub spec: StepSpec,
    pub plan: Option<Plan>,
    pub candidates: Vec<CandidateBatch>,
    pub selected: Option<CandidateRef>,
    pub retained_flags: BTreeSet<CandidateRef>,
    pub collapsed: bool,
    pub created_at: u64,
    pub order_key: u64,
    /// Next order key handed to a new child of this node.
    pub next_child_order: u64,
    /// Bumped on every change to `spec`; used for optimistic edit checks.
    pub spec_revision: u64,
}

impl Node {
    pub fn candidate(&self, at: CandidateRef) -> Option<&crate::ids::AssetId> {
        self.candidates
            .get(at.batch_index)
            .and_then(|b| b.asset_ids.get(at.candidate_index))
    }

    pub fn selected_asset(&self) -> Option<&AssetId> {
        self.selected.and_then(|s| self.candidate(s))
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.iter().map(|b| b.asset_ids.len()).sum()
    }

    /// Every asset this node produced, candidates and intermediates.
    pub fn produced_assets(&self) -> impl Iterator<Item = &AssetId> {
        self.candidates
            .iter()
            .flat_map(|b| b.asset_ids.iter().chain(b.auxiliary_asset_ids.iter()))
    }
}

/// One entry of a root-to-node path handed to the planning agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub action_category: Option<ActionCategory>,
    pub prompt_summary: String,
    pub selected_asset_ids: Vec<AssetId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathContext {
    pub scene_intent: String,
    pub path: Vec<PathEntry>,
}

/// Summaries longer than this are cut at a char boundary.
pub const PROMPT_SUMMARY_CHARS: usize = 80;

pub(crate) fn summarize(text: &str) -> String {
    let t = text.trim();
    if t.chars().count() <= PROMPT_SUMMARY_CHARS {
        t.to_owned()
    } else {
        let mut s: String = t.chars().take(PROMPT_SUMMARY_CHARS - 1).collect();
        s.push('…');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_edges() {
        use NodeStatus::*;
        let all = [Draft, Planned, Queued, Running, Succeeded, Failed];
        let legal: Vec<_> = all
            .iter()
            .flat_map(|a| all.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a.can_transition(*b))
            .collect();
        assert!(legal.contains(&(Draft, Planned)));
        assert!(legal.contains(&(Failed, Queued)));
        assert!(legal.contains(&(Succeeded, Queued)));
        assert!(!legal.contains(&(Draft, Queued)));
        assert!(!legal.contains(&(Succeeded, Draft)));
        assert!(!legal.contains(&(Running, Queued)));
        assert_eq!(legal.len(), 10);
    }

    #[test]
    fn param_literals() {
        assert_eq!(ParamValue::parse_literal("3"), ParamValue::Int(3));
        assert_eq!(ParamValue::parse_literal("0.5"), ParamValue::Float(0.5));
        assert_eq!(ParamValue::parse_literal("true"), ParamValue::Bool(true));
        assert_eq!(
            ParamValue::parse_literal("orbit-ccw"),
            ParamValue::Text("orbit-ccw".into())
        );
        let v: ParamValue = serde_json::from_str("7.0").unwrap();
        assert_eq!(v, ParamValue::Float(7.0));
        assert_eq!(serde_json::to_string(&ParamValue::Float(7.0)).unwrap(), "7.0");
    }

    #[test]
    fn summary_is_bounded() {
        let long = "x".repeat(200);
        assert_eq!(summarize(&long).chars().count(), PROMPT_SUMMARY_CHARS);
        assert_eq!(summarize("  short "), "short");
    }
}
