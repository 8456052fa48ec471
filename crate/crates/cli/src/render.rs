//! Plain-text views of a project tree.

use std::collections::BTreeMap;
use std::fmt::{self, Write};

use reeltree_core::ids::NodeId;
use reeltree_core::model::{Node, NodeKind};
use reeltree_core::state::ProjectState;

const SUMMARY_CHARS: usize = 48;

fn clip(s: &str) -> String {
    let s = s.trim();
    if s.chars().count() <= SUMMARY_CHARS {
        s.to_owned()
    } else {
        let head: String = s.chars().take(SUMMARY_CHARS - 3).collect();
        format!("{head}...")
    }
}

fn describe(n: &Node) -> String {
    match n.kind {
        NodeKind::Init => String::new(),
        NodeKind::IntentDraft | NodeKind::Planning => {
            if n.spec.intent_text.trim().is_empty() {
                String::new()
            } else {
                format!(" \"{}\"", clip(&n.spec.intent_text))
            }
        }
        _ => n
            .spec
            .workflow_id
            .as_deref()
            .map(|w| format!(" {w}"))
            .unwrap_or_default(),
    }
}

/// One line per visible node, indented two spaces per level, siblings in
/// creation order. A collapsed node shows `[+N]` for its hidden
/// descendants. `labels` adds `@label` tags.
pub fn render_tree(state: &ProjectState, labels: Option<&BTreeMap<NodeId, String>>) -> String {
    let Some(root) = &state.root else {
        return String::new();
    };
    let idx = state.child_index();
    let mut out = String::new();
    let mut stack = vec![(root.clone(), 0usize)];
    while let Some((id, depth)) = stack.pop() {
        let n = &state.nodes[&id];
        let indent = "  ".repeat(depth);
        if n.kind == NodeKind::Init {
            write!(out, "{indent}Init").unwrap();
        } else {
            write!(out, "{indent}{} {} {}", n.kind, n.node_id.short(), n.status).unwrap();
            let count: usize = n.candidates.iter().map(|b| b.asset_ids.len()).sum();
            if count > 0 {
                write!(out, " {count} cand").unwrap();
            }
            if let Some(s) = n.selected {
                write!(out, " sel={}.{}", s.batch_index, s.candidate_index).unwrap();
            }
            out.push_str(&describe(n));
        }
        if let Some(l) = labels.and_then(|m| m.get(&id)) {
            write!(out, " @{l}").unwrap();
        }
        if n.collapsed {
            let hidden = state.subtree(&id).len() - 1;
            if hidden > 0 {
                write!(out, " [+{hidden}]").unwrap();
            }
        } else if let Some(kids) = idx.get(&id) {
            stack.extend(kids.iter().rev().map(|k| (k.clone(), depth + 1)));
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeSummary {
    pub nodes: usize,
    pub by_kind: BTreeMap<NodeKind, usize>,
    /// Edges on the longest root-to-leaf path.
    pub depth: usize,
    /// Nodes with more than one child.
    pub branch_points: usize,
    pub leaves: usize,
}

pub fn summarize(state: &ProjectState) -> TreeSummary {
    let idx = state.child_index();
    let mut by_kind = BTreeMap::new();
    for n in state.nodes.values() {
        *by_kind.entry(n.kind).or_insert(0) += 1;
    }
    let depth = state
        .nodes
        .keys()
        .filter_map(|id| state.depth(id).ok())
        .max()
        .unwrap_or(0);
    TreeSummary {
        nodes: state.nodes.len(),
        by_kind,
        depth,
        branch_points: idx.values().filter(|k| k.len() > 1).count(),
        leaves: state.nodes.keys().filter(|id| !idx.contains_key(*id)).count(),
    }
}

impl fmt::Display for TreeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kinds: Vec<String> = self.by_kind.iter().map(|(k, n)| format!("{k} {n}")).collect();
        write!(
            f,
            "nodes {} ({}), depth {}, branch points {}, leaves {}",
            self.nodes,
            kinds.join(", "),
            self.depth,
            self.branch_points,
            self.leaves
        )
    }
}
