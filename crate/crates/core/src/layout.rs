//! Tidy-tree layout of the visible part of a project tree.
//!
//! Every visible subtree owns a vertical envelope as wide as the wider of
//! its own box and its row of children. Sibling envelopes are packed left
//! to right, `h_spacing` apart, and each parent is centered over its row.
//! Envelopes never interleave, so collapsing a subtree can only narrow
//! every envelope above it. A collapsed node is laid out as a leaf.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NodeKind;
use crate::state::ProjectState;
use crate::store::SpacingConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("invalid layout config: {0}")]
    InvalidConfig(String),
    #[error("corrupt tree: {0}")]
    CorruptTree(String),
}

impl LayoutError {
    pub fn code(&self) -> &'static str {
        match self {
            LayoutError::InvalidConfig(_) => "InvalidConfig",
            LayoutError::CorruptTree(_) => "CorruptTree",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub h_spacing: f64,
    pub v_spacing: f64,
    pub node_box: BTreeMap<NodeKind, BoxSize>,
}

pub fn default_node_boxes() -> BTreeMap<NodeKind, BoxSize> {
    let b = |width, height| BoxSize { width, height };
    BTreeMap::from([
        (NodeKind::Init, b(120.0, 60.0)),
        (NodeKind::IntentDraft, b(200.0, 120.0)),
        (NodeKind::Planning, b(200.0, 140.0)),
        (NodeKind::Image, b(200.0, 160.0)),
        (NodeKind::Video, b(200.0, 160.0)),
        (NodeKind::Audio, b(200.0, 120.0)),
    ])
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self::from_spacing(SpacingConfig::default())
    }
}

impl LayoutConfig {
    pub fn from_spacing(s: SpacingConfig) -> Self {
        Self {
            h_spacing: s.h_spacing,
            v_spacing: s.v_spacing,
            node_box: default_node_boxes(),
        }
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.h_spacing) || !pos(self.v_spacing) {
            return Err(LayoutError::InvalidConfig("spacing must be positive".into()));
        }
        for k in NodeKind::ALL {
            match self.node_box.get(&k) {
                Some(b) if pos(b.width) && pos(b.height) => {}
                Some(_) => return Err(LayoutError::InvalidConfig(format!("box of {k} must be positive"))),
                None => return Err(LayoutError::InvalidConfig(format!("no box size for {k}"))),
            }
        }
        Ok(())
    }

    /// Vertical distance between consecutive depth levels.
    pub fn layer_pitch(&self) -> f64 {
        let tallest = self.node_box.values().map(|b| b.height).fold(0.0, f64::max);
        tallest + self.v_spacing
    }
}

/// Structural input: one entry per node of the tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutNode<Id> {
    pub id: Id,
    pub parent: Option<Id>,
    pub kind: NodeKind,
    pub order_key: u64,
    pub collapsed: bool,
}

/// Top-left corner and size of a node box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Placement {
    pub fn center_x(&self) -> f64 {
        self.x + self.width / 2.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutResult<Id: Ord> {
    pub positions: BTreeMap<Id, Placement>,
    pub bounds: Bounds,
}

pub fn compute_layout<Id>(nodes: &[LayoutNode<Id>], config: &LayoutConfig) -> Result<LayoutResult<Id>, LayoutError>
where
    Id: Clone + Ord + std::hash::Hash + std::fmt::Debug,
{
    config.validate()?;
    if nodes.is_empty() {
        return Ok(LayoutResult {
            positions: BTreeMap::new(),
            bounds: Bounds::default(),
        });
    }
    let index: HashMap<&Id, usize> = nodes.iter().enumerate().map(|(i, n)| (&n.id, i)).collect();
    if index.len() != nodes.len() {
        return Err(LayoutError::CorruptTree("duplicate node id".into()));
    }
    let mut children: Vec<Vec<usize>> = vec![vec![]; nodes.len()];
    let mut root = None;
    for (i, n) in nodes.iter().enumerate() {
        match &n.parent {
            None if root.is_none() => root = Some(i),
            None => return Err(LayoutError::CorruptTree("more than one root".into())),
            Some(p) => {
                let &pi = index
                    .get(p)
                    .ok_or_else(|| LayoutError::CorruptTree(format!("missing parent {p:?}")))?;
                children[pi].push(i);
            }
        }
    }
    let root = root.ok_or_else(|| LayoutError::CorruptTree("no root".into()))?;
    for c in &mut children {
        c.sort_by(|a, b| {
            nodes[*a]
                .order_key
                .cmp(&nodes[*b].order_key)
                .then(nodes[*a].id.cmp(&nodes[*b].id))
        });
    }

    // Every node must hang off the root; a parent cycle is unreachable.
    let mut reachable = 0;
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        reachable += 1;
        stack.extend(children[i].iter().copied());
    }
    if reachable != nodes.len() {
        return Err(LayoutError::CorruptTree("nodes unreachable from the root".into()));
    }

    // Visible nodes in pre-order, with depth.
    let mut order = vec![];
    let mut depth = vec![0usize; nodes.len()];
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        order.push(i);
        if !nodes[i].collapsed {
            for &c in children[i].iter().rev() {
                depth[c] = depth[i] + 1;
                stack.push(c);
            }
        }
    }

    let size = |i: usize| config.node_box[&nodes[i].kind];
    let kids = |i: usize| -> &[usize] {
        if nodes[i].collapsed {
            &[]
        } else {
            &children[i]
        }
    };
    // Envelope width of each visible subtree and of its row of children.
    let mut envelope = vec![0.0f64; nodes.len()];
    let mut row = vec![0.0f64; nodes.len()];
    for &i in order.iter().rev() {
        let ks = kids(i);
        let gaps = ks.len().saturating_sub(1) as f64 * config.h_spacing;
        row[i] = ks.iter().map(|&c| envelope[c]).sum::<f64>() + gaps;
        envelope[i] = size(i).width.max(row[i]);
    }

    let pitch = config.layer_pitch();
    let mut left = vec![0.0f64; nodes.len()];
    let mut positions = BTreeMap::new();
    let mut min_x = f64::INFINITY;
    for &i in &order {
        let center = left[i] + envelope[i] / 2.0;
        let mut cursor = center - row[i] / 2.0;
        for &c in kids(i) {
            left[c] = cursor;
            cursor += envelope[c] + config.h_spacing;
        }
        let b = size(i);
        let x = center - b.width / 2.0;
        min_x = min_x.min(x);
        positions.insert(
            nodes[i].id.clone(),
            Placement {
                x,
                y: depth[i] as f64 * pitch,
                width: b.width,
                height: b.height,
            },
        );
    }
    let (mut max_x, mut max_y) = (0.0f64, 0.0f64);
    for p in positions.values_mut() {
        p.x -= min_x;
        max_x = max_x.max(p.x + p.width);
        max_y = max_y.max(p.y + p.height);
    }
    Ok(LayoutResult {
        positions,
        bounds: Bounds {
            x: 0.0,
            y: 0.0,
            width: max_x,
            height: max_y,
        },
    })
}

/// Layout input for a project's live tree.
pub fn layout_nodes(state: &ProjectState) -> Vec<LayoutNode<crate::ids::NodeId>> {
    state
        .nodes
        .values()
        .map(|n| LayoutNode {
            id: n.node_id.clone(),
            parent: n.parent_id.clone(),
            kind: n.kind,
            order_key: n.order_key,
            collapsed: n.collapsed,
        })
        .collect()
}

pub fn layout_project(
    state: &ProjectState,
    config: &LayoutConfig,
) -> Result<LayoutResult<crate::ids::NodeId>, LayoutError> {
    compute_layout(&layout_nodes(state), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(id: u32, parent: Option<u32>, order_key: u64) -> LayoutNode<u32> {
        LayoutNode {
            id,
            parent,
            kind: NodeKind::Image,
            order_key,
            collapsed: false,
        }
    }

    #[test]
    fn single_root_is_one_box() {
        let cfg = LayoutConfig::default();
        let r = compute_layout(&[n(0, None, 0)], &cfg).unwrap();
        assert_eq!(r.positions[&0].x, 0.0);
        assert_eq!(r.positions[&0].y, 0.0);
        assert_eq!(r.bounds.width, 200.0);
        assert_eq!(r.bounds.height, 160.0);
    }

    #[test]
    fn three_children_are_spaced_by_width_plus_gap() {
        let cfg = LayoutConfig::default();
        let nodes = [n(0, None, 0), n(1, Some(0), 0), n(2, Some(0), 1), n(3, Some(0), 2)];
        let r = compute_layout(&nodes, &cfg).unwrap();
        let c = r.positions[&0].center_x();
        let xs: Vec<f64> = (1..=3).map(|i| r.positions[&i].center_x() - c).collect();
        assert_eq!(xs, vec![-240.0, 0.0, 240.0]);
        assert_eq!(r.positions[&1].y, cfg.layer_pitch());
    }

    #[test]
    fn collapsed_node_hides_descendants() {
        let cfg = LayoutConfig::default();
        let mut nodes = vec![n(0, None, 0), n(1, Some(0), 0), n(2, Some(1), 0)];
        nodes[1].collapsed = true;
        let r = compute_layout(&nodes, &cfg).unwrap();
        assert_eq!(r.positions.len(), 2);
        assert!(!r.positions.contains_key(&2));
    }

    #[test]
    fn collapsing_a_wide_child_row_narrows_the_layout() {
        let cfg = LayoutConfig::default();
        let mut nodes = vec![
            n(0, None, 0),
            n(1, Some(0), 0),
            n(2, Some(1), 0),
            n(3, Some(1), 1),
            n(4, Some(0), 1),
        ];
        nodes[1].kind = NodeKind::Init;
        let open = compute_layout(&nodes, &cfg).unwrap();
        nodes[1].collapsed = true;
        let shut = compute_layout(&nodes, &cfg).unwrap();
        assert_eq!(open.bounds.width, 200.0 + 40.0 + 200.0 + 40.0 + 200.0);
        assert_eq!(shut.bounds.width, 120.0 + 40.0 + 200.0);
    }

    #[test]
    fn corrupt_trees_are_rejected() {
        let cfg = LayoutConfig::default();
        assert!(matches!(
            compute_layout(&[n(0, None, 0), n(1, None, 0)], &cfg),
            Err(LayoutError::CorruptTree(_))
        ));
        assert!(matches!(
            compute_layout(&[n(0, None, 0), n(1, Some(9), 0)], &cfg),
            Err(LayoutError::CorruptTree(_))
        ));
        assert!(matches!(
            compute_layout(&[n(0, None, 0), n(1, Some(2), 0), n(2, Some(1), 0)], &cfg),
            Err(LayoutError::CorruptTree(_))
        ));
        let bad = LayoutConfig {
            h_spacing: 0.0,
            ..LayoutConfig::default()
        };
        assert!(matches!(
            compute_layout(&[n(0, None, 0)], &bad),
            Err(LayoutError::InvalidConfig(_))
        ));
    }
}
