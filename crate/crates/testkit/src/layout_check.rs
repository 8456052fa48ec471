//! Brute-force verification of tree layouts.
//!
//! Every visible pair of boxes is compared directly, so the checks share
//! nothing with the contour bookkeeping of the layout itself.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use reeltree_core::layout::{compute_layout, LayoutConfig, LayoutNode, LayoutResult};
use reeltree_core::model::NodeKind;

use crate::{ensure, Tally};

const EPS: f64 = 1e-6;

/// A random rooted tree. Node `i > 0` hangs off an earlier node, chosen
/// either uniformly (bushy trees) or near `i` (deep chains).
#[derive(Clone, Debug)]
pub struct TreeCase {
    pub nodes: Vec<LayoutNode<u32>>,
    pub config: LayoutConfig,
    /// Extra nodes to collapse one at a time for the width check.
    pub probes: Vec<usize>,
}

pub fn tree_case(max_nodes: usize) -> impl Strategy<Value = TreeCase> {
    (1..=max_nodes, 0u8..3, 10.0f64..80.0, 10.0f64..80.0, 0.0f64..0.25)
        .prop_flat_map(|(n, shape, h, v, p_collapse)| {
            (
                proptest::collection::vec(any::<u32>(), n),
                proptest::collection::vec(0usize..NodeKind::ALL.len(), n),
                proptest::collection::vec(0u64..8, n),
                proptest::collection::vec(proptest::bool::weighted(p_collapse), n),
                proptest::collection::vec(any::<usize>(), 0..6),
                Just((shape, h, v)),
            )
        })
        .prop_map(|(picks, kinds, keys, collapsed, probes, (shape, h, v))| {
            let nodes = picks
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let parent = (i > 0).then(|| {
                        let i = i as u32;
                        match shape {
                            0 => r % i,
                            1 => i - 1 - (r % i.min(3)),
                            _ => i - 1 - (r % i.min(12)),
                        }
                    });
                    LayoutNode {
                        id: i as u32,
                        parent,
                        kind: if i == 0 {
                            NodeKind::Init
                        } else {
                            NodeKind::ALL[kinds[i]]
                        },
                        order_key: keys[i],
                        collapsed: collapsed[i],
                    }
                })
                .collect();
            TreeCase {
                nodes,
                config: LayoutConfig {
                    h_spacing: h,
                    v_spacing: v,
                    ..LayoutConfig::default()
                },
                probes,
            }
        })
}

/// Visible nodes with their depth: those with no collapsed strict ancestor.
pub fn visible(nodes: &[LayoutNode<u32>]) -> BTreeMap<u32, usize> {
    let by_id: BTreeMap<u32, &LayoutNode<u32>> = nodes.iter().map(|n| (n.id, n)).collect();
    let mut out = BTreeMap::new();
    'node: for n in nodes {
        let mut depth = 0;
        let mut cur = n.parent;
        while let Some(p) = cur {
            if by_id[&p].collapsed {
                continue 'node;
            }
            depth += 1;
            cur = by_id[&p].parent;
        }
        out.insert(n.id, depth);
    }
    out
}

/// Checks no-overlap, gap, depth layering, parent centering, sibling order
/// and tight bounds. Returns the number of pairwise comparisons made.
pub fn check_layout(nodes: &[LayoutNode<u32>], config: &LayoutConfig, r: &LayoutResult<u32>) -> Result<u64, String> {
    let vis = visible(nodes);
    let placed: BTreeSet<u32> = r.positions.keys().copied().collect();
    let expected: BTreeSet<u32> = vis.keys().copied().collect();
    ensure!(
        placed == expected,
        "placed {} nodes, {} are visible",
        placed.len(),
        expected.len()
    );

    let tallest = config.node_box.values().map(|b| b.height).fold(0.0, f64::max);
    let pitch = tallest + config.v_spacing;
    let by_id: BTreeMap<u32, &LayoutNode<u32>> = nodes.iter().map(|n| (n.id, n)).collect();
    for (id, p) in &r.positions {
        let want = vis[id] as f64 * pitch;
        ensure!((p.y - want).abs() < EPS, "node {id} at y={} expected {want}", p.y);
        let b = config.node_box[&by_id[id].kind];
        ensure!(
            p.width == b.width && p.height == b.height,
            "node {id} has the wrong box size"
        );
    }

    let boxes: Vec<(u32, f64, f64, f64, f64)> = r
        .positions
        .iter()
        .map(|(id, p)| (*id, p.x, p.x + p.width, p.y, p.y + p.height))
        .collect();
    let mut pairs = 0u64;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let (a, ax0, ax1, ay0, ay1) = boxes[i];
            let (b, bx0, bx1, by0, by1) = boxes[j];
            pairs += 1;
            let overlap = ax0 < bx1 - EPS && bx0 < ax1 - EPS && ay0 < by1 - EPS && by0 < ay1 - EPS;
            ensure!(!overlap, "boxes {a} and {b} overlap");
            if vis[&a] == vis[&b] {
                let gap = if ax0 <= bx0 { bx0 - ax1 } else { ax0 - bx1 };
                ensure!(
                    gap >= config.h_spacing - EPS,
                    "boxes {a} and {b} at depth {} are {gap} apart",
                    vis[&a]
                );
            }
        }
    }

    let center = |id: u32| r.positions[&id].center_x();
    let mut kids: BTreeMap<u32, Vec<&LayoutNode<u32>>> = BTreeMap::new();
    for n in nodes {
        if let Some(p) = n.parent {
            if vis.contains_key(&n.id) {
                kids.entry(p).or_default().push(n);
            }
        }
    }
    for (parent, mut cs) in kids {
        cs.sort_by_key(|n| (n.order_key, n.id));
        let xs: Vec<f64> = cs.iter().map(|n| center(n.id)).collect();
        for w in xs.windows(2) {
            ensure!(w[0] < w[1], "children of {parent} are out of order");
        }
        let c = center(parent);
        ensure!(
            c >= xs[0] - EPS && c <= xs[xs.len() - 1] + EPS,
            "parent {parent} at {c} lies outside its children [{}, {}]",
            xs[0],
            xs[xs.len() - 1]
        );
    }

    let min_x = boxes.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
    let max_x = boxes.iter().map(|b| b.2).fold(f64::NEG_INFINITY, f64::max);
    let max_y = boxes.iter().map(|b| b.4).fold(f64::NEG_INFINITY, f64::max);
    ensure!(min_x.abs() < EPS, "leftmost box at {min_x}, not 0");
    ensure!(
        (r.bounds.width - (max_x - min_x)).abs() < EPS,
        "bounds width is not tight"
    );
    ensure!((r.bounds.height - max_y).abs() < EPS, "bounds height is not tight");
    Ok(pairs)
}

/// All layout properties for one case, including determinism under input
/// permutation and collapse-monotone width.
pub fn check_case(case: &TreeCase) -> Result<u64, String> {
    let r = compute_layout(&case.nodes, &case.config).map_err(|e| e.to_string())?;
    let mut checks = check_layout(&case.nodes, &case.config, &r)?;

    let again = compute_layout(&case.nodes, &case.config).map_err(|e| e.to_string())?;
    ensure!(again == r, "layout is not deterministic");
    let mut reversed = case.nodes.clone();
    reversed.reverse();
    let permuted = compute_layout(&reversed, &case.config).map_err(|e| e.to_string())?;
    ensure!(permuted == r, "layout depends on input order");

    let vis = visible(&case.nodes);
    let internal: Vec<u32> = case
        .nodes
        .iter()
        .filter(|n| !n.collapsed && vis.contains_key(&n.id) && case.nodes.iter().any(|c| c.parent == Some(n.id)))
        .map(|n| n.id)
        .collect();
    if !internal.is_empty() {
        for &probe in &case.probes {
            let target = internal[probe % internal.len()];
            let mut nodes = case.nodes.clone();
            nodes[target as usize].collapsed = true;
            let folded = compute_layout(&nodes, &case.config).map_err(|e| e.to_string())?;
            ensure!(
                folded.bounds.width <= r.bounds.width + EPS,
                "collapsing {target} widened the layout from {} to {}",
                r.bounds.width,
                folded.bounds.width
            );
            checks += check_layout(&nodes, &case.config, &folded)?;
        }
    }
    Ok(checks)
}

pub fn suite(cases: u32, max_nodes: usize) -> Result<Tally, String> {
    let mut tally = Tally::default();
    let cell = std::cell::RefCell::new(&mut tally);
    let result = crate::runner(cases, 5).run(&tree_case(max_nodes), |case| {
        let checks = check_case(&case).map_err(TestCaseError::fail)?;
        let mut t = cell.borrow_mut();
        t.cases += 1;
        t.steps += case.nodes.len() as u64;
        t.checks += checks;
        Ok(())
    });
    result.map(|_| tally).map_err(|e| e.to_string())
}
