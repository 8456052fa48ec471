//! Acceptance run: one PASS/FAIL line per criterion, with its runtime
//! against a fixed budget. A criterion passes only if its checks hold and
//! it finishes within budget. Pass criterion ids (e.g. `AC2 AC8`) to run a
//! subset.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use reeltree_api::{AppState, BackgroundServer, RouterOptions};
use reeltree_cli::compare::{diff, normalize, normalized_tree};
use reeltree_cli::{parse, replay_local, HttpDriver, Interpreter, LocalReplay};
use reeltree_core::config::Config;
use reeltree_core::event::ProjectEvent;
use reeltree_core::ids::{AssetId, NodeId, ProjectId};
use reeltree_core::metrics::{compute_report, format_minutes, SessionLog, WaitRule};
use reeltree_core::model::NodeKind;
use reeltree_core::state::ProjectState;
use reeltree_core::stitching::MANIFEST_FILE;
use reeltree_core::store::FsStore;
use reeltree_testkit::metrics_logs::anchored_log;
use reeltree_testkit::{ensure, layout_check, planning, provenance, tree_ops};

type Check = fn() -> Result<String, String>;

const CRITERIA: &[(&str, &str, u64, Check)] = &[
    ("AC1", "metrics identities on the reference anchors", 1, ac1),
    ("AC2", "case 1 replay and golden manifest", 30, ac2),
    ("AC3", "case 2 backtracking, reuse and prune isolation", 30, ac3),
    ("AC4", "tree property suite, 1000 sequences", 120, ac4),
    ("AC5", "layout oracle, 200 trees up to 500 nodes", 60, ac5),
    ("AC6", "planning pipeline totality and review gate", 60, ac6),
    ("AC7", "provenance totality, 10000 steps", 120, ac7),
    ("AC8", "CLI and HTTP replays agree", 60, ac8),
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn read_fixture(name: &str) -> Result<String, String> {
    std::fs::read_to_string(fixture(name)).map_err(|e| format!("{name}: {e}"))
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

fn replay(dir: &Path, script: &str, name: &str) -> Result<LocalReplay, String> {
    replay_local(dir, &read_fixture(script)?, 0, name).map_err(|e| format!("{script}: {e}"))
}

fn snapshot(r: &LocalReplay) -> Result<(ProjectId, Arc<ProjectState>), String> {
    let pid = r.outcome.project_id.clone().ok_or("script created no project")?;
    let s = r.engine.snapshot(&pid).map_err(|e| e.to_string())?;
    Ok((pid, s))
}

/// The child of Init whose subtree holds `id`.
fn scene_of(s: &ProjectState, id: &NodeId) -> Option<NodeId> {
    let path = s.path_to(id).ok()?;
    path.get(1).map(|n| n.node_id.clone())
}

fn is_ancestor(s: &ProjectState, maybe: &NodeId, of: &NodeId) -> bool {
    s.path_to(of).is_ok_and(|p| p.iter().any(|n| &n.node_id == maybe))
}

fn producer(s: &ProjectState, a: &AssetId) -> Option<NodeId> {
    s.assets.get(a).map(|x| x.producer_node_id.clone())
}

fn ac1() -> Result<String, String> {
    // (T5, T_wait, T_assemble, T_active, T_author) in tenths of a minute.
    let rows = [(682, 304, 105, 378, 577), (526, 275, 18, 251, 508)];
    let mut shown = vec![];
    for (t5, wait, assemble, active, author) in rows {
        for overlap in [false, true] {
            let log = anchored_log(t5, wait, assemble, 3, overlap);
            // Round-trip through the on-disk line format first.
            let lines: Vec<String> = log.events().iter().map(|e| serde_json::to_string(e).unwrap()).collect();
            let log = SessionLog::from_lines(lines.iter().map(String::as_str)).map_err(|e| e.to_string())?;
            let r = compute_report(&log, WaitRule::Union).map_err(|e| e.to_string())?;
            let tenths = |v: i64| Ratio::new(v, 10);
            ensure!(r.t5 == Some(tenths(t5 as i64)), "T5 {:?}", r.t5);
            ensure!(r.t_wait == tenths(wait as i64), "T_wait {}", r.t_wait);
            ensure!(
                r.t_active == Some(tenths(active)),
                "T_active {:?}, expected {active}/10",
                r.t_active
            );
            ensure!(
                r.t_author == Some(tenths(author)),
                "T_author {:?}, expected {author}/10",
                r.t_author
            );
            let text = r.to_text();
            for (key, want) in [("T_active", r.t_active), ("T_author", r.t_author), ("T5", r.t5)] {
                let want = format_minutes(want.unwrap());
                let row = text.lines().find(|l| l.contains(key)).ok_or(format!("no {key} row"))?;
                ensure!(
                    row.trim_end().ends_with(&format!(" {want}")),
                    "row {row:?} does not show {want}"
                );
            }
            if !overlap {
                shown.push(format!(
                    "T_active {} T_author {}",
                    format_minutes(r.t_active.unwrap()),
                    format_minutes(r.t_author.unwrap())
                ));
            }
        }
    }
    Ok(shown.join("; "))
}

fn ac2() -> Result<String, String> {
    let dir = tempdir()?;
    let r = replay(dir.path(), "case1.script", "case1")?;
    let (_, s) = snapshot(&r)?;
    let root = s.root.clone().ok_or("no root")?;

    let scenes: Vec<_> = s.children(&root);
    ensure!(scenes.len() == 3, "{} top-level branches", scenes.len());
    ensure!(
        scenes.iter().all(|n| n.kind == NodeKind::IntentDraft),
        "a top-level branch is not a scene"
    );

    let sibling_images = s
        .nodes
        .keys()
        .any(|p| s.children(p).iter().filter(|c| c.kind == NodeKind::Image).count() >= 2);
    ensure!(sibling_images, "no parent has two image children");

    let selected_images: BTreeSet<&AssetId> = s
        .nodes
        .values()
        .filter(|n| n.kind == NodeKind::Image)
        .filter_map(|n| n.selected_asset())
        .collect();
    let animated = s
        .nodes
        .values()
        .filter(|n| n.kind == NodeKind::Video)
        .any(|n| n.spec.reference_asset_ids.iter().any(|a| selected_images.contains(a)));
    ensure!(animated, "no video node references a selected image");

    let bridges: Vec<_> = s
        .nodes
        .values()
        .filter(|n| n.spec.workflow_id.as_deref() == Some("wf-startend-i2v"))
        .filter(|n| {
            let branches: BTreeSet<_> = n
                .spec
                .reference_asset_ids
                .iter()
                .filter_map(|a| producer(&s, a))
                .filter_map(|p| scene_of(&s, &p))
                .collect();
            branches.len() >= 2
        })
        .collect();
    ensure!(!bridges.is_empty(), "no start-end transition spans two branches");

    let audio = s.nodes.values().filter(|n| n.kind == NodeKind::Audio).count();
    ensure!(audio == 1, "{audio} audio nodes");

    let [(out_dir, _)] = r.outcome.exports.as_slice() else {
        return Err(format!("{} exports", r.outcome.exports.len()));
    };
    let got = std::fs::read(out_dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let golden = std::fs::read(fixture("case1.manifest.json")).map_err(|e| e.to_string())?;
    ensure!(
        normalize(MANIFEST_FILE, got) == normalize(MANIFEST_FILE, golden),
        "manifest differs from fixtures/case1.manifest.json"
    );
    Ok(format!("{} nodes, manifest matches golden", s.nodes.len()))
}

fn ac3() -> Result<String, String> {
    let dir = tempdir()?;
    let r = replay(dir.path(), "case2.script", "case2")?;
    let (pid, s) = snapshot(&r)?;
    let label: BTreeMap<&NodeId, &str> = r.outcome.nodes.iter().map(|(l, id)| (id, l.as_str())).collect();
    let name = |id: &NodeId| label.get(id).map_or_else(|| id.short().to_string(), |l| l.to_string());

    // Creation order from the log.
    let events = r.engine.storage().read_events(&pid).map_err(|e| e.to_string())?;
    let created: BTreeMap<NodeId, u64> = events
        .iter()
        .filter_map(|e| match &e.event {
            ProjectEvent::NodeAdded { node_id, .. } => Some((node_id.clone(), e.seq)),
            _ => None,
        })
        .collect();

    let mut backtrack = None;
    'search: for (later, &seq) in &created {
        let Some(parent) = s.nodes.get(later).and_then(|n| n.parent_id.clone()) else {
            continue;
        };
        for sibling in s.children(&parent) {
            if &sibling.node_id == later {
                continue;
            }
            let deeper = s
                .subtree(&sibling.node_id)
                .into_iter()
                .skip(1)
                .find(|d| created.get(d).is_some_and(|&c| c < seq));
            if let Some(d) = deeper {
                backtrack = Some((name(later), name(&parent), name(&d)));
                break 'search;
            }
        }
    }
    let (added, under, earlier) = backtrack.ok_or("no child was added to an ancestor after a deeper descendant")?;

    let reuse: Vec<String> = s
        .nodes
        .values()
        .filter(|n| {
            n.spec
                .reference_asset_ids
                .iter()
                .filter_map(|a| producer(&s, a))
                .any(|p| !is_ancestor(&s, &p, &n.node_id))
        })
        .map(|n| name(&n.node_id))
        .collect();
    ensure!(!reuse.is_empty(), "no node references an asset from another branch");

    let dew = r.outcome.nodes.get("dew").ok_or("case2 has no dew node")?;
    let before = r.engine.snapshot(&pid).map_err(|e| e.to_string())?;
    let removed = r.engine.prune(&pid, dew).map_err(|e| format!("prune dew: {e}"))?;
    let after = r.engine.snapshot(&pid).map_err(|e| e.to_string())?;
    tree_ops::check_prune_isolation(&before, &after, dew, &removed)?;
    Ok(format!(
        "{added} added under {under} after {earlier}; cross-branch refs in {}; prune removed {}",
        reuse.join(","),
        removed.len()
    ))
}

fn ac4() -> Result<String, String> {
    tree_ops::suite(1000, 30).map(|t| t.to_string())
}

fn ac5() -> Result<String, String> {
    layout_check::suite(200, 500).map(|t| t.to_string())
}

fn ac6() -> Result<String, String> {
    let a = planning::check_pipeline(3)?;
    let b = planning::check_review_gate(2)?;
    Ok(format!("pipeline {a}; review gate {b}"))
}

fn ac7() -> Result<String, String> {
    let t = provenance::suite(20, 500)?;
    ensure!(t.steps == 10_000, "ran {} steps", t.steps);
    Ok(t.to_string())
}

fn ac8() -> Result<String, String> {
    let root = tempdir()?;
    let (cli_dir, http_dir) = (root.path().join("cli"), root.path().join("http"));
    let script_path = fixture("case1.script");

    let out = Command::new(env!("CARGO_BIN_EXE_reeltree"))
        .arg("--data-dir")
        .arg(&cli_dir)
        .arg("run")
        .arg(&script_path)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "reeltree run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let cfg = Config {
        data_dir: http_dir.clone(),
        id_seed: Some(0),
        ..Config::default()
    };
    let store = FsStore::open(&http_dir).map_err(|e| e.to_string())?;
    let engine = Arc::new(cfg.build_engine(Arc::new(store)).map_err(|e| e.to_string())?);
    let workers = engine.start_workers(1);
    let server = BackgroundServer::start(
        AppState {
            engine: engine.clone(),
            export_root: http_dir.join("exports"),
        },
        RouterOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let script = parse(&read_fixture("case1.script")?).map_err(|e| e.to_string())?;
    let mut driver = HttpDriver::new(server.base_url()).map_err(|e| e.to_string())?;
    let mut sink = Vec::new();
    let stem = script_path.file_stem().unwrap().to_string_lossy().into_owned();
    Interpreter::new(&mut driver, &mut sink, &stem)
        .run(&script)
        .map_err(|(e, _)| format!("HTTP replay: {e}"))?;
    drop(server);
    drop(workers);

    let skip = |_: &Path| false;
    let a = normalized_tree(&cli_dir, &skip).map_err(|e| e.to_string())?;
    let b = normalized_tree(&http_dir, &skip).map_err(|e| e.to_string())?;
    let differing = diff(&a, &b);
    ensure!(differing.is_empty(), "directories differ at {differing:?}");
    Ok(format!("{} files identical after normalization", a.len()))
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut failed = 0;
    for &(id, title, budget, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let budget = Duration::from_secs(budget);
        let (verdict, detail) = match outcome {
            Ok(_) if took > budget => ("FAIL", format!("over budget ({:.1?} > {budget:?})", took)),
            Ok(d) => ("PASS", d),
            Err(e) => ("FAIL", e),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!(
            "{id} {verdict} {title} [{:.2}s/{}s] {detail}",
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
