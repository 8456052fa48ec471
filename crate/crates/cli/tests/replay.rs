use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use reeltree_cli::compare::{diff, normalized_tree};
use reeltree_cli::{render_tree, replay_local, ReplayError};
use reeltree_core::ids::NodeId;
use reeltree_core::state::ProjectState;

const CASE1: &str = include_str!("../fixtures/case1.script");
const CASE2: &str = include_str!("../fixtures/case2.script");

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reeltree"))
}

/// Nodes with no collapsed strict ancestor.
fn visible(state: &ProjectState) -> BTreeSet<NodeId> {
    state
        .nodes
        .values()
        .filter(|n| {
            let mut p = n.parent_id.clone();
            while let Some(id) = p {
                if state.nodes[&id].collapsed {
                    return false;
                }
                p = state.nodes[&id].parent_id.clone();
            }
            true
        })
        .map(|n| n.node_id.clone())
        .collect()
}

fn skip_lock(p: &Path) -> bool {
    p.file_name().is_some_and(|n| n == ".lock")
}

#[test]
fn case1_tree_renders_one_line_per_visible_node() {
    let dir = tempfile::tempdir().unwrap();
    let r = replay_local(dir.path(), CASE1, 0, "case1").unwrap();
    let pid = r.outcome.project_id.clone().unwrap();
    let state = r.engine.snapshot(&pid).unwrap();
    let text = render_tree(&state, None);
    assert_eq!(text.lines().count(), visible(&state).len());
    assert_eq!(text.lines().next(), Some("Init"));
    assert_eq!(r.outcome.exports.len(), 1);
    assert!(r.transcript.contains("exported 4 segment(s)"), "{}", r.transcript);
}

#[test]
fn collapsed_nodes_report_their_hidden_descendants() {
    let dir = tempfile::tempdir().unwrap();
    let r = replay_local(dir.path(), CASE2, 0, "case2").unwrap();
    let pid = r.outcome.project_id.clone().unwrap();
    let state = r.engine.snapshot(&pid).unwrap();
    let edge = &r.outcome.nodes["edge"];
    assert!(state.nodes[edge].collapsed);
    let hidden = state.subtree(edge).len() - 1;
    assert!(hidden > 0);
    let labels = r.outcome.nodes.iter().map(|(l, id)| (id.clone(), l.clone())).collect();
    let text = render_tree(&state, Some(&labels));
    let line = text.lines().find(|l| l.contains("@edge")).unwrap();
    assert!(line.ends_with(&format!("[+{hidden}]")), "{line}");
    assert_eq!(text.lines().count(), visible(&state).len());
}

#[test]
fn replays_into_fresh_directories_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = replay_local(a.path(), CASE2, 0, "case2").unwrap();
    let rb = replay_local(b.path(), CASE2, 0, "case2").unwrap();
    assert_eq!(ra.outcome.project_id, rb.outcome.project_id);
    let strip = |t: &str, d: &Path| t.replace(d.to_str().unwrap(), "<data>");
    assert_eq!(strip(&ra.transcript, a.path()), strip(&rb.transcript, b.path()));
    let ta = normalized_tree(a.path(), &skip_lock).unwrap();
    let tb = normalized_tree(b.path(), &skip_lock).unwrap();
    assert!(ta.keys().any(|k| k.ends_with("events.jsonl")));
    assert_eq!(diff(&ta, &tb), Vec::<String>::new());
}

#[test]
fn different_seeds_give_different_ids() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let script = "project \"p\"\nnew-scene s \"a quiet harbor\"\n";
    let ra = replay_local(a.path(), script, 0, "x").unwrap();
    let rb = replay_local(b.path(), script, 1, "x").unwrap();
    assert_ne!(ra.outcome.project_id, rb.outcome.project_id);
}

#[test]
fn a_fresh_project_renders_as_init() {
    let dir = tempfile::tempdir().unwrap();
    let r = replay_local(dir.path(), "project \"empty\"\n", 0, "x").unwrap();
    let pid = r.outcome.project_id.unwrap();
    let state = r.engine.snapshot(&pid).unwrap();
    assert_eq!(render_tree(&state, None), "Init\n");
}

#[test]
fn a_failing_command_reports_its_line_and_code() {
    let dir = tempfile::tempdir().unwrap();
    let script = "project \"p\"\nnew-scene s \"a harbor at dawn\"\nplan a s \"a harbor at dawn\"\nmaterialize a\nexecute a\nselect a 9\n";
    match replay_local(dir.path(), script, 0, "x") {
        Err(ReplayError::Script(e, outcome)) => {
            assert_eq!(e.line, 6);
            assert_eq!(e.code, "IndexOutOfRange");
            assert!(outcome.nodes.contains_key("a"));
        }
        Err(other) => panic!("unexpected {other}"),
        Ok(_) => panic!("selecting a missing candidate succeeded"),
    }
}

#[test]
fn parse_errors_are_reported_before_anything_runs() {
    let dir = tempfile::tempdir().unwrap();
    let script = "project \"p\"\nnew-scene s \"x\"\nplan a nowhere \"y\"\n";
    match replay_local(dir.path(), script, 0, "x") {
        Err(ReplayError::Parse(e)) => assert_eq!(e.line, 3),
        Err(other) => panic!("unexpected {other}"),
        Ok(_) => panic!("undefined label accepted"),
    }
    assert!(
        !dir.path().join("projects").exists() || std::fs::read_dir(dir.path().join("projects")).unwrap().count() == 0
    );
}

#[test]
fn binary_run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.script");
    std::fs::write(&bad, "project \"p\"\nfrobnicate\n").unwrap();
    let out = bin()
        .arg("--data-dir")
        .arg(dir.path().join("d"))
        .arg("run")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let failing = dir.path().join("fail.script");
    std::fs::write(
        &failing,
        "project \"p\"\nnew-scene s \"harbor\"\nplan a s \"harbor\"\nexecute a\n",
    )
    .unwrap();
    let out = bin()
        .arg("--data-dir")
        .arg(dir.path().join("d"))
        .arg("run")
        .arg(&failing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("project p ("), "{stdout}");
}

#[test]
fn binary_project_tree_metrics_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let run = |args: &[&str]| {
        let out = bin().arg("--data-dir").arg(&data).args(args).output().unwrap();
        (
            out.status.code(),
            String::from_utf8_lossy(&out.stdout).into_owned(),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    };
    let (code, id, _) = run(&["project", "new", "demo"]);
    assert_eq!(code, Some(0));
    let id = id.trim().to_string();
    assert_eq!(id.len(), 32);

    let (_, ls, _) = run(&["project", "ls"]);
    assert!(ls.contains(&id) && ls.contains("demo"), "{ls}");
    let (_, tree, _) = run(&["tree", "demo"]);
    assert!(tree.starts_with("Init\n"), "{tree}");
    let (_, metrics, _) = run(&["metrics", &id[..6], "--json"]);
    let v: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    assert_eq!(v["N_calls"], 0);
    let out_dir = dir.path().join("out");
    let (code, _, err) = run(&["export", "demo", out_dir.to_str().unwrap()]);
    assert_eq!(code, Some(1));
    assert!(err.contains("empty"), "{err}");
    let (code, _, err) = run(&["tree", "nobody"]);
    assert_eq!(code, Some(1));
    assert!(err.contains("no project matches"), "{err}");
    let (code, _, _) = run(&["project", "rm", "demo"]);
    assert_eq!(code, Some(0));
    let (_, ls, _) = run(&["project", "ls"]);
    assert!(ls.trim().is_empty(), "{ls}");
}
