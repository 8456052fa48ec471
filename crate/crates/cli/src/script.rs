//! The replay script language.
//!
//! One command per line; `#` starts a comment. Words are split shell-style,
//! so quoted strings may contain spaces. Nodes, collection entries and
//! timeline segments are named by labels that must be defined before use;
//! pruning a node undefines its label and every label below it.
//!
//! Asset references: `L` is the selected candidate of node `L`, `L#i`
//! candidate `i` of its latest batch, `L#b.i` candidate `i` of batch `b`,
//! and `L!i` auxiliary output `i` of the latest batch.

use std::collections::HashMap;
use std::time::Duration;

use reeltree_core::model::ParamValue;
use reeltree_core::stitching::Track;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScriptParseError {
    pub line: usize,
    pub message: String,
}

/// Which candidate of a node a reference means.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pick {
    Selected,
    Candidate { batch: Option<usize>, index: usize },
    Auxiliary { index: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssetRef {
    pub node: String,
    pub pick: Pick,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Edits {
    pub intent: Option<String>,
    pub prompt: Option<String>,
    pub refs: Option<Vec<AssetRef>>,
    pub params: Vec<(String, ParamValue)>,
}

impl Edits {
    pub fn is_empty(&self) -> bool {
        self.intent.is_none() && self.prompt.is_none() && self.refs.is_none() && self.params.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    /// Names the project the script creates; must come first if present.
    Project(String),
    Context(Vec<(String, String)>),
    /// An intent draft under the root, locked immediately.
    NewScene {
        label: String,
        intent: String,
    },
    /// A planning child of `parent`, planned at once. `branch` requires
    /// `parent` to already have children (a deliberate backtrack).
    Plan {
        label: String,
        parent: String,
        intent: String,
        refs: Vec<AssetRef>,
        branch: bool,
    },
    /// A modal child bound to `workflow` without planning.
    Add {
        label: String,
        parent: String,
        workflow: String,
        edits: Edits,
    },
    Edit {
        label: String,
        edits: Edits,
    },
    Materialize {
        label: String,
        edits: Edits,
    },
    /// Runs the node; `wait` is the simulated generation latency.
    Execute {
        label: String,
        wait: Duration,
    },
    Select {
        label: String,
        pick: Pick,
    },
    Retain {
        label: String,
        pick: Pick,
        on: bool,
    },
    Collapse {
        label: String,
        on: bool,
    },
    Prune {
        label: String,
    },
    Collect {
        entry: String,
        source: AssetRef,
    },
    Place {
        segment: String,
        entry: String,
        track: Track,
        at: Option<u32>,
        trim: Option<(u64, u64)>,
    },
    Reorder {
        segment: String,
        index: u32,
    },
    Unplace {
        segment: String,
    },
    SceneDone(u32),
    /// Creator think time.
    Wait(Duration),
    Export {
        name: Option<String>,
    },
    Report,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub number: usize,
    pub command: Command,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Script {
    pub lines: Vec<Line>,
}

impl Script {
    pub fn project_name(&self) -> Option<&str> {
        self.lines.iter().find_map(|l| match &l.command {
            Command::Project(n) => Some(n.as_str()),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LabelKind {
    Node,
    Entry,
    Segment,
}

impl LabelKind {
    fn name(self) -> &'static str {
        match self {
            LabelKind::Node => "node",
            LabelKind::Entry => "entry",
            LabelKind::Segment => "segment",
        }
    }
}

/// Labels in scope while parsing, with node parentage so a prune can
/// retire a whole subtree.
#[derive(Default)]
struct Scope {
    labels: HashMap<String, LabelKind>,
    parent: HashMap<String, Option<String>>,
    children: HashMap<String, usize>,
}

impl Scope {
    fn define(&mut self, label: &str, kind: LabelKind, parent: Option<&str>) -> Result<(), String> {
        if !is_label(label) {
            return Err(format!("invalid label {label:?} (letters, digits, '_' and '-')"));
        }
        if self.labels.contains_key(label) {
            return Err(format!("label {label:?} is already defined"));
        }
        self.labels.insert(label.to_owned(), kind);
        if kind == LabelKind::Node {
            self.parent.insert(label.to_owned(), parent.map(str::to_owned));
            if let Some(p) = parent {
                *self.children.entry(p.to_owned()).or_default() += 1;
            }
        }
        Ok(())
    }

    fn require(&self, label: &str, kind: LabelKind) -> Result<(), String> {
        match self.labels.get(label) {
            Some(k) if *k == kind => Ok(()),
            Some(k) => Err(format!("label {label:?} names a {}, not a {}", k.name(), kind.name())),
            None => Err(format!("undefined {} label {label:?}", kind.name())),
        }
    }

    fn descends_from(&self, label: &str, ancestor: &str) -> bool {
        let mut cur = Some(label.to_owned());
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.parent.get(&c).cloned().flatten();
        }
        false
    }

    fn prune(&mut self, label: &str) {
        let doomed: Vec<String> = self
            .parent
            .keys()
            .filter(|l| self.descends_from(l, label))
            .cloned()
            .collect();
        if let Some(Some(p)) = self.parent.get(label) {
            if let Some(n) = self.children.get_mut(p) {
                *n -= 1;
            }
        }
        for l in doomed {
            self.labels.remove(&l);
            self.parent.remove(&l);
            self.children.remove(&l);
        }
    }
}

fn is_label(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Positional words and `key=value` options of one line.
struct Args {
    positional: Vec<String>,
    options: Vec<(String, String)>,
}

impl Args {
    fn split(words: impl IntoIterator<Item = String>) -> Self {
        let mut positional = vec![];
        let mut options = vec![];
        for w in words {
            match w.split_once('=') {
                Some((k, v)) if is_option_key(k) => options.push((k.to_owned(), v.to_owned())),
                _ => positional.push(w),
            }
        }
        Self { positional, options }
    }

    fn take_option(&mut self, key: &str) -> Option<String> {
        let at = self.options.iter().position(|(k, _)| k == key)?;
        Some(self.options.remove(at).1)
    }

    fn take_flag(&mut self, word: &str) -> bool {
        match self.positional.iter().position(|p| p == word) {
            Some(at) => {
                self.positional.remove(at);
                true
            }
            None => false,
        }
    }

    fn expect_positional(&self, n: usize, usage: &str) -> Result<(), String> {
        if self.positional.len() == n {
            Ok(())
        } else {
            Err(format!("expected {n} argument(s): {usage}"))
        }
    }

    fn finish(self) -> Result<(), String> {
        match self.options.first() {
            Some((k, _)) => Err(format!("unknown option {k:?}")),
            None => Ok(()),
        }
    }
}

fn is_option_key(k: &str) -> bool {
    !k.is_empty()
        && k.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_usize(s: &str, what: &str) -> Result<usize, String> {
    s.parse()
        .map_err(|_| format!("{what} must be a non-negative integer, got {s:?}"))
}

fn parse_duration(s: &str) -> Result<Duration, String> {
    humantime::parse_duration(s).map_err(|e| format!("bad duration {s:?}: {e}"))
}

pub fn parse_asset_ref(s: &str) -> Result<AssetRef, String> {
    let (node, pick) = if let Some((n, rest)) = s.split_once('#') {
        let pick = match rest.split_once('.') {
            Some((b, i)) => Pick::Candidate {
                batch: Some(parse_usize(b, "batch")?),
                index: parse_usize(i, "candidate")?,
            },
            None => Pick::Candidate {
                batch: None,
                index: parse_usize(rest, "candidate")?,
            },
        };
        (n, pick)
    } else if let Some((n, rest)) = s.split_once('!') {
        (
            n,
            Pick::Auxiliary {
                index: parse_usize(rest, "auxiliary index")?,
            },
        )
    } else {
        (s, Pick::Selected)
    };
    if !is_label(node) {
        return Err(format!("bad asset reference {s:?}"));
    }
    Ok(AssetRef {
        node: node.to_owned(),
        pick,
    })
}

/// `select`/`retain` take `i` (latest batch) or `b.i`.
fn parse_pick(s: &str) -> Result<Pick, String> {
    Ok(match s.split_once('.') {
        Some((b, i)) => Pick::Candidate {
            batch: Some(parse_usize(b, "batch")?),
            index: parse_usize(i, "candidate")?,
        },
        None => Pick::Candidate {
            batch: None,
            index: parse_usize(s, "candidate")?,
        },
    })
}

fn parse_refs(raw: &str, scope: &Scope) -> Result<Vec<AssetRef>, String> {
    let refs = raw
        .split(',')
        .filter(|s| !s.is_empty())
        .map(parse_asset_ref)
        .collect::<Result<Vec<_>, _>>()?;
    for r in &refs {
        scope.require(&r.node, LabelKind::Node)?;
    }
    Ok(refs)
}

fn take_edits(args: &mut Args, scope: &Scope) -> Result<Edits, String> {
    let mut e = Edits {
        intent: args.take_option("intent"),
        prompt: args.take_option("prompt"),
        ..Default::default()
    };
    if let Some(r) = args.take_option("refs") {
        e.refs = Some(parse_refs(&r, scope)?);
    }
    let mut rest = vec![];
    for (k, v) in std::mem::take(&mut args.options) {
        match k.strip_prefix("param.") {
            Some(name) if !name.is_empty() => e.params.push((name.to_owned(), ParamValue::parse_literal(&v))),
            _ => rest.push((k, v)),
        }
    }
    args.options = rest;
    Ok(e)
}

fn parse_line(words: Vec<String>, scope: &mut Scope, first: bool) -> Result<Command, String> {
    let (verb, rest) = words.split_first().ok_or("empty command")?;
    let mut a = Args::split(rest.iter().cloned());
    let p = |a: &Args, i: usize| a.positional[i].clone();
    let cmd = match verb.as_str() {
        "project" => {
            a.expect_positional(1, "project NAME")?;
            if !first {
                return Err("project must be the first command".into());
            }
            Command::Project(p(&a, 0))
        }
        "context" => {
            a.expect_positional(0, "context KEY=VALUE...")?;
            const KEYS: [&str; 5] = ["model_id", "style", "mood", "palette", "reference_material"];
            if let Some((k, _)) = a.options.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
                return Err(format!("unknown context key {k:?}"));
            }
            Command::Context(std::mem::take(&mut a.options))
        }
        "new-scene" => {
            a.expect_positional(2, "new-scene LABEL \"INTENT\"")?;
            scope.define(&p(&a, 0), LabelKind::Node, None)?;
            Command::NewScene {
                label: p(&a, 0),
                intent: p(&a, 1),
            }
        }
        "plan" | "branch-from" => {
            let branch = verb == "branch-from";
            a.expect_positional(3, &format!("{verb} LABEL PARENT \"INTENT\" [refs=A,B]"))?;
            scope.require(&p(&a, 1), LabelKind::Node)?;
            if branch && scope.children.get(&p(&a, 1)).copied().unwrap_or(0) == 0 {
                return Err(format!(
                    "branch-from needs {:?} to already have a child; use plan",
                    p(&a, 1)
                ));
            }
            let refs = match a.take_option("refs") {
                Some(r) => parse_refs(&r, scope)?,
                None => vec![],
            };
            scope.define(&p(&a, 0), LabelKind::Node, Some(&p(&a, 1)))?;
            Command::Plan {
                label: p(&a, 0),
                parent: p(&a, 1),
                intent: p(&a, 2),
                refs,
                branch,
            }
        }
        "add" => {
            a.expect_positional(
                3,
                "add LABEL PARENT WORKFLOW [intent=..] [prompt=..] [refs=..] [param.K=V]",
            )?;
            scope.require(&p(&a, 1), LabelKind::Node)?;
            let edits = take_edits(&mut a, scope)?;
            scope.define(&p(&a, 0), LabelKind::Node, Some(&p(&a, 1)))?;
            Command::Add {
                label: p(&a, 0),
                parent: p(&a, 1),
                workflow: p(&a, 2),
                edits,
            }
        }
        "edit" | "materialize" => {
            a.expect_positional(
                1,
                &format!("{verb} LABEL [intent=..] [prompt=..] [refs=..] [param.K=V]"),
            )?;
            scope.require(&p(&a, 0), LabelKind::Node)?;
            let edits = take_edits(&mut a, scope)?;
            if verb == "edit" {
                if edits.is_empty() {
                    return Err("edit needs at least one change".into());
                }
                Command::Edit { label: p(&a, 0), edits }
            } else {
                Command::Materialize { label: p(&a, 0), edits }
            }
        }
        "execute" => {
            a.expect_positional(1, "execute LABEL [wait=DURATION]")?;
            scope.require(&p(&a, 0), LabelKind::Node)?;
            let wait = match a.take_option("wait") {
                Some(w) => parse_duration(&w)?,
                None => Duration::ZERO,
            };
            Command::Execute { label: p(&a, 0), wait }
        }
        "select" => {
            a.expect_positional(2, "select LABEL INDEX|BATCH.INDEX")?;
            scope.require(&p(&a, 0), LabelKind::Node)?;
            Command::Select {
                label: p(&a, 0),
                pick: parse_pick(&p(&a, 1))?,
            }
        }
        "retain" => {
            let off = a.take_flag("off");
            a.expect_positional(2, "retain LABEL INDEX|BATCH.INDEX [off]")?;
            scope.require(&p(&a, 0), LabelKind::Node)?;
            Command::Retain {
                label: p(&a, 0),
                pick: parse_pick(&p(&a, 1))?,
                on: !off,
            }
        }
        "collapse" => {
            let off = a.take_flag("off");
            a.expect_positional(1, "collapse LABEL [off]")?;
            scope.require(&p(&a, 0), LabelKind::Node)?;
            Command::Collapse {
                label: p(&a, 0),
                on: !off,
            }
        }
        "prune" => {
            a.expect_positional(1, "prune LABEL")?;
            scope.require(&p(&a, 0), LabelKind::Node)?;
            scope.prune(&p(&a, 0));
            Command::Prune { label: p(&a, 0) }
        }
        "collect" => {
            a.expect_positional(2, "collect ENTRY NODE[#I|#B.I]")?;
            let source = parse_asset_ref(&p(&a, 1))?;
            if matches!(source.pick, Pick::Auxiliary { .. }) {
                return Err("only candidates can be collected".into());
            }
            scope.require(&source.node, LabelKind::Node)?;
            scope.define(&p(&a, 0), LabelKind::Entry, None)?;
            Command::Collect {
                entry: p(&a, 0),
                source,
            }
        }
        "place" => {
            a.expect_positional(3, "place SEGMENT ENTRY video|audio [at=N] [trim=IN_MS-OUT_MS]")?;
            scope.require(&p(&a, 1), LabelKind::Entry)?;
            let track = Track::parse(&p(&a, 2)).ok_or_else(|| format!("unknown track {:?}", p(&a, 2)))?;
            let at = match a.take_option("at") {
                Some(s) => Some(parse_usize(&s, "at")? as u32),
                None => None,
            };
            let trim = match a.take_option("trim") {
                Some(s) => {
                    let (i, o) = s.split_once('-').ok_or("trim must be IN_MS-OUT_MS")?;
                    Some((parse_usize(i, "trim in")? as u64, parse_usize(o, "trim out")? as u64))
                }
                None => None,
            };
            scope.define(&p(&a, 0), LabelKind::Segment, None)?;
            Command::Place {
                segment: p(&a, 0),
                entry: p(&a, 1),
                track,
                at,
                trim,
            }
        }
        "reorder" => {
            a.expect_positional(2, "reorder SEGMENT INDEX")?;
            scope.require(&p(&a, 0), LabelKind::Segment)?;
            Command::Reorder {
                segment: p(&a, 0),
                index: parse_usize(&p(&a, 1), "index")? as u32,
            }
        }
        "unplace" => {
            a.expect_positional(1, "unplace SEGMENT")?;
            scope.require(&p(&a, 0), LabelKind::Segment)?;
            scope.labels.remove(&p(&a, 0));
            Command::Unplace { segment: p(&a, 0) }
        }
        "scene-done" => {
            a.expect_positional(1, "scene-done N")?;
            Command::SceneDone(parse_usize(&p(&a, 0), "scene")? as u32)
        }
        "wait" => {
            a.expect_positional(1, "wait DURATION")?;
            Command::Wait(parse_duration(&p(&a, 0))?)
        }
        "export" => {
            if a.positional.len() > 1 {
                return Err("expected: export [NAME]".into());
            }
            Command::Export {
                name: a.positional.first().cloned(),
            }
        }
        "report" => {
            a.expect_positional(0, "report")?;
            Command::Report
        }
        other => return Err(format!("unknown command {other:?}")),
    };
    a.finish()?;
    Ok(cmd)
}

pub fn parse(text: &str) -> Result<Script, ScriptParseError> {
    let mut scope = Scope::default();
    let mut lines = vec![];
    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let err = |message: String| ScriptParseError { line: number, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let words = shlex::split(trimmed).ok_or_else(|| err("unbalanced quotes".into()))?;
        // A `#` outside quotes starts a trailing comment.
        let words: Vec<String> = words.into_iter().take_while(|w| !w.starts_with('#')).collect();
        let command = parse_line(words, &mut scope, lines.is_empty()).map_err(err)?;
        lines.push(Line { number, command });
    }
    Ok(Script { lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_refs() {
        let s = parse(
            "project \"Demo\"\n\
             # comment\n\
             new-scene s1 \"a quiet river\"\n\
             plan a s1 \"a quiet river at night\"   # trailing\n\
             materialize a param.num_candidates=2 prompt=\"river, night\"\n\
             execute a wait=90s\n\
             plan b a \"upscale it\" refs=a#1,a#0.2,a!0,a\n\
             collect e1 a#1\n\
             place v1 e1 video at=0 trim=0-1500\n",
        )
        .unwrap();
        assert_eq!(s.project_name(), Some("Demo"));
        assert_eq!(s.lines.len(), 8);
        assert_eq!(s.lines[2].number, 4);
        match &s.lines[4].command {
            Command::Execute { wait, .. } => assert_eq!(*wait, Duration::from_secs(90)),
            c => panic!("{c:?}"),
        }
        match &s.lines[5].command {
            Command::Plan { refs, .. } => {
                assert_eq!(refs[0].pick, Pick::Candidate { batch: None, index: 1 });
                assert_eq!(
                    refs[1].pick,
                    Pick::Candidate {
                        batch: Some(0),
                        index: 2
                    }
                );
                assert_eq!(refs[2].pick, Pick::Auxiliary { index: 0 });
                assert_eq!(refs[3].pick, Pick::Selected);
            }
            c => panic!("{c:?}"),
        }
        match &s.lines[3].command {
            Command::Materialize { edits, .. } => {
                assert_eq!(edits.params, vec![("num_candidates".into(), ParamValue::Int(2))]);
                assert_eq!(edits.prompt.as_deref(), Some("river, night"));
            }
            c => panic!("{c:?}"),
        }
    }

    fn err_line(text: &str) -> usize {
        parse(text).unwrap_err().line
    }

    #[test]
    fn errors_carry_the_line() {
        assert_eq!(err_line("new-scene s1 \"x\"\nplan a s2 \"y\"\n"), 2);
        assert_eq!(err_line("new-scene s1 \"x\"\n\nexecute nope\n"), 3);
        assert_eq!(err_line("frobnicate\n"), 1);
        assert_eq!(err_line("new-scene s1 \"x\nplan a s1 y\n"), 1);
        assert_eq!(err_line("new-scene s1 \"x\"\nnew-scene s1 \"y\"\n"), 2);
        assert_eq!(err_line("new-scene s1 \"x\"\nexecute s1 wait=soon\n"), 2);
        assert_eq!(err_line("new-scene s1 \"x\"\nexecute s1 colour=red\n"), 2);
        assert_eq!(err_line("new-scene s1 \"x\"\nbranch-from b s1 \"y\"\n"), 2);
        assert_eq!(err_line("new-scene s1 \"x\"\nproject \"late\"\n"), 2);
    }

    #[test]
    fn prune_retires_the_subtree() {
        let base = "new-scene s1 \"x\"\nplan a s1 \"y\"\nplan b a \"z\"\nprune a\n";
        assert!(parse(base).is_ok());
        assert_eq!(err_line(&format!("{base}execute b\n")), 5);
        assert_eq!(err_line(&format!("{base}collect e a\n")), 5);
        assert!(parse(&format!("{base}plan a s1 \"again\"\nexecute s1\n")).is_ok());
    }

    #[test]
    fn label_kinds_are_checked() {
        assert_eq!(err_line("new-scene s1 \"x\"\ncollect e s1\nexecute e\n"), 3);
        assert_eq!(err_line("new-scene s1 \"x\"\nplace v s1 video\n"), 2);
    }
}
