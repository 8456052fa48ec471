use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use reeltree_cli::{parse, render_tree, summarize, Driver, EngineDriver, HttpDriver, Interpreter};
use reeltree_core::clock::{Clock, ManualClock, SystemClock};
use reeltree_core::config::{Config, ProviderKind};
use reeltree_core::engine::Engine;
use reeltree_core::ids::ProjectId;
use reeltree_core::metrics::WaitRule;
use reeltree_core::store::{DataDirLock, FsStore};

/// Seed used by `run` when none is configured, so replays are repeatable.
const DEFAULT_RUN_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "reeltree", version, about = "Branching authoring trees for generative video")]
struct Cli {
    /// Data directory (overrides the config file).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Planning provider: mock or http.
    #[arg(long, global = true)]
    provider: Option<ProviderKind>,
    /// Workflow registry file (JSON).
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    /// Seed for deterministic ids.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create, list or delete projects.
    Project {
        #[command(subcommand)]
        action: ProjectCmd,
    },
    /// Replay a script, then print the tree and its metrics.
    Run {
        script: PathBuf,
        /// Project name when the script does not set one.
        #[arg(long)]
        name: Option<String>,
        /// Drive a running service instead of the local data directory.
        #[arg(long)]
        server: Option<String>,
    },
    /// Print a project's tree.
    Tree { project: String },
    /// Print a project's session metrics.
    Metrics {
        project: String,
        #[arg(long, default_value = "union")]
        wait_rule: String,
        #[arg(long)]
        json: bool,
    },
    /// Write the stitch manifest, concat lists and assets to a directory.
    Export { project: String, out: PathBuf },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Subcommand)]
enum ProjectCmd {
    New { name: String },
    Ls,
    Rm { project: String },
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(p) = cli.provider {
        cfg.provider = p;
    }
    if let Some(r) = &cli.registry {
        cfg.registry = Some(r.clone());
    }
    if let Some(s) = cli.seed {
        cfg.id_seed = Some(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// An engine over the local data directory, holding its lock.
struct Local {
    engine: Arc<Engine>,
    clock: Option<Arc<ManualClock>>,
    _lock: DataDirLock,
}

fn open_local(cfg: &Config, simulated: bool) -> anyhow::Result<Local> {
    let lock = DataDirLock::acquire(&cfg.data_dir)
        .with_context(|| format!("data directory {} is in use", cfg.data_dir.display()))?;
    let mut store = FsStore::open(&cfg.data_dir)?;
    if !cfg.fsync {
        store = store.without_fsync();
    }
    let mut builder = cfg.engine_builder(Arc::new(store))?;
    let clock = simulated.then(|| Arc::new(ManualClock::new(SystemClock.now_ms())));
    if let Some(c) = &clock {
        builder = builder.clock(c.clone());
    }
    Ok(Local {
        engine: Arc::new(builder.build()?),
        clock,
        _lock: lock,
    })
}

/// Accepts a full id, a unique id prefix or a unique project name.
fn resolve_project(engine: &Engine, needle: &str) -> anyhow::Result<ProjectId> {
    let all = engine.list_projects()?;
    if let Some(p) = all.iter().find(|p| p.project_id.as_str() == needle) {
        return Ok(p.project_id.clone());
    }
    let hits: Vec<_> = all
        .iter()
        .filter(|p| p.name == needle || p.project_id.as_str().starts_with(needle))
        .collect();
    match hits.as_slice() {
        [one] => Ok(one.project_id.clone()),
        [] => bail!("no project matches {needle:?}"),
        _ => bail!("{needle:?} matches {} projects; use the id", hits.len()),
    }
}

fn run_script(cfg: &mut Config, path: &Path, name: Option<String>, server: Option<String>) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let script = match parse(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}:{e}", path.display());
            return Ok(ExitCode::from(2));
        }
    };
    let default_name = name.unwrap_or_else(|| {
        path.file_stem()
            .map_or_else(|| "script".into(), |s| s.to_string_lossy().into_owned())
    });
    let mut stdout = std::io::stdout();
    match server {
        Some(url) => {
            let mut d = HttpDriver::new(url)?;
            let res = Interpreter::new(&mut d, &mut stdout, &default_name).run(&script);
            finish_run(&mut d, res, path)
        }
        None => {
            cfg.id_seed.get_or_insert(DEFAULT_RUN_SEED);
            let local = open_local(cfg, true)?;
            let mut d = EngineDriver::new(local.engine.clone(), local.clock.clone(), cfg.data_dir.join("exports"));
            let res = Interpreter::new(&mut d, &mut stdout, &default_name).run(&script);
            finish_run(&mut d, res, path)
        }
    }
}

fn finish_run<D: Driver>(
    d: &mut D,
    res: Result<reeltree_cli::RunOutcome, (reeltree_cli::ScriptError, Box<reeltree_cli::RunOutcome>)>,
    path: &Path,
) -> anyhow::Result<ExitCode> {
    let (outcome, failed) = match res {
        Ok(o) => (o, None),
        Err((e, o)) => (*o, Some(e)),
    };
    if let Some(pid) = &outcome.project_id {
        let state = d.snapshot(pid).map_err(|e| anyhow!(e))?;
        let labels: BTreeMap<_, _> = outcome.nodes.iter().map(|(l, id)| (id.clone(), l.clone())).collect();
        println!("\nproject {} ({})", state.project.name, pid);
        print!("{}", render_tree(&state, Some(&labels)));
        println!("{}", summarize(&state));
        if outcome.reports.is_empty() {
            match d.metrics_text(pid, WaitRule::Union) {
                Ok(t) => print!("\n{t}"),
                Err(e) => println!("metrics unavailable: {e}"),
            }
        }
    }
    Ok(match failed {
        Some(e) => {
            eprintln!("{}:{e}", path.display());
            ExitCode::FAILURE
        }
        None => ExitCode::SUCCESS,
    })
}

fn main() -> ExitCode {
    // Piping into `head` should end the process quietly, not panic in print!.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Cmd::Run { script, name, server } => return run_script(&mut cfg, &script, name, server),
        Cmd::Serve { listen } => {
            if let Some(l) = listen {
                cfg.listen = l;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(reeltree_api::serve(cfg))?;
        }
        Cmd::Project { action } => {
            let local = open_local(&cfg, false)?;
            match action {
                ProjectCmd::New { name } => {
                    let s = local.engine.create_project(&name)?;
                    println!("{}", s.project.project_id);
                }
                ProjectCmd::Ls => {
                    for p in local.engine.list_projects()? {
                        let n = local.engine.snapshot(&p.project_id)?.nodes.len();
                        println!("{}  {}  ({n} nodes)", p.project_id, p.name);
                    }
                }
                ProjectCmd::Rm { project } => {
                    let pid = resolve_project(&local.engine, &project)?;
                    let r = local.engine.delete_project(&pid)?;
                    println!("removed {pid}: {r:?}");
                }
            }
        }
        Cmd::Tree { project } => {
            let local = open_local(&cfg, false)?;
            let pid = resolve_project(&local.engine, &project)?;
            let s = local.engine.snapshot(&pid)?;
            print!("{}", render_tree(&s, None));
            println!("{}", summarize(&s));
        }
        Cmd::Metrics {
            project,
            wait_rule,
            json,
        } => {
            let rule = match wait_rule.as_str() {
                "union" => WaitRule::Union,
                "sum" => WaitRule::Sum,
                other => bail!("unknown wait rule {other:?} (union or sum)"),
            };
            let local = open_local(&cfg, false)?;
            let pid = resolve_project(&local.engine, &project)?;
            let r = local.engine.metrics(&pid, rule)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r.to_json())?);
            } else {
                print!("{}", r.to_text());
            }
        }
        Cmd::Export { project, out } => {
            let local = open_local(&cfg, false)?;
            let pid = resolve_project(&local.engine, &project)?;
            let b = local.engine.export(&pid, &out)?;
            println!("manifest {}", b.manifest_path.display());
            println!("video list {}", b.video_list_path.display());
            println!("audio list {}", b.audio_list_path.display());
            if let Some(p) = b.encoded_path {
                println!("encoded {}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
