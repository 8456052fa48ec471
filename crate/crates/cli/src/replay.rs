//! Replays a script into a local data directory on a simulated clock.

use std::path::Path;
use std::sync::Arc;

use reeltree_core::clock::ManualClock;
use reeltree_core::config::Config;
use reeltree_core::engine::{Engine, EngineError};
use reeltree_core::store::FsStore;
use thiserror::Error;

use crate::{parse, EngineDriver, Interpreter, RunOutcome, ScriptError, ScriptParseError};

/// Fixed start of the simulated clock, so repeated replays also agree on
/// absolute timestamps.
pub const REPLAY_START_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("parse error at {0}")]
    Parse(#[from] ScriptParseError),
    #[error("script failed at {0}")]
    Script(ScriptError, Box<RunOutcome>),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub struct LocalReplay {
    pub engine: Arc<Engine>,
    pub clock: Arc<ManualClock>,
    pub outcome: RunOutcome,
    /// Everything the interpreter printed.
    pub transcript: String,
}

/// An engine over `data_dir` configured like `reeltree run`, with ids
/// seeded by `seed` and a manual clock at [`REPLAY_START_MS`].
pub fn local_engine(data_dir: &Path, seed: u64) -> Result<(Arc<Engine>, Arc<ManualClock>), EngineError> {
    let cfg = Config {
        data_dir: data_dir.to_path_buf(),
        id_seed: Some(seed),
        ..Config::default()
    };
    let clock = Arc::new(ManualClock::new(REPLAY_START_MS));
    let engine = cfg
        .engine_builder(Arc::new(FsStore::open(data_dir)?))?
        .clock(clock.clone())
        .build()?;
    Ok((Arc::new(engine), clock))
}

/// Parses and runs `text` against a fresh engine over `data_dir`. Exports
/// land in `data_dir/exports`.
pub fn replay_local(data_dir: &Path, text: &str, seed: u64, default_name: &str) -> Result<LocalReplay, ReplayError> {
    let script = parse(text)?;
    let (engine, clock) = local_engine(data_dir, seed)?;
    let mut driver = EngineDriver::new(engine.clone(), Some(clock.clone()), data_dir.join("exports"));
    let mut out = Vec::new();
    let res = Interpreter::new(&mut driver, &mut out, default_name).run(&script);
    let transcript = String::from_utf8_lossy(&out).into_owned();
    match res {
        Ok(outcome) => Ok(LocalReplay {
            engine,
            clock,
            outcome,
            transcript,
        }),
        Err((e, outcome)) => Err(ReplayError::Script(e, outcome)),
    }
}
