//! Command-line front end: script replay, tree rendering and metrics.

pub mod compare;
pub mod driver;
pub mod interp;
pub mod render;
pub mod replay;
pub mod script;

pub use driver::{Driver, DriverError, EngineDriver, HttpDriver};
pub use interp::{Interpreter, RunOutcome, ScriptError};
pub use render::{render_tree, summarize, TreeSummary};
pub use replay::{replay_local, LocalReplay, ReplayError};
pub use script::{parse, Script, ScriptParseError};
