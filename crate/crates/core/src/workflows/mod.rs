//! Workflow modules: the declarative registry, spec validation, executors
//! (deterministic mocks plus an optional generation-server client) and the
//! job records that track execution.

mod error;
mod executor;
mod jobs;
pub mod media;
mod registry;
mod validate;

#[cfg(feature = "http")]
pub mod backend;

pub use error::WorkflowError;
pub use executor::{ExecutionInput, ExecutionOutput, Executor, ExecutorSet, MockExecutor};
pub use jobs::{ExecutionRequest, Job, JobState, SlotBinding};
pub use registry::{load_registry, InputSlot, ParamSpec, ParamType, Registry, WorkflowModule, BASELINE_REGISTRY_JSON};
pub use validate::{validate_spec, NormalizedSpec};
