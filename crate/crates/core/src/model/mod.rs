//! The authoring-state tree: node kinds, lifecycle, specs, plans and the
//! structural operations over a project's tree.

mod error;
mod ops;
mod types;

pub use error::ModelError;
pub use ops::{PruneBlocker, SpecPatch};
pub use types::*;
