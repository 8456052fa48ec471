//! Engine for branching generative-media authoring: a persistent tree of
//! authoring states, a planning pipeline over a text-model provider, a
//! registry of executable workflow modules, a provenance-linked stitching
//! timeline and session telemetry.

pub mod agents;
pub mod clock;
pub mod config;
pub mod engine;
pub mod event;
pub mod ids;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod state;
pub mod stitching;
pub mod store;
pub mod workflows;

#[cfg(test)]
pub(crate) mod testing;
