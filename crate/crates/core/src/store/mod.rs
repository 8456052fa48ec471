//! Event-sourced persistence and the content-addressed asset store.
//!
//! A project directory holds `project.json` (header), `events.jsonl`
//! (append-only log), `session.jsonl` (telemetry) and `assets/`, where each
//! asset is stored under its hash next to a `<hash>.json` provenance record.

mod asset;
mod fs;
mod mem;
mod project;

pub use asset::{Asset, AssetMetadata, MediaPayload};
pub use fs::{DataDirLock, FsStore};
pub use mem::MemStore;
pub use project::{default_modality_colors, GlobalContext, Project, SpacingConfig};

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{EventRecord, ProjectEvent};
use crate::ids::{AssetId, BatchId, NodeId, ProjectId};
use crate::state::ProjectState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("unknown project {0}")]
    UnknownProject(ProjectId),
    #[error("project {0} already exists")]
    ProjectExists(ProjectId),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("writer lease for project {0} is stale")]
    StaleWriter(ProjectId),
    #[error("event seq {got} does not follow {last}")]
    SeqMismatch { last: u64, got: u64 },
    #[error("asset payload is empty")]
    EmptyPayload,
    #[error("unknown producer node {0}")]
    UnknownProducer(NodeId),
    #[error("asset {asset} already produced by node {existing}")]
    ProvenanceConflict { asset: AssetId, existing: NodeId },
    #[error("unknown asset {0}")]
    UnknownAsset(AssetId),
    #[error("corrupt event log: {0}")]
    CorruptLog(String),
    #[error("data directory is in use by another process ({0})")]
    LeaseHeld(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::UnknownProject(_) => "UnknownProject",
            StoreError::ProjectExists(_) => "ProjectExists",
            StoreError::StorageFailure(_) => "StorageFailure",
            StoreError::StaleWriter(_) => "StaleWriter",
            StoreError::SeqMismatch { .. } => "SeqMismatch",
            StoreError::EmptyPayload => "EmptyPayload",
            StoreError::UnknownProducer(_) => "UnknownProducer",
            StoreError::ProvenanceConflict { .. } => "ProvenanceConflict",
            StoreError::UnknownAsset(_) => "UnknownAsset",
            StoreError::CorruptLog(_) => "CorruptLog",
            StoreError::LeaseHeld(_) => "LeaseHeld",
        }
    }
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::StorageFailure(e.to_string())
    }
}

/// Proof of holding a project's writer lease. Acquiring a new lease
/// invalidates every older one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriterLease {
    pub project_id: ProjectId,
    pub generation: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedCounts {
    pub events: usize,
    pub assets: usize,
    pub session_events: usize,
}

/// Raw persistence. Implementations enforce the lease and seq protocol;
/// semantic checks live above this trait.
pub trait Storage: Send + Sync {
    fn create_project(&self, project: &Project) -> Result<(), StoreError>;
    fn write_header(&self, project: &Project) -> Result<(), StoreError>;
    fn list_projects(&self) -> Result<Vec<ProjectId>, StoreError>;
    fn project_exists(&self, id: &ProjectId) -> bool;
    fn read_events(&self, id: &ProjectId) -> Result<Vec<EventRecord>, StoreError>;
    fn acquire_writer(&self, id: &ProjectId) -> Result<WriterLease, StoreError>;
    fn release_writer(&self, lease: &WriterLease);
    /// Durably appends `record`, which must carry the next seq.
    fn append_event(&self, lease: &WriterLease, record: &EventRecord) -> Result<(), StoreError>;
    fn write_asset(&self, id: &ProjectId, asset: &Asset, bytes: &[u8]) -> Result<(), StoreError>;
    fn read_asset(&self, id: &ProjectId, asset_id: &AssetId) -> Result<Vec<u8>, StoreError>;
    fn has_asset(&self, id: &ProjectId, asset_id: &AssetId) -> bool;
    fn list_assets(&self, id: &ProjectId) -> Result<Vec<AssetId>, StoreError>;
    fn delete_asset(&self, id: &ProjectId, asset_id: &AssetId) -> Result<(), StoreError>;
    fn append_session(&self, id: &ProjectId, line: &str) -> Result<(), StoreError>;
    fn read_session(&self, id: &ProjectId) -> Result<Vec<String>, StoreError>;
    fn delete_project(&self, id: &ProjectId) -> Result<RemovedCounts, StoreError>;
    /// On-disk directory of a project, when the backend has one.
    fn project_dir(&self, id: &ProjectId) -> Option<PathBuf>;
}

/// Lease generations and last seqs shared by both backends.
#[derive(Default)]
pub(crate) struct LeaseTable {
    slots: Mutex<HashMap<ProjectId, Slot>>,
}

#[derive(Default)]
struct Slot {
    generation: u64,
    last_seq: u64,
}

impl LeaseTable {
    pub(crate) fn acquire(&self, id: &ProjectId, last_seq: u64) -> WriterLease {
        let mut slots = self.slots.lock().unwrap();
        let slot = slots.entry(id.clone()).or_default();
        slot.generation += 1;
        slot.last_seq = last_seq;
        WriterLease {
            project_id: id.clone(),
            generation: slot.generation,
        }
    }

    pub(crate) fn release(&self, lease: &WriterLease) {
        let mut slots = self.slots.lock().unwrap();
        if let Some(slot) = slots.get_mut(&lease.project_id) {
            if slot.generation == lease.generation {
                slot.generation += 1;
            }
        }
    }

    /// Runs `write` under the table lock if the lease is current and `seq`
    /// is next, then advances the slot.
    pub(crate) fn append(
        &self,
        lease: &WriterLease,
        seq: u64,
        write: impl FnOnce() -> Result<(), StoreError>,
    ) -> Result<(), StoreError> {
        let mut slots = self.slots.lock().unwrap();
        let slot = slots
            .get_mut(&lease.project_id)
            .ok_or_else(|| StoreError::StaleWriter(lease.project_id.clone()))?;
        if slot.generation != lease.generation {
            return Err(StoreError::StaleWriter(lease.project_id.clone()));
        }
        if seq != slot.last_seq + 1 {
            return Err(StoreError::SeqMismatch {
                last: slot.last_seq,
                got: seq,
            });
        }
        write()?;
        slot.last_seq = seq;
        Ok(())
    }

    pub(crate) fn forget(&self, id: &ProjectId) {
        self.slots.lock().unwrap().remove(id);
    }
}

/// Reads and folds a project's log. Read-only and repeatable.
pub fn load_project(storage: &dyn Storage, id: &ProjectId) -> Result<ProjectState, StoreError> {
    if !storage.project_exists(id) {
        return Err(StoreError::UnknownProject(id.clone()));
    }
    ProjectState::replay(&storage.read_events(id)?)
}

/// Addresses `payload`, checks provenance against `state` and stores the
/// bytes. Same bytes from the same producer yield the same asset.
pub fn put_asset(
    storage: &dyn Storage,
    state: &ProjectState,
    payload: &MediaPayload,
    producer: &NodeId,
    batch: &BatchId,
    now: u64,
) -> Result<Asset, StoreError> {
    let asset = address_asset(state, payload, producer, batch, now)?;
    storage.write_asset(state.project_id(), &asset, &payload.bytes)?;
    Ok(asset)
}

/// The checks and record of `put_asset`, without touching storage.
pub fn address_asset(
    state: &ProjectState,
    payload: &MediaPayload,
    producer: &NodeId,
    batch: &BatchId,
    now: u64,
) -> Result<Asset, StoreError> {
    if payload.bytes.is_empty() {
        return Err(StoreError::EmptyPayload);
    }
    if !state.nodes.contains_key(producer) {
        return Err(StoreError::UnknownProducer(producer.clone()));
    }
    let asset_id = AssetId::of_bytes(&payload.bytes);
    if let Some(existing) = state.assets.get(&asset_id) {
        if &existing.producer_node_id != producer {
            return Err(StoreError::ProvenanceConflict {
                asset: asset_id,
                existing: existing.producer_node_id.clone(),
            });
        }
        return Ok(existing.clone());
    }
    Ok(Asset {
        media_locator: Asset::locator_for(&asset_id),
        asset_id,
        modality: payload.modality,
        metadata: payload.metadata.clone(),
        producer_node_id: producer.clone(),
        producer_batch_id: batch.clone(),
        created_at: now,
    })
}

/// Indexed assets that nothing live reaches any more.
pub fn garbage_assets(state: &ProjectState) -> Vec<AssetId> {
    let live = state.live_assets();
    state.assets.keys().filter(|id| !live.contains(*id)).cloned().collect()
}

/// Event releasing every garbage asset, or `None` when there is none.
pub fn gc_event(state: &ProjectState) -> Option<ProjectEvent> {
    let asset_ids = garbage_assets(state);
    (!asset_ids.is_empty()).then_some(ProjectEvent::AssetsReleased { asset_ids })
}
