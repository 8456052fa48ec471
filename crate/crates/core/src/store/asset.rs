use serde::{Deserialize, Serialize};

use crate::ids::{AssetId, BatchId, NodeId};
use crate::model::Modality;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetMetadata {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    /// Assets this one was conditioned on (e.g. first/last frame anchors).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<AssetId>,
}

/// An immutable, content-addressed media artifact and its provenance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub asset_id: AssetId,
    pub modality: Modality,
    /// Path of the bytes relative to the project directory.
    pub media_locator: String,
    pub metadata: AssetMetadata,
    pub producer_node_id: NodeId,
    pub producer_batch_id: BatchId,
    pub created_at: u64,
}

impl Asset {
    pub fn locator_for(id: &AssetId) -> String {
        format!("assets/{id}")
    }

    /// Playable length on a timeline; `None` for stills.
    pub fn duration_ms(&self) -> Option<u64> {
        match self.modality {
            Modality::Image => None,
            _ => self.metadata.duration_ms,
        }
    }
}

/// Bytes plus description, before they are addressed and stored.
#[derive(Clone, Debug, PartialEq)]
pub struct MediaPayload {
    pub bytes: Vec<u8>,
    pub modality: Modality,
    pub metadata: AssetMetadata,
}
