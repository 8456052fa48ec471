//! Convergence workspace: the collection area, the two-track timeline and
//! the export of a concat list plus a provenance manifest.

mod export;
mod types;

pub use export::{
    build_manifest, concat_list, run_encoder, write_bundle, ExportBundle, ManifestSegment, StitchManifest,
    AUDIO_LIST_FILE, DEFAULT_OUTPUT_FILE, MANIFEST_FILE, VIDEO_LIST_FILE,
};
pub use types::*;

use thiserror::Error;

use crate::event::ProjectEvent;
use crate::ids::{EntryId, IdSource, NodeId, SegmentId};
use crate::model::{CandidateRef, Modality, NodeStatus};
use crate::state::ProjectState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StitchError {
    #[error("node {node} has no Succeeded candidate ({batch}, {candidate})")]
    UnknownCandidate {
        node: NodeId,
        batch: usize,
        candidate: usize,
    },
    #[error("unknown collection entry {0}")]
    UnknownEntry(EntryId),
    #[error("unknown segment {0}")]
    UnknownSegment(SegmentId),
    #[error("{modality:?} asset cannot go on the {track} track")]
    ModalityMismatch { modality: Modality, track: &'static str },
    #[error("bad trim [{trim_in_ms}, {trim_out_ms}) for an asset of {limit_ms} ms")]
    BadTrim {
        trim_in_ms: u64,
        trim_out_ms: u64,
        limit_ms: u64,
    },
    #[error("index {index} out of range for a track of {len}")]
    BadIndex { index: u32, len: usize },
    #[error("asset of segment {0} is no longer in the asset index")]
    DanglingSegment(SegmentId),
    #[error("the video track is empty")]
    EmptyTimeline,
    #[error("encoder failed: {0}")]
    EncoderFailed(String),
    #[error("export i/o: {0}")]
    Io(String),
}

impl StitchError {
    pub fn code(&self) -> &'static str {
        match self {
            StitchError::UnknownCandidate { .. } => "UnknownCandidate",
            StitchError::UnknownEntry(_) => "UnknownEntry",
            StitchError::UnknownSegment(_) => "UnknownSegment",
            StitchError::ModalityMismatch { .. } => "ModalityMismatch",
            StitchError::BadTrim { .. } => "BadTrim",
            StitchError::BadIndex { .. } => "BadIndex",
            StitchError::DanglingSegment(_) => "DanglingSegment",
            StitchError::EmptyTimeline => "EmptyTimeline",
            StitchError::EncoderFailed(_) => "EncoderFailed",
            StitchError::Io(_) => "Io",
        }
    }
}

impl ProjectState {
    /// Playable length of an asset on the timeline: its duration, or the
    /// configured still duration for images.
    pub fn playable_ms(&self, asset: &crate::store::Asset) -> u64 {
        asset.duration_ms().unwrap_or(self.timeline.still_duration_ms)
    }

    pub fn op_collect(
        &self,
        node_id: &NodeId,
        at: CandidateRef,
        ids: &mut IdSource,
    ) -> Result<(CollectionEntry, ProjectEvent), StitchError> {
        let unknown = || StitchError::UnknownCandidate {
            node: node_id.clone(),
            batch: at.batch_index,
            candidate: at.candidate_index,
        };
        let node = self.nodes.get(node_id).ok_or_else(unknown)?;
        if node.status != NodeStatus::Succeeded {
            return Err(unknown());
        }
        let asset_id = node.candidate(at).ok_or_else(unknown)?;
        let entry = CollectionEntry {
            entry_id: EntryId::new(ids.next("entry")),
            asset_id: asset_id.clone(),
            source_node_id: node_id.clone(),
            candidate: at,
        };
        Ok((entry.clone(), ProjectEvent::Collected { entry }))
    }

    pub fn op_uncollect(&self, entry_id: &EntryId) -> Result<ProjectEvent, StitchError> {
        self.timeline
            .entry(entry_id)
            .ok_or_else(|| StitchError::UnknownEntry(entry_id.clone()))?;
        Ok(ProjectEvent::EntryRemoved {
            entry_id: entry_id.clone(),
        })
    }

    /// Places a collected asset on `track`. `order_index` defaults to the end
    /// of the track and is clamped to it; `trim` defaults to the full length.
    pub fn op_place(
        &self,
        entry_id: &EntryId,
        track: Track,
        order_index: Option<u32>,
        trim: Option<Trim>,
        ids: &mut IdSource,
    ) -> Result<(Segment, ProjectEvent), StitchError> {
        let entry = self
            .timeline
            .entry(entry_id)
            .ok_or_else(|| StitchError::UnknownEntry(entry_id.clone()))?;
        let asset = self
            .assets
            .get(&entry.asset_id)
            .ok_or_else(|| StitchError::UnknownEntry(entry_id.clone()))?;
        if !track.accepts(asset.modality) {
            return Err(StitchError::ModalityMismatch {
                modality: asset.modality,
                track: track.name(),
            });
        }
        let limit_ms = self.playable_ms(asset);
        let trim = trim.unwrap_or(Trim {
            trim_in_ms: 0,
            trim_out_ms: limit_ms,
        });
        if trim.trim_out_ms <= trim.trim_in_ms || trim.trim_out_ms > limit_ms {
            return Err(StitchError::BadTrim {
                trim_in_ms: trim.trim_in_ms,
                trim_out_ms: trim.trim_out_ms,
                limit_ms,
            });
        }
        let len = self.timeline.track_len(track);
        let order_index = order_index.unwrap_or(len as u32).min(len as u32);
        let segment = Segment {
            segment_id: SegmentId::new(ids.next("segment")),
            asset_id: entry.asset_id.clone(),
            source_node_id: entry.source_node_id.clone(),
            track,
            order_index,
            trim_in_ms: trim.trim_in_ms,
            trim_out_ms: trim.trim_out_ms,
        };
        Ok((segment.clone(), ProjectEvent::SegmentPlaced { segment }))
    }

    pub fn op_reorder(&self, segment_id: &SegmentId, new_index: u32) -> Result<ProjectEvent, StitchError> {
        let seg = self
            .timeline
            .segment(segment_id)
            .ok_or_else(|| StitchError::UnknownSegment(segment_id.clone()))?;
        let len = self.timeline.track_len(seg.track);
        if new_index as usize >= len {
            return Err(StitchError::BadIndex { index: new_index, len });
        }
        Ok(ProjectEvent::SegmentMoved {
            segment_id: segment_id.clone(),
            new_index,
        })
    }

    pub fn op_remove_segment(&self, segment_id: &SegmentId) -> Result<ProjectEvent, StitchError> {
        self.timeline
            .segment(segment_id)
            .ok_or_else(|| StitchError::UnknownSegment(segment_id.clone()))?;
        Ok(ProjectEvent::SegmentRemoved {
            segment_id: segment_id.clone(),
        })
    }

    /// The node that produced a segment's asset.
    pub fn trace_origin(&self, segment_id: &SegmentId) -> Result<NodeId, StitchError> {
        let seg = self
            .timeline
            .segment(segment_id)
            .ok_or_else(|| StitchError::UnknownSegment(segment_id.clone()))?;
        let asset = self
            .assets
            .get(&seg.asset_id)
            .ok_or_else(|| StitchError::DanglingSegment(segment_id.clone()))?;
        if !self.nodes.contains_key(&asset.producer_node_id) {
            return Err(StitchError::DanglingSegment(segment_id.clone()));
        }
        Ok(asset.producer_node_id.clone())
    }
}
