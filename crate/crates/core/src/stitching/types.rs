use serde::{Deserialize, Serialize};

use crate::ids::{AssetId, EntryId, NodeId, SegmentId};
use crate::model::{CandidateRef, Modality};

/// Default on-timeline length of a still image.
pub const DEFAULT_STILL_DURATION_MS: u64 = 3000;

/// Timeline track: 0 holds images and video, 1 holds audio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Track {
    Video,
    Audio,
}

impl Track {
    pub fn accepts(self, modality: Modality) -> bool {
        match self {
            Track::Video => matches!(modality, Modality::Image | Modality::Video),
            Track::Audio => modality == Modality::Audio,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "video" | "0" => Some(Track::Video),
            "audio" | "1" => Some(Track::Audio),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Track::Video => "video",
            Track::Audio => "audio",
        }
    }
}

impl From<Track> for u8 {
    fn from(t: Track) -> u8 {
        match t {
            Track::Video => 0,
            Track::Audio => 1,
        }
    }
}

impl TryFrom<u8> for Track {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Track::Video),
            1 => Ok(Track::Audio),
            other => Err(format!("no track {other}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionEntry {
    pub entry_id: EntryId,
    pub asset_id: AssetId,
    pub source_node_id: NodeId,
    pub candidate: CandidateRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: SegmentId,
    pub asset_id: AssetId,
    pub source_node_id: NodeId,
    pub track: Track,
    pub order_index: u32,
    pub trim_in_ms: u64,
    pub trim_out_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trim {
    pub trim_in_ms: u64,
    pub trim_out_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub still_duration_ms: u64,
    pub collection: Vec<CollectionEntry>,
    /// Kept sorted by (track, order_index); per-track indices are 0..k.
    pub segments: Vec<Segment>,
}

impl Default for Timeline {
    fn default() -> Self {
        Self {
            still_duration_ms: DEFAULT_STILL_DURATION_MS,
            collection: vec![],
            segments: vec![],
        }
    }
}

impl Timeline {
    pub fn track(&self, track: Track) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.track == track)
    }

    pub fn track_len(&self, track: Track) -> usize {
        self.track(track).count()
    }

    pub fn segment(&self, id: &SegmentId) -> Option<&Segment> {
        self.segments.iter().find(|s| &s.segment_id == id)
    }

    pub fn entry(&self, id: &EntryId) -> Option<&CollectionEntry> {
        self.collection.iter().find(|e| &e.entry_id == id)
    }

    pub(crate) fn insert_segment(&mut self, mut segment: Segment) {
        let mut order: Vec<Segment> = self.track(segment.track).cloned().collect();
        let at = (segment.order_index as usize).min(order.len());
        segment.order_index = at as u32;
        order.insert(at, segment);
        self.replace_track(order);
    }

    pub(crate) fn move_segment(&mut self, id: &SegmentId, new_index: u32) {
        let Some(track) = self.segment(id).map(|s| s.track) else {
            return;
        };
        let mut order: Vec<Segment> = self.track(track).cloned().collect();
        let from = order
            .iter()
            .position(|s| &s.segment_id == id)
            .expect("segment on its track");
        let seg = order.remove(from);
        let to = (new_index as usize).min(order.len());
        order.insert(to, seg);
        self.replace_track(order);
    }

    pub(crate) fn remove_segment(&mut self, id: &SegmentId) {
        let Some(track) = self.segment(id).map(|s| s.track) else {
            return;
        };
        let order: Vec<Segment> = self.track(track).filter(|s| &s.segment_id != id).cloned().collect();
        self.segments.retain(|s| s.track != track);
        self.replace_track(order);
    }

    fn replace_track(&mut self, mut order: Vec<Segment>) {
        let Some(track) = order.first().map(|s| s.track) else {
            return;
        };
        for (i, s) in order.iter_mut().enumerate() {
            s.order_index = i as u32;
        }
        self.segments.retain(|s| s.track != track);
        self.segments.extend(order);
        self.segments.sort_by_key(|s| (s.track, s.order_index));
    }
}
