use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{StitchError, Track};
use crate::ids::{AssetId, NodeId, ProjectId, SegmentId};
use crate::model::Modality;
use crate::state::ProjectState;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VIDEO_LIST_FILE: &str = "concat.txt";
pub const AUDIO_LIST_FILE: &str = "audio.txt";
pub const DEFAULT_OUTPUT_FILE: &str = "final.mp4";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSegment {
    pub track: String,
    pub order_index: u32,
    pub segment_id: SegmentId,
    pub asset_id: AssetId,
    pub source_node_id: NodeId,
    pub modality: Modality,
    pub media_locator: String,
    pub trim_in_ms: u64,
    pub trim_out_ms: u64,
    /// Full playable length of the asset (still duration for images).
    pub source_duration_ms: u64,
}

/// Provenance manifest: every segment with its origin node and trims.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StitchManifest {
    pub project_id: ProjectId,
    pub still_duration_ms: u64,
    pub total_video_ms: u64,
    pub total_audio_ms: u64,
    pub segments: Vec<ManifestSegment>,
}

impl StitchManifest {
    /// Pretty JSON with a trailing newline. A pure function of the timeline.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }
}

pub fn build_manifest(state: &ProjectState) -> Result<StitchManifest, StitchError> {
    if state.timeline.track_len(Track::Video) == 0 {
        return Err(StitchError::EmptyTimeline);
    }
    let mut segments = vec![];
    let (mut total_video_ms, mut total_audio_ms) = (0, 0);
    for track in [Track::Video, Track::Audio] {
        for s in state.timeline.track(track) {
            let origin = state.trace_origin(&s.segment_id)?;
            let asset = &state.assets[&s.asset_id];
            let len = s.trim_out_ms - s.trim_in_ms;
            match track {
                Track::Video => total_video_ms += len,
                Track::Audio => total_audio_ms += len,
            }
            segments.push(ManifestSegment {
                track: track.name().to_owned(),
                order_index: s.order_index,
                segment_id: s.segment_id.clone(),
                asset_id: s.asset_id.clone(),
                source_node_id: origin,
                modality: asset.modality,
                media_locator: asset.media_locator.clone(),
                trim_in_ms: s.trim_in_ms,
                trim_out_ms: s.trim_out_ms,
                source_duration_ms: state.playable_ms(asset),
            });
        }
    }
    Ok(StitchManifest {
        project_id: state.project_id().clone(),
        still_duration_ms: state.timeline.still_duration_ms,
        total_video_ms,
        total_audio_ms,
        segments,
    })
}

fn seconds(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

/// Concat-demuxer list for one track. Stills carry a `duration`; clips
/// carry `inpoint`/`outpoint` only when trimmed.
pub fn concat_list(manifest: &StitchManifest, track: Track) -> String {
    let mut out = String::from("ffconcat version 1.0\n");
    for s in manifest.segments.iter().filter(|s| s.track == track.name()) {
        writeln!(out, "file '{}'", s.media_locator).unwrap();
        if s.modality == Modality::Image {
            writeln!(out, "duration {}", seconds(s.trim_out_ms - s.trim_in_ms)).unwrap();
        } else if s.trim_in_ms > 0 || s.trim_out_ms < s.source_duration_ms {
            writeln!(out, "inpoint {}", seconds(s.trim_in_ms)).unwrap();
            writeln!(out, "outpoint {}", seconds(s.trim_out_ms)).unwrap();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportBundle {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub video_list_path: PathBuf,
    pub audio_list_path: PathBuf,
    pub encoded_path: Option<PathBuf>,
    pub manifest: StitchManifest,
}

/// Writes the manifest, both concat lists and a copy of every referenced
/// asset under `out_dir/assets`, so the lists resolve relative to `out_dir`.
pub fn write_bundle(
    state: &ProjectState,
    read_asset: &dyn Fn(&AssetId) -> std::io::Result<Vec<u8>>,
    out_dir: &Path,
) -> Result<ExportBundle, StitchError> {
    let manifest = build_manifest(state)?;
    let io = |e: std::io::Error| StitchError::Io(e.to_string());
    std::fs::create_dir_all(out_dir.join("assets")).map_err(io)?;
    for s in &manifest.segments {
        let dest = out_dir.join(&s.media_locator);
        if !dest.exists() {
            std::fs::write(&dest, read_asset(&s.asset_id).map_err(io)?).map_err(io)?;
        }
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let video_list_path = out_dir.join(VIDEO_LIST_FILE);
    let audio_list_path = out_dir.join(AUDIO_LIST_FILE);
    std::fs::write(&manifest_path, manifest.to_bytes()).map_err(io)?;
    std::fs::write(&video_list_path, concat_list(&manifest, Track::Video)).map_err(io)?;
    std::fs::write(&audio_list_path, concat_list(&manifest, Track::Audio)).map_err(io)?;
    Ok(ExportBundle {
        out_dir: out_dir.to_owned(),
        manifest_path,
        video_list_path,
        audio_list_path,
        encoded_path: None,
        manifest,
    })
}

fn quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Runs `template` through `sh -c` in the bundle directory after
/// substituting `{concat}`, `{audio}`, `{manifest}` and `{output}`.
pub fn run_encoder(bundle: &mut ExportBundle, template: &str) -> Result<(), StitchError> {
    let output = bundle.out_dir.join(DEFAULT_OUTPUT_FILE);
    let cmd = template
        .replace("{concat}", &quote(&bundle.video_list_path))
        .replace("{audio}", &quote(&bundle.audio_list_path))
        .replace("{manifest}", &quote(&bundle.manifest_path))
        .replace("{output}", &quote(&output));
    let result = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .current_dir(&bundle.out_dir)
        .output()
        .map_err(|e| StitchError::EncoderFailed(e.to_string()))?;
    if !result.status.success() {
        let stderr = String::from_utf8_lossy(&result.stderr);
        let tail: String = stderr
            .lines()
            .rev()
            .take(5)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect::<Vec<_>>()
            .join("\n");
        return Err(StitchError::EncoderFailed(format!("{}: {}", result.status, tail)));
    }
    bundle.encoded_path = Some(output);
    Ok(())
}
