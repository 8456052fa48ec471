use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::media::{tone_wav, ClipDescriptor, Raster, CLIP_FORMAT};
use super::{ExecutionRequest, WorkflowError, WorkflowModule};
use crate::ids::NodeId;
use crate::model::{Modality, ParamValue};
use crate::store::{Asset, AssetMetadata, MediaPayload};

/// A bound input asset together with its bytes.
#[derive(Clone, Debug)]
pub struct ExecutionInput {
    pub slot: String,
    pub asset: Asset,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct ExecutionOutput {
    pub candidates: Vec<MediaPayload>,
    pub auxiliary: Vec<MediaPayload>,
    /// Generation calls spent, counting chained post-processing stages.
    pub generation_calls: u32,
}

pub trait Executor: Send + Sync {
    fn execute(
        &self,
        node_id: &NodeId,
        workflow: &WorkflowModule,
        request: &ExecutionRequest,
        inputs: &[ExecutionInput],
    ) -> Result<ExecutionOutput, WorkflowError>;
}

/// Executors keyed by the registry's `executor_id`.
#[derive(Clone, Default)]
pub struct ExecutorSet {
    executors: BTreeMap<String, Arc<dyn Executor>>,
}

impl ExecutorSet {
    pub fn with_mock() -> Self {
        let mut s = Self::default();
        s.insert("mock", Arc::new(MockExecutor));
        s
    }

    pub fn insert(&mut self, id: impl Into<String>, executor: Arc<dyn Executor>) {
        self.executors.insert(id.into(), executor);
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Executor>, WorkflowError> {
        self.executors
            .get(id)
            .ok_or_else(|| WorkflowError::ExecutorUnavailable(id.to_owned()))
    }
}

/// Deterministic stand-in for generation models. Output bytes are a pure
/// function of (node id, workflow id, normalized parameters, prompt, batch
/// ordinal, input assets); the node id salts every output so two nodes never
/// produce the same content.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockExecutor;

struct Seeds {
    base: [u8; 32],
    salt: String,
}

impl Seeds {
    fn new(node_id: &NodeId, request: &ExecutionRequest, inputs: &[ExecutionInput]) -> Self {
        let mut h = Sha256::new();
        h.update(node_id.as_str());
        h.update([0]);
        h.update(&request.workflow_id);
        h.update([0]);
        h.update(serde_json::to_vec(&request.parameters).expect("params serialize"));
        h.update([0]);
        h.update(&request.prompt_text);
        h.update([0]);
        h.update((request.batch_ordinal as u64).to_le_bytes());
        for i in inputs {
            h.update(i.asset.asset_id.as_str());
        }
        Self {
            base: h.finalize().into(),
            salt: format!("{}:{}", node_id, request.batch_ordinal),
        }
    }

    fn for_candidate(&self, index: usize, tag: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.base);
        h.update((index as u64).to_le_bytes());
        h.update(tag);
        h.finalize().into()
    }

    fn candidate_salt(&self, index: usize) -> String {
        format!("{}:{index}", self.salt)
    }
}

fn int_param(request: &ExecutionRequest, name: &str, fallback: i64) -> i64 {
    request
        .parameters
        .get(name)
        .and_then(ParamValue::as_i64)
        .unwrap_or(fallback)
}

fn image_payload(raster: &Raster, salt: &str, anchors: Vec<crate::ids::AssetId>) -> MediaPayload {
    MediaPayload {
        bytes: raster.encode_pgm(salt),
        modality: Modality::Image,
        metadata: AssetMetadata {
            format: "pgm".into(),
            width: Some(raster.width),
            height: Some(raster.height),
            duration_ms: None,
            anchors,
        },
    }
}

fn input_raster(inputs: &[ExecutionInput], slot: &str) -> Option<Raster> {
    inputs
        .iter()
        .find(|i| i.slot == slot)
        .and_then(|i| Raster::decode_pgm(&i.bytes))
}

fn input_clip(inputs: &[ExecutionInput], slot: &str) -> Option<(ClipDescriptor, crate::ids::AssetId)> {
    inputs
        .iter()
        .find(|i| i.slot == slot)
        .and_then(|i| ClipDescriptor::decode(&i.bytes).map(|c| (c, i.asset.asset_id.clone())))
}

fn input_id(inputs: &[ExecutionInput], slot: &str) -> Option<crate::ids::AssetId> {
    inputs.iter().find(|i| i.slot == slot).map(|i| i.asset.asset_id.clone())
}

impl MockExecutor {
    fn images(
        &self,
        seeds: &Seeds,
        workflow: &WorkflowModule,
        request: &ExecutionRequest,
        inputs: &[ExecutionInput],
    ) -> Result<ExecutionOutput, WorkflowError> {
        let n = request.num_candidates();
        let mut out = ExecutionOutput {
            generation_calls: 1,
            ..Default::default()
        };
        let anchors: Vec<_> = inputs.iter().map(|i| i.asset.asset_id.clone()).collect();
        let mut base: Option<Raster> = None;
        match workflow.workflow_id.as_str() {
            "wf-canny-guided" => {
                let source = input_raster(inputs, "source")
                    .ok_or_else(|| WorkflowError::ExecutionFailed("source is not a raster".into()))?;
                let control = match input_raster(inputs, "control") {
                    Some(c) => c,
                    None => {
                        let low = int_param(request, "low_threshold", 100) as u32;
                        let high = int_param(request, "high_threshold", 200) as u32;
                        let c = source.edge_map(low / 4, high / 4);
                        let anchor = input_id(inputs, "source").into_iter().collect();
                        out.auxiliary
                            .push(image_payload(&c, &format!("{}:control", seeds.salt), anchor));
                        out.generation_calls += 1;
                        c
                    }
                };
                base = Some(source.blend(&control, 2));
            }
            "wf-upscale" => {
                let factor = int_param(request, "factor", 2) as u32;
                base = input_raster(inputs, "source").map(|r| r.zoom_center(factor));
            }
            "wf-compose-layers" => {
                if let (Some(b), Some(o)) = (input_raster(inputs, "base"), input_raster(inputs, "overlay")) {
                    let pixels = b
                        .pixels
                        .iter()
                        .zip(&o.pixels)
                        .map(|(b, o)| if *o > 160 { *o } else { *b })
                        .collect();
                    base = Some(Raster { pixels, ..b });
                }
            }
            _ => {
                base = inputs.iter().find_map(|i| Raster::decode_pgm(&i.bytes));
            }
        }
        for i in 0..n {
            let noise = Raster::pattern(seeds.for_candidate(i, "image"));
            let raster = match &base {
                Some(b) => b.blend(&noise, 3),
                None => noise,
            };
            out.candidates
                .push(image_payload(&raster, &seeds.candidate_salt(i), anchors.clone()));
        }
        Ok(out)
    }

    fn videos(
        &self,
        seeds: &Seeds,
        workflow: &WorkflowModule,
        request: &ExecutionRequest,
        inputs: &[ExecutionInput],
    ) -> Result<ExecutionOutput, WorkflowError> {
        let n = request.num_candidates();
        let duration = int_param(request, "duration_ms", 4000) as u64;
        let fps = int_param(request, "fps", 24) as u32;
        let prompt_digest = hex::encode(&Sha256::digest(request.prompt_text.as_bytes())[..8]);
        let motion = request
            .parameters
            .get("motion")
            .and_then(|m| m.as_str())
            .map(str::to_owned);
        let template = match workflow.workflow_id.as_str() {
            "wf-startend-i2v" => (
                duration,
                fps,
                input_id(inputs, "start_frame"),
                input_id(inputs, "end_frame"),
                vec![],
            ),
            "wf-interp" => {
                let (clip, id) = input_clip(inputs, "clip")
                    .ok_or_else(|| WorkflowError::ExecutionFailed("clip input is not a clip descriptor".into()))?;
                let factor = int_param(request, "factor", 2) as u32;
                (
                    clip.duration_ms,
                    clip.fps * factor,
                    clip.first_frame_asset,
                    clip.last_frame_asset,
                    vec![id],
                )
            }
            "wf-concat-clips" => {
                let (a, ia) = input_clip(inputs, "first")
                    .ok_or_else(|| WorkflowError::ExecutionFailed("first is not a clip descriptor".into()))?;
                let (b, ib) = input_clip(inputs, "second")
                    .ok_or_else(|| WorkflowError::ExecutionFailed("second is not a clip descriptor".into()))?;
                (
                    a.duration_ms + b.duration_ms,
                    a.fps.max(b.fps),
                    a.first_frame_asset,
                    b.last_frame_asset,
                    vec![ia, ib],
                )
            }
            _ => {
                let anchor = inputs
                    .iter()
                    .find(|i| i.asset.modality == Modality::Image)
                    .map(|i| i.asset.asset_id.clone());
                (duration, fps, anchor.clone(), anchor, vec![])
            }
        };
        let (duration_ms, fps, first, last, sources) = template;
        let mut out = ExecutionOutput {
            generation_calls: 1,
            ..Default::default()
        };
        for i in 0..n {
            let clip = ClipDescriptor {
                format: CLIP_FORMAT.into(),
                duration_ms,
                fps,
                first_frame_asset: first.clone(),
                last_frame_asset: last.clone(),
                motion: motion.clone(),
                source_clips: sources.clone(),
                prompt_digest: prompt_digest.clone(),
                salt: format!(
                    "{}:{}",
                    seeds.candidate_salt(i),
                    hex::encode(&seeds.for_candidate(i, "video")[..8])
                ),
                checksum: String::new(),
            }
            .seal();
            let mut anchors: Vec<_> = first.iter().chain(last.iter()).cloned().collect();
            anchors.dedup();
            anchors.extend(sources.iter().cloned());
            out.candidates.push(MediaPayload {
                bytes: clip.encode(),
                modality: Modality::Video,
                metadata: AssetMetadata {
                    format: CLIP_FORMAT.into(),
                    width: None,
                    height: None,
                    duration_ms: Some(duration_ms),
                    anchors,
                },
            });
        }
        Ok(out)
    }

    fn audio(&self, seeds: &Seeds, workflow: &WorkflowModule, request: &ExecutionRequest) -> ExecutionOutput {
        let n = request.num_candidates();
        let duration_ms = if workflow.workflow_id == "wf-tts" {
            let words = request.prompt_text.split_whitespace().count().max(1) as f64;
            let speed = request
                .parameters
                .get("speed")
                .and_then(ParamValue::as_f64)
                .unwrap_or(1.0);
            ((words * 400.0 / speed) as u64).clamp(1000, 30_000)
        } else {
            int_param(request, "duration_ms", 8000) as u64
        };
        let candidates = (0..n)
            .map(|i| MediaPayload {
                bytes: tone_wav(seeds.for_candidate(i, "audio"), duration_ms, &seeds.candidate_salt(i)),
                modality: Modality::Audio,
                metadata: AssetMetadata {
                    format: "wav".into(),
                    width: None,
                    height: None,
                    duration_ms: Some(duration_ms),
                    anchors: vec![],
                },
            })
            .collect();
        ExecutionOutput {
            candidates,
            auxiliary: vec![],
            generation_calls: 1,
        }
    }
}

impl Executor for MockExecutor {
    fn execute(
        &self,
        node_id: &NodeId,
        workflow: &WorkflowModule,
        request: &ExecutionRequest,
        inputs: &[ExecutionInput],
    ) -> Result<ExecutionOutput, WorkflowError> {
        let seeds = Seeds::new(node_id, request, inputs);
        match workflow.output_modality {
            Modality::Image => self.images(&seeds, workflow, request, inputs),
            Modality::Video => self.videos(&seeds, workflow, request, inputs),
            Modality::Audio => Ok(self.audio(&seeds, workflow, request)),
        }
    }
}
