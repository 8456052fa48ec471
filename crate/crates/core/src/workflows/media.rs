//! Byte formats produced by the mock executors.
//!
//! * images: binary PGM (`P5`) grayscale rasters, 64x64, with a salt comment
//! * videos: JSON clip descriptors naming their first/last frame anchors
//! * audio: 8-bit mono PCM WAV files holding a deterministic tone

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::AssetId;
use crate::model::Modality;
use crate::store::AssetMetadata;

pub const MOCK_IMAGE_SIDE: u32 = 64;
pub const MOCK_AUDIO_RATE: u32 = 4000;
pub const CLIP_FORMAT: &str = "clip-descriptor/v1";

/// Deterministic byte stream: SHA-256 in counter mode over a seed.
pub struct SeedStream {
    seed: [u8; 32],
    counter: u64,
    buf: [u8; 32],
    pos: usize,
}

impl SeedStream {
    pub fn new(seed: [u8; 32]) -> Self {
        Self {
            seed,
            counter: 0,
            buf: [0; 32],
            pos: 32,
        }
    }

    pub fn next_u8(&mut self) -> u8 {
        if self.pos == 32 {
            let mut h = Sha256::new();
            h.update(self.seed);
            h.update(self.counter.to_le_bytes());
            self.buf.copy_from_slice(&h.finalize());
            self.counter += 1;
            self.pos = 0;
        }
        let b = self.buf[self.pos];
        self.pos += 1;
        b
    }

    pub fn next_u32(&mut self) -> u32 {
        u32::from_le_bytes([self.next_u8(), self.next_u8(), self.next_u8(), self.next_u8()])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    /// Procedural pattern: a seeded diagonal gradient plus 8x8 block noise.
    pub fn pattern(seed: [u8; 32]) -> Self {
        let side = MOCK_IMAGE_SIDE;
        let mut s = SeedStream::new(seed);
        let gx = u32::from(s.next_u8() % 7) + 1;
        let gy = u32::from(s.next_u8() % 7) + 1;
        let offset = u32::from(s.next_u8());
        let blocks: Vec<u8> = (0..(side / 8) * (side / 8)).map(|_| s.next_u8() / 4).collect();
        let mut pixels = Vec::with_capacity((side * side) as usize);
        for y in 0..side {
            for x in 0..side {
                let block = blocks[((y / 8) * (side / 8) + x / 8) as usize] as u32;
                pixels.push(((x * gx + y * gy + offset + block) % 256) as u8);
            }
        }
        Self {
            width: side,
            height: side,
            pixels,
        }
    }

    /// Weighted blend `(a*wa + b*(4-wa)) / 4`, wa in 0..=4.
    pub fn blend(&self, other: &Raster, wa: u32) -> Raster {
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| ((u32::from(*a) * wa + u32::from(*b) * (4 - wa)) / 4) as u8)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Nearest-neighbour zoom on the centre of the raster, keeping its size.
    pub fn zoom_center(&self, factor: u32) -> Raster {
        let factor = factor.max(1);
        let (w, h) = (self.width, self.height);
        let (ox, oy) = (w / 2 - w / (2 * factor), h / 2 - h / (2 * factor));
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..h {
            for x in 0..w {
                pixels.push(self.get(ox + x / factor, oy + y / factor));
            }
        }
        Raster {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Binary edge map from Sobel gradient magnitude with hysteresis-free
    /// double threshold: strong edges 255, weak 128, rest 0.
    pub fn edge_map(&self, low: u32, high: u32) -> Raster {
        let (w, h) = (self.width as i64, self.height as i64);
        let at = |x: i64, y: i64| i64::from(self.get(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32));
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..h {
            for x in 0..w {
                let gx = at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)
                    - at(x - 1, y - 1)
                    - 2 * at(x - 1, y)
                    - at(x - 1, y + 1);
                let gy = at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)
                    - at(x - 1, y - 1)
                    - 2 * at(x, y - 1)
                    - at(x + 1, y - 1);
                let mag = ((gx.abs() + gy.abs()) / 4) as u32;
                pixels.push(if mag >= high {
                    255
                } else if mag >= low {
                    128
                } else {
                    0
                });
            }
        }
        Raster {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn encode_pgm(&self, salt: &str) -> Vec<u8> {
        let mut out = format!("P5\n# reeltree {salt}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Option<Raster> {
        let mut fields = Vec::with_capacity(4);
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return None;
            }
            fields.push(std::str::from_utf8(&bytes[start..i]).ok()?.to_owned());
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return None;
        }
        let width: u32 = fields[1].parse().ok()?;
        let height: u32 = fields[2].parse().ok()?;
        let data = bytes.get(i + 1..)?;
        if data.len() != (width * height) as usize {
            return None;
        }
        Some(Raster {
            width,
            height,
            pixels: data.to_vec(),
        })
    }
}

/// Stand-in for a rendered video clip.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipDescriptor {
    pub format: String,
    pub duration_ms: u64,
    pub fps: u32,
    pub first_frame_asset: Option<AssetId>,
    pub last_frame_asset: Option<AssetId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_clips: Vec<AssetId>,
    pub prompt_digest: String,
    pub salt: String,
    pub checksum: String,
}

impl ClipDescriptor {
    pub fn seal(mut self) -> Self {
        self.checksum = String::new();
        let body = serde_json::to_vec(&self).expect("descriptor serializes");
        self.checksum = hex::encode(Sha256::digest(&body));
        self
    }

    pub fn verify(&self) -> bool {
        self.clone().seal().checksum == self.checksum
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("descriptor serializes");
        v.push(b'\n');
        v
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
}

/// 8-bit unsigned mono PCM WAV holding a triangle tone with a short fade.
/// `salt` is written to a trailing `LIST/INFO` comment chunk.
pub fn tone_wav(seed: [u8; 32], duration_ms: u64, salt: &str) -> Vec<u8> {
    let mut s = SeedStream::new(seed);
    let freq = 180 + s.next_u32() % 480;
    let n = (u64::from(MOCK_AUDIO_RATE) * duration_ms / 1000) as u32;
    let fade = (MOCK_AUDIO_RATE / 20).min(n / 2).max(1);
    let period = MOCK_AUDIO_RATE.max(1) * 1000 / freq;
    let mut samples = Vec::with_capacity(n as usize);
    for i in 0..n {
        // triangle in [-100, 100], period measured in thousandths of a sample
        let phase = (i * 1000) % period;
        let tri = if phase < period / 2 {
            (phase * 400 / period) as i32 - 100
        } else {
            300 - (phase * 400 / period) as i32
        };
        let env = i.min(n - 1 - i).min(fade) as i32;
        samples.push((128 + tri * env / fade as i32) as u8);
    }
    let mut comment = salt.as_bytes().to_vec();
    comment.push(0);
    if comment.len() % 2 == 1 {
        comment.push(0);
    }
    let mut list = b"INFOICMT".to_vec();
    list.extend_from_slice(&(comment.len() as u32).to_le_bytes());
    list.extend_from_slice(&comment);

    let data_len = samples.len() as u32;
    let data_padded = data_len + data_len % 2;
    let riff_len = 36 + data_padded + 8 + list.len() as u32;
    let mut out = Vec::with_capacity(riff_len as usize + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&MOCK_AUDIO_RATE.to_le_bytes());
    out.extend_from_slice(&MOCK_AUDIO_RATE.to_le_bytes()); // byte rate
    out.extend_from_slice(&1u16.to_le_bytes()); // block align
    out.extend_from_slice(&8u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out.extend_from_slice(&samples);
    if data_len % 2 == 1 {
        out.push(0);
    }
    out.extend_from_slice(b"LIST");
    out.extend_from_slice(&(list.len() as u32).to_le_bytes());
    out.extend_from_slice(&list);
    out
}

/// Duration of a WAV produced by [`tone_wav`].
pub fn wav_duration_ms(bytes: &[u8]) -> Option<u64> {
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[36..40] != b"data" {
        return None;
    }
    let rate = u32::from_le_bytes(bytes[24..28].try_into().ok()?);
    let len = u32::from_le_bytes(bytes[40..44].try_into().ok()?);
    Some(u64::from(len) * 1000 / u64::from(rate.max(1)))
}

/// Recognizes uploaded media by content: the mock formats above plus PNG,
/// JPEG and MP4 containers.
pub fn sniff(bytes: &[u8]) -> Option<(Modality, AssetMetadata)> {
    if let Some(r) = Raster::decode_pgm(bytes) {
        return Some((
            Modality::Image,
            AssetMetadata {
                format: "pgm".into(),
                width: Some(r.width),
                height: Some(r.height),
                ..AssetMetadata::default()
            },
        ));
    }
    if let Some(d) = wav_duration_ms(bytes) {
        return Some((
            Modality::Audio,
            AssetMetadata {
                format: "wav".into(),
                duration_ms: Some(d),
                ..AssetMetadata::default()
            },
        ));
    }
    if let Some(c) = ClipDescriptor::decode(bytes).filter(ClipDescriptor::verify) {
        return Some((
            Modality::Video,
            AssetMetadata {
                format: CLIP_FORMAT.into(),
                duration_ms: Some(c.duration_ms),
                anchors: c.first_frame_asset.into_iter().chain(c.last_frame_asset).collect(),
                ..AssetMetadata::default()
            },
        ));
    }
    if bytes.len() >= 24 && bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        let be = |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        return Some((
            Modality::Image,
            AssetMetadata {
                format: "png".into(),
                width: Some(be(16)),
                height: Some(be(20)),
                ..AssetMetadata::default()
            },
        ));
    }
    if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        return Some((
            Modality::Image,
            AssetMetadata {
                format: "jpeg".into(),
                ..AssetMetadata::default()
            },
        ));
    }
    if bytes.len() >= 12 && &bytes[4..8] == b"ftyp" {
        return Some((
            Modality::Video,
            AssetMetadata {
                format: "mp4".into(),
                ..AssetMetadata::default()
            },
        ));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip() {
        let r = Raster::pattern([3; 32]);
        let bytes = r.encode_pgm("salt");
        assert!(bytes.starts_with(b"P5\n# reeltree salt\n64 64\n255\n"));
        assert_eq!(Raster::decode_pgm(&bytes).unwrap(), r);
    }

    #[test]
    fn patterns_are_seed_dependent() {
        assert_eq!(Raster::pattern([1; 32]), Raster::pattern([1; 32]));
        assert_ne!(Raster::pattern([1; 32]), Raster::pattern([2; 32]));
    }

    #[test]
    fn edge_map_of_flat_image_is_empty() {
        let flat = Raster {
            width: 8,
            height: 8,
            pixels: vec![90; 64],
        };
        assert!(flat.edge_map(10, 20).pixels.iter().all(|p| *p == 0));
        let mut step = flat.clone();
        for y in 0..8 {
            for x in 4..8 {
                step.pixels[y * 8 + x] = 250;
            }
        }
        let e = step.edge_map(10, 20);
        assert_eq!(e.get(4, 3), 255);
        assert_eq!(e.get(0, 3), 0);
    }

    #[test]
    fn wav_has_requested_duration() {
        let w = tone_wav([5; 32], 2500, "n1");
        assert_eq!(wav_duration_ms(&w), Some(2500));
        assert_eq!(&w[44 + 10_000..44 + 10_004], b"LIST");
        assert_eq!(u32::from_le_bytes(w[4..8].try_into().unwrap()) as usize, w.len() - 8);
        assert_ne!(w, tone_wav([5; 32], 2500, "n2"));
    }

    #[test]
    fn clip_checksum() {
        let c = ClipDescriptor {
            format: CLIP_FORMAT.into(),
            duration_ms: 4000,
            fps: 24,
            first_frame_asset: None,
            last_frame_asset: None,
            motion: None,
            source_clips: vec![],
            prompt_digest: "x".into(),
            salt: "n".into(),
            checksum: String::new(),
        }
        .seal();
        assert!(c.verify());
        assert_eq!(ClipDescriptor::decode(&c.encode()).unwrap(), c);
        let mut tampered = c.clone();
        tampered.fps = 30;
        assert!(!tampered.verify());
    }
}
