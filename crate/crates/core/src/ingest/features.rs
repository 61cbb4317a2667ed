use std::fs;
use std::path::Path;

use super::{Channel, FeatureKey, IngestError, Result};
use crate::FEATURE_FILE_VERSION;

pub const FEATURE_MAGIC: [u8; 4] = *b"NPSA";
/// magic(4) + version(4) + layer(4) + channel(1) + reserved(3) + T(4) + D(4)
pub const FEATURE_HEADER_LEN: usize = 24;

/// Frame-level activations of one model layer for one recording.
///
/// Frames are stored row-major: `frames[t * dim + j]`. A sequence always has
/// at least one frame, at least one column and only finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    sample_id: String,
    layer: u32,
    channel: Channel,
    frames: Vec<f32>,
    dim: usize,
}

impl FeatureSequence {
    pub fn new(
        sample_id: impl Into<String>,
        layer: u32,
        channel: Channel,
        frames: Vec<f32>,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 || frames.is_empty() {
            return Err(IngestError::EmptySequence {
                frames: if dim == 0 { 0 } else { frames.len() / dim },
                dim,
            });
        }
        if frames.len() % dim != 0 {
            return Err(IngestError::RaggedFrames { len: frames.len(), dim });
        }
        if let Some(pos) = frames.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFiniteFrame {
                row: pos / dim,
                col: pos % dim,
                value: frames[pos],
            });
        }
        Ok(Self {
            sample_id: sample_id.into(),
            layer,
            channel,
            frames,
            dim,
        })
    }

    /// Builds a sequence from per-frame rows; every row must have the same length.
    pub fn from_rows(
        sample_id: impl Into<String>,
        layer: u32,
        channel: Channel,
        rows: &[Vec<f32>],
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut frames = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(IngestError::RaggedFrames {
                    len: frames.len() + row.len(),
                    dim,
                });
            }
            frames.extend_from_slice(row);
        }
        Self::new(sample_id, layer, channel, frames, dim)
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn with_sample_id(mut self, sample_id: impl Into<String>) -> Self {
        self.sample_id = sample_id.into();
        self
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn key(&self) -> FeatureKey {
        FeatureKey::new(self.layer, self.channel)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.frames.chunks_exact(self.dim)
    }
}

/// Serializes a sequence into the feature-file byte layout.
pub fn encode_feature_file(seq: &FeatureSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + seq.frames.len() * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_FILE_VERSION.to_le_bytes());
    buf.extend_from_slice(&seq.layer.to_le_bytes());
    buf.push(seq.channel.code());
    buf.extend_from_slice(&[0u8; 3]);
    buf.extend_from_slice(&(seq.num_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    for v in &seq.frames {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_feature_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if seq.num_frames() > u32::MAX as usize || seq.dim > u32::MAX as usize {
        return Err(IngestError::InvalidHeader {
            field: "T",
            offset: 16,
            value: seq.num_frames() as u64,
        });
    }
    fs::write(path, encode_feature_file(seq)).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and validates a feature file. The sample id is taken from the file stem;
/// [`super::load_features`] replaces it with the manifest id.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_feature_bytes(&bytes, stem)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn read_feature_bytes(bytes: &[u8], sample_id: impl Into<String>) -> Result<FeatureSequence> {
    let actual = bytes.len() as u64;
    if bytes.len() < 4 {
        return Err(IngestError::TruncatedFile { expected: 4, actual });
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(IngestError::BadMagic {
            offset: 0,
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(IngestError::TruncatedFile {
            expected: FEATURE_HEADER_LEN as u64,
            actual,
        });
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_FILE_VERSION {
        return Err(IngestError::UnsupportedVersion { offset: 4, version });
    }
    let layer = u32_at(bytes, 8);
    let channel = Channel::from_code(bytes[12]).ok_or(IngestError::InvalidHeader {
        field: "channel",
        offset: 12,
        value: bytes[12] as u64,
    })?;
    if let Some(i) = bytes[13..16].iter().position(|&b| b != 0) {
        return Err(IngestError::InvalidHeader {
            field: "reserved",
            offset: 13 + i as u64,
            value: bytes[13 + i] as u64,
        });
    }
    let frames = u32_at(bytes, 16) as u64;
    let dim = u32_at(bytes, 20) as u64;
    if frames == 0 {
        return Err(IngestError::InvalidHeader { field: "T", offset: 16, value: 0 });
    }
    if dim == 0 {
        return Err(IngestError::InvalidHeader { field: "D", offset: 20, value: 0 });
    }
    let expected = FEATURE_HEADER_LEN as u64 + frames * dim * 4;
    if actual < expected {
        return Err(IngestError::TruncatedFile { expected, actual });
    }
    if actual > expected {
        return Err(IngestError::TrailingData {
            offset: expected,
            extra: actual - expected,
        });
    }

    let payload = &bytes[FEATURE_HEADER_LEN..];
    let mut values = Vec::with_capacity((frames * dim) as usize);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(IngestError::NonFiniteValue {
                offset: (FEATURE_HEADER_LEN + 4 * i) as u64,
                value: v,
            });
        }
        values.push(v);
    }
    FeatureSequence::new(sample_id, layer, channel, values, dim as usize)
}
