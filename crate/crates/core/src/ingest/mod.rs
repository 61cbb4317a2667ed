//! On-disk feature files and sample manifests.
//!
//! Feature files carry one `T x D` matrix of frame-level activations for a
//! single (sample, layer, channel). Manifests are JSON lines describing each
//! sample's label, metadata and where its feature files live.

mod features;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{read_feature_file, read_feature_bytes, write_feature_file, encode_feature_file, FeatureSequence, FEATURE_HEADER_LEN, FEATURE_MAGIC};
pub use manifest::{load_features, load_manifest, parse_manifest, write_manifest, SampleRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: I/O failure: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at offset {offset}: expected \"NPSA\", found {found:?}")]
    BadMagic { offset: u64, found: [u8; 4] },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: u64, version: u32 },
    #[error("file truncated: needed {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },
    #[error("{extra} trailing bytes after payload ending at offset {offset}")]
    TrailingData { offset: u64, extra: u64 },
    #[error("invalid header field `{field}` at offset {offset}: {value}")]
    InvalidHeader {
        field: &'static str,
        offset: u64,
        value: u64,
    },
    #[error("non-finite value {value} at offset {offset}")]
    NonFiniteValue { offset: u64, value: f32 },
    #[error("non-finite value {value} at frame {row}, column {col}")]
    NonFiniteFrame { row: usize, col: usize, value: f32 },
    #[error("feature sequence must have T >= 1 and D >= 1 (got T={frames}, D={dim})")]
    EmptySequence { frames: usize, dim: usize },
    #[error("frame buffer of length {len} is not a multiple of D={dim}")]
    RaggedFrames { len: usize, dim: usize },
    #[error("{path}: header says {found} but manifest expects {expected}")]
    HeaderMismatch {
        path: PathBuf,
        expected: FeatureKey,
        found: FeatureKey,
    },
    #[error("sample {sample_id} has no feature file for {key}")]
    MissingFeature { sample_id: String, key: FeatureKey },
    #[error("manifest line {line}: malformed JSON: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("manifest line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("manifest line {line}: unknown value {value:?} for `{field}`")]
    UnknownEnumValue {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("manifest line {line}: duplicate sample_id {sample_id:?} (first seen on line {first_line})")]
    DuplicateId {
        line: usize,
        first_line: usize,
        sample_id: String,
    },
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// Waveform direction the features were extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Original,
    Reversed,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Original, Channel::Reversed];

    pub fn code(self) -> u8 {
        match self {
            Channel::Original => 0,
            Channel::Reversed => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channel::Original),
            1 => Some(Channel::Reversed),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Original => "original",
            Channel::Reversed => "reversed",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Channel::Original),
            "reversed" => Ok(Channel::Reversed),
            other => Err(format!("unknown channel {other:?}")),
        }
    }
}

/// Binary assessment label. Symptomatic is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Asymptomatic,
    Symptomatic,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Asymptomatic => 0,
            Label::Symptomatic => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Asymptomatic),
            1 => Some(Label::Symptomatic),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Symptomatic
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        Label::from_code(code).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {code}")))
    }
}

/// Speaker age bucket. Missing age is its own group, not a wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "le39")]
    Le39,
    #[serde(rename = "40to59")]
    F40to59,
    #[serde(rename = "ge60")]
    Ge60,
    #[serde(rename = "unknown")]
    Unknown,
}

impl AgeGroup {
    pub fn code(self) -> u8 {
        match self {
            AgeGroup::Le39 => 0,
            AgeGroup::F40to59 => 1,
            AgeGroup::Ge60 => 2,
            AgeGroup::Unknown => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AgeGroup::Le39),
            1 => Some(AgeGroup::F40to59),
            2 => Some(AgeGroup::Ge60),
            3 => Some(AgeGroup::Unknown),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeGroup::Le39 => "le39",
            AgeGroup::F40to59 => "40to59",
            AgeGroup::Ge60 => "ge60",
            AgeGroup::Unknown => "unknown",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [AgeGroup::Le39, AgeGroup::F40to59, AgeGroup::Ge60, AgeGroup::Unknown]
            .into_iter()
            .find(|g| g.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl Sex {
    pub fn code(self) -> u8 {
        match self {
            Sex::Male => 0,
            Sex::Female => 1,
            Sex::Unknown => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Sex::Male),
            1 => Some(Sex::Female),
            2 => Some(Sex::Unknown),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "unknown",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Sex::Male, Sex::Female, Sex::Unknown].into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Identifies one feature stream of a sample: model layer plus waveform direction.
///
/// Rendered as `"<layer>/<channel>"`, e.g. `3/original`, in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureKey {
    pub layer: u32,
    pub channel: Channel,
}

impl FeatureKey {
    pub fn new(layer: u32, channel: Channel) -> Self {
        Self { layer, channel }
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.layer, self.channel)
    }
}

impl FromStr for FeatureKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (layer, channel) = s
            .split_once('/')
            .ok_or_else(|| format!("feature key {s:?} is not of the form <layer>/<channel>"))?;
        let layer = layer
            .parse::<u32>()
            .map_err(|_| format!("feature key {s:?} has a non-integer layer"))?;
        Ok(FeatureKey::new(layer, channel.parse()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_key_text_form() {
        let key: FeatureKey = "4/reversed".parse().unwrap();
        assert_eq!(key, FeatureKey::new(4, Channel::Reversed));
        assert_eq!(key.to_string(), "4/reversed");
        assert!("x/original".parse::<FeatureKey>().is_err());
        assert!("3/forward".parse::<FeatureKey>().is_err());
        assert!("3".parse::<FeatureKey>().is_err());
    }

    #[test]
    fn enum_codes_round_trip() {
        for g in [AgeGroup::Le39, AgeGroup::F40to59, AgeGroup::Ge60, AgeGroup::Unknown] {
            assert_eq!(AgeGroup::from_code(g.code()), Some(g));
            assert_eq!(AgeGroup::parse(g.as_str()), Some(g));
        }
        for s in [Sex::Male, Sex::Female, Sex::Unknown] {
            assert_eq!(Sex::from_code(s.code()), Some(s));
        }
        assert_eq!(Label::from_code(2), None);
        assert_eq!(Channel::from_code(7), None);
    }
}
