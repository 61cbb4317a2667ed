use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{InferenceError, Result};
use crate::datastore::SearchHit;
use crate::ingest::{AgeGroup, Channel, FeatureKey, SampleRecord, Sex};

/// Metadata-aware refinement of utterance-level neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Refinement {
    /// Keep every retrieved neighbour.
    #[serde(alias = "raw")]
    None,
    /// Keep neighbours in the query's age group.
    Age,
    /// Keep neighbours of the query's sex.
    Sex,
}

impl Refinement {
    pub fn as_str(self) -> &'static str {
        match self {
            Refinement::None => "raw",
            Refinement::Age => "age",
            Refinement::Sex => "sex",
        }
    }

    /// `Unknown` metadata only matches `Unknown`.
    pub fn accepts(self, query: &QueryMeta, hit: &SearchHit) -> bool {
        match self {
            Refinement::None => true,
            Refinement::Age => hit.age_group == query.age_group,
            Refinement::Sex => hit.sex == query.sex,
        }
    }
}

impl std::str::FromStr for Refinement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "raw" => Ok(Refinement::None),
            "age" => Ok(Refinement::Age),
            "sex" => Ok(Refinement::Sex),
            other => Err(format!("unknown refinement {other:?} (expected raw, age or sex)")),
        }
    }
}

/// Metadata of the sample being assessed, used by refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryMeta {
    pub age_group: AgeGroup,
    pub sex: Sex,
}

impl From<&SampleRecord> for QueryMeta {
    fn from(r: &SampleRecord) -> Self {
        Self {
            age_group: r.age_group,
            sex: r.sex,
        }
    }
}

/// Which retrieval paths contribute labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RetrievalPaths {
    pub segment: bool,
    pub utterance: bool,
    pub utterance_reversed: bool,
}

impl RetrievalPaths {
    pub const ALL: Self = Self {
        segment: true,
        utterance: true,
        utterance_reversed: true,
    };
    pub const SEGMENT_ONLY: Self = Self {
        segment: true,
        utterance: false,
        utterance_reversed: false,
    };
    pub const UTTERANCE_ONLY: Self = Self {
        segment: false,
        utterance: true,
        utterance_reversed: false,
    };
    pub const UTTERANCE_REVERSED_ONLY: Self = Self {
        segment: false,
        utterance: false,
        utterance_reversed: true,
    };

    pub fn any(self) -> bool {
        self.segment || self.utterance || self.utterance_reversed
    }

    pub fn name(self) -> String {
        match self {
            Self::ALL => "all".into(),
            Self::SEGMENT_ONLY => "seg".into(),
            Self::UTTERANCE_ONLY => "utt".into(),
            Self::UTTERANCE_REVERSED_ONLY => "utt-rev".into(),
            _ => {
                let parts: Vec<&str> = [
                    (self.segment, "seg"),
                    (self.utterance, "utt"),
                    (self.utterance_reversed, "utt-rev"),
                ]
                .into_iter()
                .filter_map(|(on, name)| on.then_some(name))
                .collect();
                parts.join("+")
            }
        }
    }
}

impl std::str::FromStr for RetrievalPaths {
    type Err = String;

    /// `all`, or a `+`/`,`-separated subset of `seg`, `utt`, `utt-rev`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Self::ALL);
        }
        let mut paths = Self {
            segment: false,
            utterance: false,
            utterance_reversed: false,
        };
        for part in s.split(['+', ',']) {
            match part.trim() {
                "seg" => paths.segment = true,
                "utt" => paths.utterance = true,
                "utt-rev" => paths.utterance_reversed = true,
                other => return Err(format!("unknown retrieval path {other:?} (expected seg, utt, utt-rev or all)")),
            }
        }
        Ok(paths)
    }
}

/// How labels from the enabled paths become a layer score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelCombination {
    /// Proportion of positives among all retrieved labels, pooled across paths.
    Pooled,
    /// Mean of the per-path proportions over paths that returned labels.
    MeanOfPaths,
}

impl LabelCombination {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelCombination::Pooled => "pooled",
            LabelCombination::MeanOfPaths => "mean-of-paths",
        }
    }
}

impl std::str::FromStr for LabelCombination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(LabelCombination::Pooled),
            "mean-of-paths" => Ok(LabelCombination::MeanOfPaths),
            other => Err(format!("unknown label combination {other:?} (expected pooled or mean-of-paths)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub layers: Vec<u32>,
    /// Segment count per layer. Utterance-level retrieval fetches `n * k` neighbours.
    pub n_per_layer: BTreeMap<u32, usize>,
    pub k: usize,
    pub refinement: Refinement,
    pub paths: RetrievalPaths,
    pub threshold: f64,
    /// Ignore the query's own entry if it is present in a store.
    pub exclude_self: bool,
    pub combination: LabelCombination,
    /// Root seed for per-sample k-means seeds.
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 17;

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            layers: vec![3, 4, 5],
            n_per_layer: [(3, 2), (4, 2), (5, 2)].into_iter().collect(),
            k: 5,
            refinement: Refinement::None,
            paths: RetrievalPaths::ALL,
            threshold: 0.5,
            exclude_self: false,
            combination: LabelCombination::Pooled,
            seed: DEFAULT_SEED,
        }
    }
}

impl InferenceConfig {
    /// Read-speech corpus setting: n = 2/73/73 on layers 3/4/5, age refinement.
    pub fn read_speech() -> Self {
        Self {
            n_per_layer: [(3, 2), (4, 73), (5, 73)].into_iter().collect(),
            refinement: Refinement::Age,
            ..Self::default()
        }
    }

    /// Counting corpus setting: n = 2 on every layer, no refinement.
    pub fn counting_speech() -> Self {
        Self::default()
    }

    pub fn with_uniform_n(mut self, n: usize) -> Self {
        self.n_per_layer = self.layers.iter().map(|&l| (l, n)).collect();
        self
    }

    pub fn n_for(&self, layer: u32) -> Result<usize> {
        self.n_per_layer
            .get(&layer)
            .copied()
            .ok_or_else(|| InferenceError::InvalidConfig(format!("no segment count configured for layer {layer}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(InferenceError::InvalidConfig(msg));
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        if !self.paths.any() {
            return bad("at least one retrieval path must be enabled".into());
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        for &layer in &self.layers {
            if self.n_for(layer)? == 0 {
                return bad(format!("segment count for layer {layer} must be positive"));
            }
        }
        Ok(())
    }

    /// Feature streams a sample must provide under this configuration.
    pub fn required_features(&self) -> Vec<FeatureKey> {
        let mut keys = Vec::new();
        for &layer in &self.layers {
            if self.paths.segment || self.paths.utterance {
                keys.push(FeatureKey::new(layer, Channel::Original));
            }
            if self.paths.utterance_reversed {
                keys.push(FeatureKey::new(layer, Channel::Reversed));
            }
        }
        keys
    }
}
