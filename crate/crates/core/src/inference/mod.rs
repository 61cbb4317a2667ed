//! Retrieval-based assessment of one sample.
//!
//! Per layer, labels are gathered from up to three paths:
//!
//! * segment level: `n` k-means segment means, `k` neighbours each, from the
//!   original-channel store, never refined;
//! * utterance level: the temporal mean, `n * k` neighbours from the
//!   original-channel store, then metadata refinement;
//! * reversed utterance level: the same against the reversed-channel store.
//!
//! The layer score is the fraction of symptomatic labels; the final score is
//! the mean over layers and the decision is `final_score > threshold`.

mod config;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::datastore::{temporal_mean, Datastore, DatastoreError, DatastoreSet, SearchHit};
use crate::ingest::{load_features, Channel, FeatureKey, FeatureSequence, IngestError, Label, SampleRecord};
use crate::segmentation::{derive_seed, segment_features, SegmentationError};

pub use config::{InferenceConfig, LabelCombination, QueryMeta, Refinement, RetrievalPaths, DEFAULT_SEED};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no datastore loaded for {0}")]
    MissingDatastore(FeatureKey),
    #[error("datastore {0} is empty")]
    EmptyDatastore(FeatureKey),
    #[error("sample {sample_id} has no features for {key}")]
    MissingFeatures { sample_id: String, key: FeatureKey },
    #[error("sample {sample_id}: no labels retrieved for layer {layer} after refinement")]
    NoLabelsRetrieved { sample_id: String, layer: u32 },
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T, E = InferenceError> = std::result::Result<T, E>;

pub fn labels_of(hits: &[SearchHit]) -> Vec<Label> {
    hits.iter().map(|h| h.label).collect()
}

fn non_empty(ds: &Datastore) -> Result<()> {
    if ds.is_empty() {
        Err(InferenceError::EmptyDatastore(ds.feature_key()))
    } else {
        Ok(())
    }
}

/// Segment-level retrieval: `k` unfiltered neighbours for each of the `n`
/// segment means, concatenated in segment order.
pub fn segment_level_hits(
    seq: &FeatureSequence,
    ds: &Datastore,
    n: usize,
    k: usize,
    seed: u64,
    exclude: Option<&str>,
) -> Result<Vec<SearchHit>> {
    non_empty(ds)?;
    let mut hits = Vec::with_capacity(n * k);
    for query in segment_features(seq, n, seed)? {
        hits.extend(ds.search_excluding(&query, k, exclude)?);
    }
    Ok(hits)
}

/// Refined utterance-level neighbours from the original and reversed stores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UtteranceHits {
    pub original: Vec<SearchHit>,
    pub reversed: Vec<SearchHit>,
}

fn utterance_hits_one(
    seq: &FeatureSequence,
    ds: &Datastore,
    count: usize,
    refinement: Refinement,
    meta: &QueryMeta,
    exclude: Option<&str>,
) -> Result<Vec<SearchHit>> {
    non_empty(ds)?;
    let query = temporal_mean(seq);
    let found = ds.search_filtered_excluding(&query, count, exclude, |h| refinement.accepts(meta, h))?;
    Ok(found.hits)
}

/// Utterance-level retrieval: top-`n * k` by temporal mean from each supplied
/// (sequence, store) pair, then post-filtered by `refinement`. A path whose
/// input is `None` contributes nothing.
#[allow(clippy::too_many_arguments)]
pub fn utterance_level_hits(
    original: Option<(&FeatureSequence, &Datastore)>,
    reversed: Option<(&FeatureSequence, &Datastore)>,
    n: usize,
    k: usize,
    refinement: Refinement,
    meta: &QueryMeta,
    exclude: Option<&str>,
) -> Result<UtteranceHits> {
    let count = n * k;
    let mut out = UtteranceHits::default();
    if let Some((seq, ds)) = original {
        out.original = utterance_hits_one(seq, ds, count, refinement, meta, exclude)?;
    }
    if let Some((seq, ds)) = reversed {
        out.reversed = utterance_hits_one(seq, ds, count, refinement, meta, exclude)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScore {
    pub layer: u32,
    pub labels_seg: Vec<Label>,
    pub labels_utt: Vec<Label>,
    pub labels_utt_rev: Vec<Label>,
    /// Symptomatic labels across the enabled paths.
    pub positives: usize,
    /// All labels across the enabled paths.
    pub total: usize,
    pub score: f64,
}

fn count_positive(labels: &[Label]) -> usize {
    labels.iter().filter(|l| l.is_positive()).count()
}

impl LayerScore {
    fn compute(
        layer: u32,
        labels_seg: Vec<Label>,
        labels_utt: Vec<Label>,
        labels_utt_rev: Vec<Label>,
        combination: LabelCombination,
    ) -> Option<Self> {
        let groups = [&labels_seg, &labels_utt, &labels_utt_rev];
        let positives: usize = groups.iter().map(|g| count_positive(g)).sum();
        let total: usize = groups.iter().map(|g| g.len()).sum();
        if total == 0 {
            return None;
        }
        let score = match combination {
            LabelCombination::Pooled => positives as f64 / total as f64,
            LabelCombination::MeanOfPaths => {
                let rates: Vec<f64> = groups
                    .iter()
                    .filter(|g| !g.is_empty())
                    .map(|g| count_positive(g) as f64 / g.len() as f64)
                    .collect();
                rates.iter().sum::<f64>() / rates.len() as f64
            }
        };
        Some(Self {
            layer,
            labels_seg,
            labels_utt,
            labels_utt_rev,
            positives,
            total,
            score,
        })
    }
}

/// Neighbours behind one layer's score, per path.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProvenance {
    pub layer: u32,
    pub segment: Vec<SearchHit>,
    pub utterance: Vec<SearchHit>,
    pub utterance_reversed: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentResult {
    pub sample_id: String,
    pub layer_scores: Vec<LayerScore>,
    pub final_score: f64,
    pub decision: Label,
    pub provenance: Vec<LayerProvenance>,
}

fn hits_json(hits: &[SearchHit]) -> Value {
    Value::Array(
        hits.iter()
            .map(|h| json!({ "id": h.sample_id, "sq_l2": h.squared_l2_distance, "label": h.label.code() }))
            .collect(),
    )
}

impl AssessmentResult {
    /// JSON object for the `assess` output: scores always, neighbours on request.
    pub fn to_json(&self, with_provenance: bool) -> Value {
        let layers: serde_json::Map<String, Value> = self
            .layer_scores
            .iter()
            .map(|l| (l.layer.to_string(), json!(l.score)))
            .collect();
        let mut obj = json!({
            "sample_id": self.sample_id,
            "layer_scores": layers,
            "final_score": self.final_score,
            "decision": self.decision.code(),
        });
        if with_provenance {
            let prov: serde_json::Map<String, Value> = self
                .provenance
                .iter()
                .map(|p| {
                    (
                        p.layer.to_string(),
                        json!({
                            "seg": hits_json(&p.segment),
                            "utt": hits_json(&p.utterance),
                            "utt_rev": hits_json(&p.utterance_reversed),
                        }),
                    )
                })
                .collect();
            obj["provenance"] = Value::Object(prov);
        }
        obj
    }

    pub fn all_neighbour_ids(&self) -> impl Iterator<Item = &str> {
        self.provenance.iter().flat_map(|p| {
            p.segment
                .iter()
                .chain(&p.utterance)
                .chain(&p.utterance_reversed)
                .map(|h| h.sample_id.as_str())
        })
    }
}

/// Feature streams of one sample keyed by (layer, channel).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleFeatures {
    streams: BTreeMap<FeatureKey, FeatureSequence>,
}

impl SampleFeatures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, seq: FeatureSequence) {
        self.streams.insert(seq.key(), seq);
    }

    pub fn get(&self, key: FeatureKey) -> Option<&FeatureSequence> {
        self.streams.get(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = FeatureKey> + '_ {
        self.streams.keys().copied()
    }

    /// Reads the streams `config` needs from the files listed in `record`.
    pub fn load(record: &SampleRecord, config: &InferenceConfig) -> Result<Self, IngestError> {
        let mut out = Self::new();
        for key in config.required_features() {
            out.insert(load_features(record, key)?);
        }
        Ok(out)
    }
}

impl FromIterator<FeatureSequence> for SampleFeatures {
    fn from_iter<I: IntoIterator<Item = FeatureSequence>>(iter: I) -> Self {
        let mut out = Self::new();
        for seq in iter {
            out.insert(seq);
        }
        out
    }
}

fn store(stores: &DatastoreSet, key: FeatureKey) -> Result<&Datastore> {
    stores
        .get(key)
        .map(|a| a.as_ref())
        .ok_or(InferenceError::MissingDatastore(key))
}

/// Scores one sample against the stores under `config`.
pub fn assess(
    record: &SampleRecord,
    features: &SampleFeatures,
    stores: &DatastoreSet,
    config: &InferenceConfig,
) -> Result<AssessmentResult> {
    config.validate()?;
    let sample_id = record.sample_id.as_str();
    let meta = QueryMeta::from(record);
    let exclude = config.exclude_self.then_some(sample_id);
    let seed = derive_seed(config.seed, sample_id);
    let feature = |key: FeatureKey| {
        features.get(key).ok_or_else(|| InferenceError::MissingFeatures {
            sample_id: sample_id.to_owned(),
            key,
        })
    };

    let mut layer_scores = Vec::with_capacity(config.layers.len());
    let mut provenance = Vec::with_capacity(config.layers.len());
    for &layer in &config.layers {
        let n = config.n_for(layer)?;
        let orig_key = FeatureKey::new(layer, Channel::Original);
        let rev_key = FeatureKey::new(layer, Channel::Reversed);

        let segment = if config.paths.segment {
            segment_level_hits(feature(orig_key)?, store(stores, orig_key)?, n, config.k, seed, exclude)?
        } else {
            Vec::new()
        };
        let original = if config.paths.utterance {
            Some((feature(orig_key)?, store(stores, orig_key)?))
        } else {
            None
        };
        let reversed = if config.paths.utterance_reversed {
            Some((feature(rev_key)?, store(stores, rev_key)?))
        } else {
            None
        };
        let utt = utterance_level_hits(original, reversed, n, config.k, config.refinement, &meta, exclude)?;

        let score = LayerScore::compute(
            layer,
            labels_of(&segment),
            labels_of(&utt.original),
            labels_of(&utt.reversed),
            config.combination,
        )
        .ok_or_else(|| InferenceError::NoLabelsRetrieved {
            sample_id: sample_id.to_owned(),
            layer,
        })?;
        layer_scores.push(score);
        provenance.push(LayerProvenance {
            layer,
            segment,
            utterance: utt.original,
            utterance_reversed: utt.reversed,
        });
    }

    let final_score = layer_scores.iter().map(|l| l.score).sum::<f64>() / layer_scores.len() as f64;
    let decision = if final_score > config.threshold {
        Label::Symptomatic
    } else {
        Label::Asymptomatic
    };
    Ok(AssessmentResult {
        sample_id: sample_id.to_owned(),
        layer_scores,
        final_score,
        decision,
        provenance,
    })
}

#[derive(Debug)]
pub struct SampleFailure {
    /// Position of the sample in the batch input.
    pub index: usize,
    pub sample_id: String,
    pub error: InferenceError,
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    /// Successful assessments in input order.
    pub results: Vec<AssessmentResult>,
    /// Failed samples in input order.
    pub failures: Vec<SampleFailure>,
}

/// Assesses every record, loading features with `load`. Runs in parallel on
/// the current rayon pool; output order and content do not depend on it.
pub fn assess_batch_with<F>(records: &[SampleRecord], stores: &DatastoreSet, config: &InferenceConfig, load: F) -> Result<BatchOutcome>
where
    F: Fn(&SampleRecord) -> Result<SampleFeatures> + Sync,
{
    config.validate()?;
    let outcomes: Vec<Result<AssessmentResult>> = records
        .par_iter()
        .map(|r| load(r).and_then(|f| assess(r, &f, stores, config)))
        .collect();
    let mut batch = BatchOutcome::default();
    for (index, (outcome, record)) in outcomes.into_iter().zip(records).enumerate() {
        match outcome {
            Ok(res) => batch.results.push(res),
            Err(error) => batch.failures.push(SampleFailure {
                index,
                sample_id: record.sample_id.clone(),
                error,
            }),
        }
    }
    Ok(batch)
}

/// [`assess_batch_with`] reading features from the files named in each record.
pub fn assess_batch(records: &[SampleRecord], stores: &DatastoreSet, config: &InferenceConfig) -> Result<BatchOutcome> {
    assess_batch_with(records, stores, config, |r| Ok(SampleFeatures::load(r, config)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::PooledVector;
    use crate::ingest::{AgeGroup, Sex, Split};

    fn record(id: &str, age: AgeGroup, sex: Sex) -> SampleRecord {
        SampleRecord::new(id, Label::Asymptomatic, age, sex, Split::Test)
    }

    fn constant_store(layer: u32, channel: Channel, labels: &[u8]) -> Datastore {
        let mut ds = Datastore::new(layer, channel);
        for (i, &l) in labels.iter().enumerate() {
            ds.insert(
                &format!("e{i}"),
                PooledVector::new(vec![i as f32, 0.0]).unwrap(),
                Label::from_code(l).unwrap(),
                AgeGroup::Unknown,
                Sex::Unknown,
            )
            .unwrap();
        }
        ds
    }

    fn features(id: &str, layers: &[u32]) -> SampleFeatures {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![2.0, 0.0], vec![0.5, 0.5]];
        layers
            .iter()
            .flat_map(|&l| {
                Channel::ALL.map(|c| FeatureSequence::from_rows(id, l, c, &rows).unwrap())
            })
            .collect()
    }

    fn stores(layers: &[u32], labels: &[u8]) -> DatastoreSet {
        let mut set = DatastoreSet::new();
        for &l in layers {
            for c in Channel::ALL {
                set.insert(constant_store(l, c, labels));
            }
        }
        set
    }

    #[test]
    fn all_positive_store_scores_one() {
        let set = stores(&[3, 4, 5], &[1; 12]);
        let r = record("q", AgeGroup::Unknown, Sex::Unknown);
        let res = assess(&r, &features("q", &[3, 4, 5]), &set, &InferenceConfig::default()).unwrap();
        assert_eq!(res.final_score, 1.0);
        assert_eq!(res.decision, Label::Symptomatic);
        for l in &res.layer_scores {
            assert_eq!(l.labels_seg.len(), 2 * 5);
            assert_eq!(l.labels_utt.len(), 10);
            assert_eq!(l.labels_utt_rev.len(), 10);
        }
    }

    #[test]
    fn half_score_is_not_symptomatic() {
        // Utterance path only, n*k = 4 neighbours: entries 0..4 -> labels 1,1,0,0.
        let set = stores(&[3], &[1, 1, 0, 0, 1, 1, 1]);
        let mut cfg = InferenceConfig::default();
        cfg.layers = vec![3];
        cfg.paths = RetrievalPaths::UTTERANCE_ONLY;
        cfg.n_per_layer = [(3, 1)].into_iter().collect();
        cfg.k = 4;
        let r = record("q", AgeGroup::Unknown, Sex::Unknown);
        let f: SampleFeatures = [FeatureSequence::from_rows("q", 3, Channel::Original, &[vec![1.5, 0.0]]).unwrap()]
            .into_iter()
            .collect();
        let res = assess(&r, &f, &set, &cfg).unwrap();
        assert_eq!(res.layer_scores[0].score, 0.5);
        assert_eq!(res.final_score, 0.5);
        assert_eq!(res.decision, Label::Asymptomatic);
    }

    #[test]
    fn refinement_filters_utterance_paths_only() {
        let mut ds = Datastore::new(3, Channel::Original);
        let meta = [
            (AgeGroup::Ge60, Sex::Male, 1),
            (AgeGroup::Le39, Sex::Female, 0),
            (AgeGroup::Ge60, Sex::Female, 0),
            (AgeGroup::Unknown, Sex::Male, 1),
        ];
        for (i, &(age, sex, label)) in meta.iter().enumerate() {
            ds.insert(&format!("e{i}"), PooledVector::new(vec![i as f32]).unwrap(), Label::from_code(label).unwrap(), age, sex)
                .unwrap();
        }
        let seq = FeatureSequence::from_rows("q", 3, Channel::Original, &[vec![0.0]]).unwrap();
        let q = QueryMeta { age_group: AgeGroup::Ge60, sex: Sex::Unknown };

        let age = utterance_level_hits(Some((&seq, &ds)), None, 1, 4, Refinement::Age, &q, None).unwrap();
        assert_eq!(age.original.iter().map(|h| h.sample_id.as_str()).collect::<Vec<_>>(), ["e0", "e2"]);
        assert!(age.reversed.is_empty());
        // Unknown matches only Unknown.
        let sex = utterance_level_hits(Some((&seq, &ds)), None, 1, 4, Refinement::Sex, &q, None).unwrap();
        assert!(sex.original.is_empty());
        let raw = utterance_level_hits(Some((&seq, &ds)), None, 1, 4, Refinement::None, &q, None).unwrap();
        assert_eq!(raw.original.len(), 4);
    }

    #[test]
    fn empty_after_refinement_is_reported() {
        let set = stores(&[3], &[1, 0, 1]);
        let mut cfg = InferenceConfig::default();
        cfg.layers = vec![3];
        cfg.paths = RetrievalPaths::UTTERANCE_ONLY;
        cfg.refinement = Refinement::Age;
        let r = record("q", AgeGroup::Le39, Sex::Male);
        let err = assess(&r, &features("q", &[3]), &set, &cfg).unwrap_err();
        assert!(matches!(err, InferenceError::NoLabelsRetrieved { layer: 3, .. }));
    }

    #[test]
    fn empty_or_missing_store() {
        let r = record("q", AgeGroup::Unknown, Sex::Unknown);
        let mut cfg = InferenceConfig::default();
        cfg.layers = vec![3];
        let set = stores(&[3], &[]);
        assert!(matches!(
            assess(&r, &features("q", &[3]), &set, &cfg),
            Err(InferenceError::EmptyDatastore(_))
        ));
        assert!(matches!(
            assess(&r, &features("q", &[3]), &DatastoreSet::new(), &cfg),
            Err(InferenceError::MissingDatastore(_))
        ));
        assert!(matches!(
            assess(&r, &SampleFeatures::new(), &stores(&[3], &[1]), &cfg),
            Err(InferenceError::MissingFeatures { .. })
        ));
    }

    #[test]
    fn mean_of_paths_differs_from_pooling() {
        let s = LayerScore::compute(
            3,
            vec![Label::Symptomatic; 4],
            vec![Label::Asymptomatic],
            vec![],
            LabelCombination::MeanOfPaths,
        )
        .unwrap();
        assert_eq!(s.score, 0.5);
        let p = LayerScore::compute(3, vec![Label::Symptomatic; 4], vec![Label::Asymptomatic], vec![], LabelCombination::Pooled)
            .unwrap();
        assert_eq!(p.score, 0.8);
        assert!(LayerScore::compute(3, vec![], vec![], vec![], LabelCombination::Pooled).is_none());
    }

    #[test]
    fn json_line_shape() {
        let set = stores(&[3], &[1, 0, 1, 1]);
        let mut cfg = InferenceConfig::default();
        cfg.layers = vec![3];
        let r = record("q", AgeGroup::Unknown, Sex::Unknown);
        let res = assess(&r, &features("q", &[3]), &set, &cfg).unwrap();
        let v = res.to_json(false);
        assert_eq!(v["sample_id"], "q");
        assert!(v["layer_scores"]["3"].is_f64());
        assert!(v.get("provenance").is_none());
        let v = res.to_json(true);
        assert!(v["provenance"]["3"]["seg"].is_array());
        assert!(v["provenance"]["3"]["utt_rev"][0]["id"].is_string());
    }

    #[test]
    fn empty_batch() {
        let out = assess_batch(&[], &DatastoreSet::new(), &InferenceConfig::default()).unwrap();
        assert!(out.results.is_empty() && out.failures.is_empty());
    }
}
