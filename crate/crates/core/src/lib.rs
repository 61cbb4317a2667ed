//! Non-parametric speech-based symptom assessment.
//!
//! Assessment data never enters model parameters: pooled self-supervised
//! speech features are kept as keys in exact L2 [`datastore::Datastore`]s
//! whose values are labels and speaker metadata. A query utterance is scored
//! by retrieving neighbours at segment level (k-means clusters of its frames)
//! and utterance level (the whole-utterance mean, against original and
//! time-reversed stores), optionally refining by metadata, and taking the
//! proportion of symptomatic labels. Scores are averaged over model layers.
//!
//! Removing a sample from the stores removes its influence entirely; there is
//! nothing to retrain.

pub mod datastore;
pub mod evaluation;
pub mod inference;
pub mod ingest;
pub mod segmentation;
pub mod synthetic;

pub use datastore::{Datastore, DatastoreSet, PooledVector, SearchHit};
pub use inference::{assess, assess_batch, AssessmentResult, InferenceConfig, Refinement};
pub use ingest::{
    AgeGroup, Channel, FeatureKey, FeatureSequence, Label, SampleRecord, Sex, Split,
};

/// Version of the binary feature-file layout written by [`ingest::write_feature_file`].
pub const FEATURE_FILE_VERSION: u32 = 1;
/// Version of the datastore snapshot layout written by [`datastore::write_snapshot`].
pub const SNAPSHOT_VERSION: u32 = 1;
