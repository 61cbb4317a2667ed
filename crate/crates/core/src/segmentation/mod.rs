//! Segment-level features.
//!
//! An utterance's frames are clustered with k-means (clusters need not be
//! contiguous in time) and each cluster's mean becomes one segment query.
//! The dataset-wide segment count is picked by mean silhouette score.

mod kmeans;
mod silhouette;

use rayon::prelude::*;
use thiserror::Error;

use crate::datastore::{mean_of_frames, PooledVector};
use crate::ingest::FeatureSequence;

pub use kmeans::{kmeans, kmeans_with, ClusterAssignment, KMeansOptions};
pub use silhouette::{assignment_silhouette, mean_silhouette};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("cannot form {clusters} clusters from {frames} frames")]
    TooFewFrames { frames: usize, clusters: usize },
    #[error("number of clusters must be at least 1")]
    ZeroClusters,
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("{labels} labels given for {frames} frames")]
    LabelCount { frames: usize, labels: usize },
    #[error("label {label} out of range for {n_clusters} clusters")]
    LabelOutOfRange { label: usize, n_clusters: usize },
    #[error("frame buffer of length {len} does not hold whole rows of D={dim}")]
    BadFrameShape { len: usize, dim: usize },
    #[error("candidate segment counts must be non-empty and each >= 2 (got {0:?})")]
    InvalidCandidates(Vec<usize>),
    #[error("no candidate could be evaluated: every sequence is shorter than every candidate")]
    NoValidCandidate,
}

pub type Result<T, E = SegmentationError> = std::result::Result<T, E>;

/// Borrowed row-major `T x D` frame matrix.
#[derive(Debug, Clone, Copy)]
pub struct Frames<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> Frames<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(SegmentationError::BadFrameShape { len: data.len(), dim });
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &'a [f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'a, f32> {
        self.data.chunks_exact(self.dim)
    }
}

impl<'a> From<&'a FeatureSequence> for Frames<'a> {
    fn from(seq: &'a FeatureSequence) -> Self {
        Frames {
            data: seq.frames(),
            dim: seq.dim(),
        }
    }
}

/// Per-sample k-means seed: SplitMix64 finaliser applied to
/// `root XOR fnv1a64(sample_id)`. Stable across platforms and releases.
pub fn derive_seed(root: u64, sample_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in sample_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Segment means of one sequence together with the clustering that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// One mean vector per cluster, ordered by cluster index.
    pub vectors: Vec<PooledVector>,
    /// Number of frames in each cluster.
    pub sizes: Vec<usize>,
    pub assignment: ClusterAssignment,
}

pub fn segment(seq: &FeatureSequence, n: usize, seed: u64) -> Result<Segmentation> {
    let frames = Frames::from(seq);
    let assignment = kmeans(frames, n, seed)?;
    let mut members: Vec<Vec<&[f32]>> = vec![Vec::new(); n];
    for (row, &c) in frames.rows().zip(&assignment.assignments) {
        members[c].push(row);
    }
    let sizes = members.iter().map(Vec::len).collect();
    let vectors = members
        .into_iter()
        .map(|rows| {
            PooledVector::new(mean_of_frames(seq.dim(), rows)).expect("mean of finite frames is finite")
        })
        .collect();
    Ok(Segmentation { vectors, sizes, assignment })
}

/// Segment-level query vectors: the mean of each k-means cluster of frames.
pub fn segment_features(seq: &FeatureSequence, n: usize, seed: u64) -> Result<Vec<PooledVector>> {
    Ok(segment(seq, n, seed)?.vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub n: usize,
    /// Mean over evaluated sequences of their mean silhouette; `None` if all were skipped.
    pub mean_silhouette: Option<f64>,
    pub sequences_evaluated: usize,
    pub sequences_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCountSelection {
    pub candidates: Vec<CandidateScore>,
    pub selected_n: usize,
}

/// `2..=min(100, shortest)`; empty when the shortest sequence has fewer than two frames.
pub fn default_candidates(sequences: &[FeatureSequence]) -> Vec<usize> {
    let t_min = sequences.iter().map(FeatureSequence::num_frames).min().unwrap_or(0);
    (2..=t_min.min(100)).collect()
}

/// Picks the dataset-wide segment count maximising the average (over
/// sequences) of per-sequence mean silhouette. Ties go to the smallest n.
/// Sequences shorter than a candidate are skipped for that candidate.
pub fn select_n(sequences: &[FeatureSequence], candidates: &[usize], seed: u64) -> Result<SegmentCountSelection> {
    if candidates.is_empty() || candidates.iter().any(|&n| n < 2) {
        return Err(SegmentationError::InvalidCandidates(candidates.to_vec()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut scores = Vec::with_capacity(sorted.len());
    for &n in &sorted {
        let per_seq: Vec<Option<f64>> = sequences
            .par_iter()
            .map(|seq| {
                if seq.num_frames() < n {
                    return Ok(None);
                }
                let frames = Frames::from(seq);
                let a = kmeans(frames, n, derive_seed(seed, seq.sample_id()))?;
                assignment_silhouette(frames, &a).map(Some)
            })
            .collect::<Result<_>>()?;
        let evaluated: Vec<f64> = per_seq.iter().flatten().copied().collect();
        scores.push(CandidateScore {
            n,
            mean_silhouette: (!evaluated.is_empty()).then(|| evaluated.iter().sum::<f64>() / evaluated.len() as f64),
            sequences_evaluated: evaluated.len(),
            sequences_skipped: per_seq.len() - evaluated.len(),
        });
    }

    let selected_n = scores
        .iter()
        .filter_map(|c| c.mean_silhouette.map(|s| (c.n, s)))
        .fold(None::<(usize, f64)>, |best, (n, s)| match best {
            Some((_, bs)) if s <= bs => best,
            _ => Some((n, s)),
        })
        .map(|(n, _)| n)
        .ok_or(SegmentationError::NoValidCandidate)?;

    Ok(SegmentCountSelection { candidates: scores, selected_n })
}
