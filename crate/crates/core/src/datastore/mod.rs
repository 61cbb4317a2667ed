//! Exact L2 key-value retrieval store.
//!
//! Keys are temporally pooled feature vectors; values are the label and
//! speaker metadata of the sample they came from. Search is an exhaustive
//! scan returning the `k` smallest *squared* L2 distances (ranking is the same
//! as for L2). Ties are broken by insertion rank, so results are fully
//! deterministic and independent of how the scan is parallelized.

mod pooling;
mod set;
mod snapshot;

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{AgeGroup, Channel, FeatureKey, FeatureSequence, Label, SampleRecord, Sex};

pub(crate) use pooling::mean_of_frames;
pub use pooling::{temporal_mean, PooledVector};
pub use set::DatastoreSet;
pub use snapshot::{decode_snapshot, encode_snapshot, read_snapshot, snapshot_file_name, write_snapshot, SNAPSHOT_MAGIC};

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("{path}: I/O failure: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: datastore has D={expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample {0:?} is already in the datastore")]
    DuplicateId(String),
    #[error("datastore holds {expected} features, got {found}")]
    KeyMismatch { expected: FeatureKey, found: FeatureKey },
    #[error("key contains non-finite value at index {index}")]
    NonFiniteKey { index: usize },
    #[error("empty key vector")]
    EmptyKey,
    #[error("sample id of {len} bytes exceeds the 65535-byte snapshot limit")]
    IdTooLong { len: usize },
    #[error("snapshot: bad magic {found:?} at offset 0")]
    BadMagic { found: [u8; 4] },
    #[error("snapshot: unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("snapshot truncated at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: u64 },
    #[error("snapshot: {extra} trailing bytes at offset {offset}")]
    TrailingData { offset: u64, extra: u64 },
    #[error("snapshot: invalid `{field}` value {value} at offset {offset}")]
    InvalidField {
        field: &'static str,
        offset: u64,
        value: u64,
    },
    #[error("snapshot: sample id at offset {offset} is not UTF-8")]
    InvalidId { offset: u64 },
}

pub type Result<T, E = DatastoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct DatastoreEntry {
    pub sample_id: String,
    pub key: PooledVector,
    pub label: Label,
    pub age_group: AgeGroup,
    pub sex: Sex,
    /// Insertion rank used for tie-breaking. Never reused or renumbered.
    pub rank: u64,
}

/// One retrieved neighbour. `squared_l2_distance` is the squared Euclidean
/// distance between the query and the entry's key.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub sample_id: String,
    pub squared_l2_distance: f64,
    pub label: Label,
    pub age_group: AgeGroup,
    pub sex: Sex,
    pub rank: u64,
}

/// Result of a post-filtered search: the surviving hits plus how many hits the
/// unfiltered top-k held before the predicate was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSearch {
    pub hits: Vec<SearchHit>,
    pub pre_filter_count: usize,
}

// Below this many key components a sequential scan beats spinning up rayon.
const PARALLEL_SCAN_MIN: usize = 1 << 16;

/// Flat index for a single (layer, channel).
#[derive(Debug, Clone)]
pub struct Datastore {
    layer: u32,
    channel: Channel,
    dim: Option<usize>,
    entries: Vec<DatastoreEntry>,
    // Row-major copy of every key, entry order, for the scan.
    keys: Vec<f32>,
    ids: HashSet<String>,
    next_rank: u64,
}

impl Datastore {
    pub fn new(layer: u32, channel: Channel) -> Self {
        Self {
            layer,
            channel,
            dim: None,
            entries: Vec::new(),
            keys: Vec::new(),
            ids: HashSet::new(),
            next_rank: 0,
        }
    }

    /// Builds a store from samples and their feature sequences, preserving input order.
    pub fn build<'a, I>(layer: u32, channel: Channel, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a SampleRecord, &'a FeatureSequence)>,
    {
        let mut ds = Self::new(layer, channel);
        for (record, seq) in samples {
            ds.add(record, seq)?;
        }
        Ok(ds)
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn feature_key(&self) -> FeatureKey {
        FeatureKey::new(self.layer, self.channel)
    }

    /// Key dimension, or `None` while the store has never held an entry.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DatastoreEntry] {
        &self.entries
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.ids.contains(sample_id)
    }

    pub fn get(&self, sample_id: &str) -> Option<&DatastoreEntry> {
        if !self.contains(sample_id) {
            return None;
        }
        self.entries.iter().find(|e| e.sample_id == sample_id)
    }

    /// Pools `seq` and appends it as a new entry.
    pub fn add(&mut self, record: &SampleRecord, seq: &FeatureSequence) -> Result<()> {
        if seq.key() != self.feature_key() {
            return Err(DatastoreError::KeyMismatch {
                expected: self.feature_key(),
                found: seq.key(),
            });
        }
        self.insert(&record.sample_id, temporal_mean(seq), record.label, record.age_group, record.sex)
    }

    /// Appends an already pooled key.
    pub fn insert(&mut self, sample_id: &str, key: PooledVector, label: Label, age_group: AgeGroup, sex: Sex) -> Result<()> {
        self.check_dim(key.len())?;
        if self.ids.contains(sample_id) {
            return Err(DatastoreError::DuplicateId(sample_id.to_owned()));
        }
        self.dim = Some(key.len());
        self.keys.extend_from_slice(key.as_slice());
        self.ids.insert(sample_id.to_owned());
        self.entries.push(DatastoreEntry {
            sample_id: sample_id.to_owned(),
            key,
            label,
            age_group,
            sex,
            rank: self.next_rank,
        });
        self.next_rank += 1;
        Ok(())
    }

    /// Removes a sample. Returns whether it was present.
    pub fn remove(&mut self, sample_id: &str) -> bool {
        if !self.ids.remove(sample_id) {
            return false;
        }
        let pos = self
            .entries
            .iter()
            .position(|e| e.sample_id == sample_id)
            .expect("id set and entries out of sync");
        let dim = self.dim.expect("non-empty store has a dimension");
        self.entries.remove(pos);
        self.keys.drain(pos * dim..(pos + 1) * dim);
        true
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        match self.dim {
            Some(expected) if expected != found => Err(DatastoreError::DimensionMismatch { expected, found }),
            _ if found == 0 => Err(DatastoreError::EmptyKey),
            _ => Ok(()),
        }
    }

    fn squared_distances(&self, query: &[f32]) -> Vec<f64> {
        let dim = query.len();
        let dist = |key: &[f32]| -> f64 {
            key.iter()
                .zip(query)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum()
        };
        if self.keys.len() >= PARALLEL_SCAN_MIN {
            self.keys.par_chunks_exact(dim).map(dist).collect()
        } else {
            self.keys.chunks_exact(dim).map(dist).collect()
        }
    }

    fn hit(&self, idx: usize, distance: f64) -> SearchHit {
        let e = &self.entries[idx];
        SearchHit {
            sample_id: e.sample_id.clone(),
            squared_l2_distance: distance,
            label: e.label,
            age_group: e.age_group,
            sex: e.sex,
            rank: e.rank,
        }
    }

    /// Exact top-k by squared L2 distance, ties broken by insertion rank.
    pub fn search(&self, query: &PooledVector, k: usize) -> Result<Vec<SearchHit>> {
        self.search_excluding(query, k, None)
    }

    /// Like [`search`](Self::search) but as if `exclude` were not in the store.
    pub fn search_excluding(&self, query: &PooledVector, k: usize, exclude: Option<&str>) -> Result<Vec<SearchHit>> {
        if self.is_empty() || k == 0 {
            if let Some(dim) = self.dim {
                if dim != query.len() {
                    return Err(DatastoreError::DimensionMismatch { expected: dim, found: query.len() });
                }
            }
            return Ok(Vec::new());
        }
        self.check_dim(query.len())?;
        let dists = self.squared_distances(query.as_slice());
        let mut candidates: Vec<usize> = match exclude.filter(|id| self.contains(id)) {
            Some(id) => (0..self.len()).filter(|&i| self.entries[i].sample_id != id).collect(),
            None => (0..self.len()).collect(),
        };
        let order = |&a: &usize, &b: &usize| -> Ordering {
            dists[a]
                .total_cmp(&dists[b])
                .then(self.entries[a].rank.cmp(&self.entries[b].rank))
        };
        let k = k.min(candidates.len());
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, order);
            candidates.truncate(k);
        }
        candidates.sort_unstable_by(order);
        Ok(candidates.into_iter().map(|i| self.hit(i, dists[i])).collect())
    }

    /// Retrieves the top-k and then drops hits failing `predicate`. The result
    /// may hold fewer than `k` hits.
    pub fn search_filtered<P>(&self, query: &PooledVector, k: usize, predicate: P) -> Result<FilteredSearch>
    where
        P: Fn(&SearchHit) -> bool,
    {
        self.search_filtered_excluding(query, k, None, predicate)
    }

    pub fn search_filtered_excluding<P>(
        &self,
        query: &PooledVector,
        k: usize,
        exclude: Option<&str>,
        predicate: P,
    ) -> Result<FilteredSearch>
    where
        P: Fn(&SearchHit) -> bool,
    {
        let hits = self.search_excluding(query, k, exclude)?;
        let pre_filter_count = hits.len();
        Ok(FilteredSearch {
            hits: hits.into_iter().filter(|h| predicate(h)).collect(),
            pre_filter_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;

    fn pv(v: &[f32]) -> PooledVector {
        PooledVector::new(v.to_vec()).unwrap()
    }

    fn store(keys: &[(&str, &[f32], Label, Sex)]) -> Datastore {
        let mut ds = Datastore::new(3, Channel::Original);
        for (id, key, label, sex) in keys {
            ds.insert(id, pv(key), *label, AgeGroup::Unknown, *sex).unwrap();
        }
        ds
    }

    #[test]
    fn empty_store_returns_no_hits() {
        let ds = Datastore::build(3, Channel::Original, std::iter::empty()).unwrap();
        assert!(ds.is_empty());
        assert!(ds.search(&pv(&[1.0, 2.0]), 5).unwrap().is_empty());
    }

    #[test]
    fn build_pools_each_sample() {
        let mut pairs = Vec::new();
        for (i, rows) in [vec![vec![1.0, 3.0], vec![3.0, 1.0]], vec![vec![0.0, 0.0]], vec![vec![2.0, 4.0], vec![4.0, 8.0]]]
            .into_iter()
            .enumerate()
        {
            let id = format!("s{i}");
            let rec = SampleRecord::new(&id, Label::Asymptomatic, AgeGroup::Le39, Sex::Male, Split::Train);
            let seq = FeatureSequence::from_rows(&id, 3, Channel::Original, &rows).unwrap();
            pairs.push((rec, seq));
        }
        let ds = Datastore::build(3, Channel::Original, pairs.iter().map(|(r, s)| (r, s))).unwrap();
        assert_eq!(ds.len(), 3);
        let keys: Vec<_> = ds.entries().iter().map(|e| e.key.as_slice().to_vec()).collect();
        assert_eq!(keys, vec![vec![2.0, 2.0], vec![0.0, 0.0], vec![3.0, 6.0]]);
    }

    #[test]
    fn build_rejects_mismatched_inputs() {
        let rec = SampleRecord::new("a", Label::Asymptomatic, AgeGroup::Le39, Sex::Male, Split::Train);
        let seq = FeatureSequence::from_rows("a", 4, Channel::Original, &[vec![1.0]]).unwrap();
        assert!(matches!(
            Datastore::build(3, Channel::Original, [(&rec, &seq)]),
            Err(DatastoreError::KeyMismatch { .. })
        ));
        let mut ds = store(&[("a", &[0.0, 0.0], Label::Asymptomatic, Sex::Male)]);
        assert!(matches!(
            ds.insert("b", pv(&[1.0]), Label::Asymptomatic, AgeGroup::Le39, Sex::Male),
            Err(DatastoreError::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(matches!(
            ds.insert("a", pv(&[1.0, 1.0]), Label::Asymptomatic, AgeGroup::Le39, Sex::Male),
            Err(DatastoreError::DuplicateId(_))
        ));
        assert!(matches!(ds.search(&pv(&[1.0, 2.0, 3.0]), 1), Err(DatastoreError::DimensionMismatch { .. })));
    }

    #[test]
    fn own_key_is_nearest_at_zero() {
        let ds = store(&[
            ("a", &[0.0, 1.0], Label::Asymptomatic, Sex::Male),
            ("b", &[5.0, 5.0], Label::Symptomatic, Sex::Male),
        ]);
        let hits = ds.search(&pv(&[5.0, 5.0]), 1).unwrap();
        assert_eq!(hits[0].sample_id, "b");
        assert_eq!(hits[0].squared_l2_distance, 0.0);
        assert_eq!(ds.search(&pv(&[0.0, 0.0]), 1).unwrap()[0].squared_l2_distance, 1.0);
    }

    #[test]
    fn ties_break_by_insertion_rank() {
        let ds = store(&[
            ("late", &[1.0, 0.0], Label::Asymptomatic, Sex::Male),
            ("early", &[-1.0, 0.0], Label::Asymptomatic, Sex::Male),
        ]);
        let hits = ds.search(&pv(&[0.0, 0.0]), 2).unwrap();
        assert_eq!(hits[0].sample_id, "late");
        assert_eq!(hits[1].sample_id, "early");
        assert_eq!(hits[0].squared_l2_distance, hits[1].squared_l2_distance);
    }

    #[test]
    fn remove_keeps_remaining_ranks() {
        let mut ds = store(&[
            ("a", &[1.0], Label::Asymptomatic, Sex::Male),
            ("b", &[2.0], Label::Asymptomatic, Sex::Male),
            ("c", &[-1.0], Label::Asymptomatic, Sex::Male),
        ]);
        assert!(ds.remove("b"));
        assert!(!ds.remove("b"));
        assert!(!ds.remove("zzz"));
        let ranks: Vec<_> = ds.entries().iter().map(|e| e.rank).collect();
        assert_eq!(ranks, [0, 2]);
        let hits = ds.search(&pv(&[0.0]), 5).unwrap();
        assert_eq!(hits.iter().map(|h| h.sample_id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        ds.insert("b", pv(&[2.0]), Label::Asymptomatic, AgeGroup::Le39, Sex::Male).unwrap();
        assert_eq!(ds.entries().last().unwrap().rank, 3);
    }

    #[test]
    fn exclusion_behaves_like_removal() {
        let ds = store(&[
            ("a", &[0.0], Label::Asymptomatic, Sex::Male),
            ("b", &[1.0], Label::Symptomatic, Sex::Male),
            ("c", &[2.0], Label::Symptomatic, Sex::Male),
        ]);
        let mut removed = ds.clone();
        removed.remove("a");
        let q = pv(&[0.1]);
        assert_eq!(ds.search_excluding(&q, 2, Some("a")).unwrap(), removed.search(&q, 2).unwrap());
        assert_eq!(ds.search_excluding(&q, 2, Some("nope")).unwrap(), ds.search(&q, 2).unwrap());
    }

    #[test]
    fn filtered_search_post_filters() {
        let ds = store(&[
            ("m1", &[0.0], Label::Asymptomatic, Sex::Male),
            ("f1", &[1.0], Label::Symptomatic, Sex::Female),
            ("m2", &[2.0], Label::Asymptomatic, Sex::Male),
            ("f2", &[3.0], Label::Symptomatic, Sex::Female),
        ]);
        let q = pv(&[0.0]);
        let all = ds.search_filtered(&q, 3, |_| true).unwrap();
        assert_eq!(all.hits, ds.search(&q, 3).unwrap());
        let fem = ds.search_filtered(&q, 3, |h| h.sex == Sex::Female).unwrap();
        assert_eq!(fem.pre_filter_count, 3);
        assert_eq!(fem.hits.iter().map(|h| h.sample_id.as_str()).collect::<Vec<_>>(), ["f1"]);
        let none = ds.search_filtered(&q, 3, |_| false).unwrap();
        assert!(none.hits.is_empty());
        assert_eq!(none.pre_filter_count, 3);
    }

    #[test]
    fn zero_k_returns_nothing() {
        let ds = store(&[("a", &[0.0], Label::Asymptomatic, Sex::Male)]);
        assert!(ds.search(&pv(&[0.0]), 0).unwrap().is_empty());
    }
}
