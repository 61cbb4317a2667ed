use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::snapshot::{read_snapshot, snapshot_file_name, write_snapshot};
use super::{Datastore, DatastoreError, Result};
use crate::ingest::{Channel, FeatureKey};

/// All stores used by one assessment run, keyed by (layer, channel).
///
/// Stores are shared snapshots. Mutating through the set copies a store that
/// is still referenced elsewhere, so a reader holding an `Arc<Datastore>`
/// never sees a half-applied change.
#[derive(Debug, Clone, Default)]
pub struct DatastoreSet {
    stores: BTreeMap<FeatureKey, Arc<Datastore>>,
}

impl DatastoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ds: Datastore) -> Option<Arc<Datastore>> {
        self.stores.insert(ds.feature_key(), Arc::new(ds))
    }

    pub fn get(&self, key: FeatureKey) -> Option<&Arc<Datastore>> {
        self.stores.get(&key)
    }

    pub fn get_mut(&mut self, key: FeatureKey) -> Option<&mut Datastore> {
        self.stores.get_mut(&key).map(Arc::make_mut)
    }

    pub fn keys(&self) -> impl Iterator<Item = FeatureKey> + '_ {
        self.stores.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureKey, &Arc<Datastore>)> {
        self.stores.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.stores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty()
    }

    /// Layers present for the given channel, ascending.
    pub fn layers(&self, channel: Channel) -> Vec<u32> {
        self.stores.keys().filter(|k| k.channel == channel).map(|k| k.layer).collect()
    }

    /// Removes `sample_id` from every store; returns how many stores held it.
    pub fn remove_everywhere(&mut self, sample_id: &str) -> usize {
        self.stores
            .values_mut()
            .filter(|ds| ds.contains(sample_id))
            .map(|ds| Arc::make_mut(ds).remove(sample_id))
            .filter(|&removed| removed)
            .count()
    }

    /// Loads every `*.npds` snapshot in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let io_err = |source| DatastoreError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "npds"))
            .collect();
        paths.sort();
        let mut set = Self::new();
        for p in paths {
            set.insert(read_snapshot(&p)?);
        }
        Ok(set)
    }

    /// Writes each store to `dir` under its conventional file name.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| DatastoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (key, ds) in &self.stores {
            write_snapshot(ds, dir.join(snapshot_file_name(*key)))?;
        }
        Ok(())
    }
}
