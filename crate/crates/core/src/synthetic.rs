//! Toy corpora with known class structure, for tests and demos.
//!
//! Each sample has a latent utterance vector drawn from one of two isotropic
//! Gaussians whose means are `separation * sigma` apart. Its frames are the
//! latent vector plus a two-phase temporal pattern and per-frame noise. The
//! reversed channel is the frame sequence in reverse order with fresh noise.
//! Every pseudo-layer draws its own latent vector and class direction.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datastore::{Datastore, DatastoreError, DatastoreSet};
use crate::inference::SampleFeatures;
use crate::ingest::{
    write_feature_file, write_manifest, AgeGroup, Channel, FeatureKey, FeatureSequence, IngestError, Label,
    SampleRecord, Sex, Split,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub layers: Vec<u32>,
    pub frames: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Distance between class means in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub frame_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: vec![3, 4, 5],
            frames: 24,
            n_train: 400,
            n_test: 100,
            separation: 5.0,
            sigma: 1.0,
            frame_noise: 0.5,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<SampleRecord>,
    pub features: HashMap<String, SampleFeatures>,
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v = normal_vec(rng, dim, 1.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

impl SyntheticCorpus {
    pub fn generate(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let directions: Vec<Vec<f64>> = spec.layers.iter().map(|_| unit_vec(&mut rng, spec.dim)).collect();
        let phases: Vec<Vec<f64>> = spec.layers.iter().map(|_| normal_vec(&mut rng, spec.dim, spec.sigma)).collect();
        let ages = [AgeGroup::Le39, AgeGroup::F40to59, AgeGroup::Ge60, AgeGroup::Unknown];
        let sexes = [Sex::Male, Sex::Female, Sex::Unknown];

        let mut records = Vec::new();
        let mut features = HashMap::new();
        let total = spec.n_train + spec.n_test;
        for i in 0..total {
            let (split, id) = if i < spec.n_train {
                (Split::Train, format!("train-{i:04}"))
            } else {
                (Split::Test, format!("test-{:04}", i - spec.n_train))
            };
            let label = if rng.random_bool(0.5) { Label::Symptomatic } else { Label::Asymptomatic };
            let age = ages[rng.random_range(0..ages.len())];
            let sex = sexes[rng.random_range(0..sexes.len())];
            let mut sample = SampleFeatures::new();
            for (li, &layer) in spec.layers.iter().enumerate() {
                let shift = if label.is_positive() { spec.separation * spec.sigma } else { 0.0 };
                let latent: Vec<f64> = normal_vec(&mut rng, spec.dim, spec.sigma)
                    .iter()
                    .zip(&directions[li])
                    .map(|(z, d)| z + shift * d)
                    .collect();
                let mut rows: Vec<Vec<f32>> = (0..spec.frames)
                    .map(|t| {
                        let sign = if t < spec.frames / 2 { 1.0 } else { -1.0 };
                        latent
                            .iter()
                            .zip(&phases[li])
                            .map(|(&m, &p)| (m + sign * p + spec.frame_noise * rng.sample::<f64, _>(StandardNormal)) as f32)
                            .collect()
                    })
                    .collect();
                sample.insert(FeatureSequence::from_rows(&id, layer, Channel::Original, &rows).expect("finite frames"));
                rows.reverse();
                for row in &mut rows {
                    for v in row.iter_mut() {
                        *v += (0.1 * spec.frame_noise * rng.sample::<f64, _>(StandardNormal)) as f32;
                    }
                }
                sample.insert(FeatureSequence::from_rows(&id, layer, Channel::Reversed, &rows).expect("finite frames"));
            }
            records.push(SampleRecord::new(&id, label, age, sex, split));
            features.insert(id, sample);
        }
        Self { records, features }
    }

    pub fn split(&self, split: Split) -> Vec<SampleRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    /// Shuffles labels across all samples, breaking any link between
    /// features and labels while keeping the class balance.
    pub fn permute_labels(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<Label> = self.records.iter().map(|r| r.label).collect();
        labels.shuffle(&mut rng);
        for (r, l) in self.records.iter_mut().zip(labels) {
            r.label = l;
        }
    }

    /// One store per (layer, channel) over the training split.
    pub fn build_stores(&self) -> Result<DatastoreSet, DatastoreError> {
        let train = self.split(Split::Train);
        let keys: Vec<FeatureKey> = self
            .records
            .first()
            .map(|r| self.features[&r.sample_id].keys().collect())
            .unwrap_or_default();
        let mut set = DatastoreSet::new();
        for key in keys {
            let mut ds = Datastore::new(key.layer, key.channel);
            for r in &train {
                ds.add(r, self.features[&r.sample_id].get(key).expect("generated for every key"))?;
            }
            set.insert(ds);
        }
        Ok(set)
    }

    /// Writes feature files under `dir/features/` and the manifest to
    /// `dir/manifest.jsonl`; returns the manifest path.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<PathBuf, IngestError> {
        let dir = dir.as_ref();
        let feat_dir = dir.join("features");
        std::fs::create_dir_all(&feat_dir).map_err(|source| IngestError::Io {
            path: feat_dir.clone(),
            source,
        })?;
        let mut records = self.records.clone();
        for r in &mut records {
            for key in self.features[&r.sample_id].keys() {
                let path = feat_dir.join(format!("{}.l{}.{}.npsa", r.sample_id, key.layer, key.channel));
                write_feature_file(self.features[&r.sample_id].get(key).unwrap(), &path)?;
                r.feature_paths.insert(key, path);
            }
        }
        let manifest = dir.join("manifest.jsonl");
        write_manifest(&manifest, &records)?;
        Ok(manifest)
    }
}
