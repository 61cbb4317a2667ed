use super::{DatastoreError, Result};
use crate::ingest::FeatureSequence;

/// A D-dimensional key: finite, non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector(Vec<f32>);

impl PooledVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(DatastoreError::EmptyKey);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(DatastoreError::NonFiniteKey { index });
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for PooledVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Mean over the time axis of a selected set of frames, accumulated in f64.
pub(crate) fn mean_of_frames<'a, I>(dim: usize, frames: I) -> Vec<f32>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut acc = vec![0.0f64; dim];
    let mut count = 0usize;
    for frame in frames {
        for (a, &v) in acc.iter_mut().zip(frame) {
            *a += v as f64;
        }
        count += 1;
    }
    let scale = 1.0 / count.max(1) as f64;
    acc.into_iter().map(|a| (a * scale) as f32).collect()
}

/// Averages a `T x D` sequence over time into one D-vector.
pub fn temporal_mean(seq: &FeatureSequence) -> PooledVector {
    // A mean of finite f32 values stays within the f32 range.
    PooledVector(mean_of_frames(seq.dim(), seq.rows()))
}
