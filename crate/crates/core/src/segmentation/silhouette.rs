use rayon::prelude::*;

use super::{ClusterAssignment, Frames, Result, SegmentationError};

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient over all frames, with Euclidean distances.
///
/// For frame `i` in cluster `A`: `a` is its mean distance to the other
/// members of `A`, `b` the smallest mean distance to the members of any other
/// non-empty cluster, and `s = (b - a) / max(a, b)`. Frames in singleton
/// clusters, and frames with `a = b = 0`, score 0.
pub fn mean_silhouette(frames: Frames<'_>, labels: &[usize], n_clusters: usize) -> Result<f64> {
    if n_clusters < 2 {
        return Err(SegmentationError::SingleCluster);
    }
    let t = frames.len();
    if labels.len() != t {
        return Err(SegmentationError::LabelCount { frames: t, labels: labels.len() });
    }
    if t < 2 {
        return Err(SegmentationError::TooFewFrames { frames: t, clusters: 2 });
    }
    let mut sizes = vec![0usize; n_clusters];
    for &l in labels {
        if l >= n_clusters {
            return Err(SegmentationError::LabelOutOfRange { label: l, n_clusters });
        }
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(SegmentationError::SingleCluster);
    }

    let coefficients: Vec<f64> = (0..t)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let xi = frames.row(i);
            let mut sums = vec![0.0f64; n_clusters];
            for (j, xj) in frames.rows().enumerate() {
                if j != i {
                    sums[labels[j]] += euclidean(xi, xj);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..n_clusters)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    // Sequential sum keeps the result independent of the thread count.
    Ok(coefficients.iter().sum::<f64>() / t as f64)
}

pub fn assignment_silhouette(frames: Frames<'_>, assignment: &ClusterAssignment) -> Result<f64> {
    mean_silhouette(frames, &assignment.assignments, assignment.n_clusters)
}
