use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Frames, Result, SegmentationError};

/// Lloyd iteration limits. Defaults follow the common toolkit convention:
/// 300 iterations, tolerance 1e-4 relative to the mean per-column variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster index of every frame, in `[0, n_clusters)`.
    pub assignments: Vec<usize>,
    /// Row-major `n_clusters x dim` centroids; each is the mean of its members.
    pub centroids: Vec<f64>,
    pub n_clusters: usize,
    pub dim: usize,
    /// Sum of squared distances from each frame to its centroid.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration; non-increasing.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

fn row_f64(row: &[f32]) -> impl Iterator<Item = f64> + '_ {
    row.iter().map(|&v| v as f64)
}

/// Greedy k-means++ seeding: each new centre is the best of
/// `2 + floor(ln n)` candidates drawn proportionally to squared distance.
fn kmeans_plus_plus(frames: &Frames<'_>, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t = frames.len();
    let dim = frames.dim();
    let trials = 2 + (n as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(n * dim);

    let first = rng.random_range(0..t);
    centroids.extend(row_f64(frames.row(first)));
    let mut closest: Vec<f64> = frames.rows().map(|r| sq_dist(r, &centroids[..dim])).collect();

    for _ in 1..n {
        let potential: f64 = closest.iter().sum();
        let chosen = if potential > 0.0 {
            let mut best: Option<(f64, usize, Vec<f64>)> = None;
            for _ in 0..trials {
                let target = rng.random::<f64>() * potential;
                let mut cumulative = 0.0;
                let mut idx = t - 1;
                for (i, &d) in closest.iter().enumerate() {
                    cumulative += d;
                    if cumulative > target {
                        idx = i;
                        break;
                    }
                }
                // Rounding at the top of the cumulative sum may land on a zero-weight point.
                while closest[idx] == 0.0 && idx > 0 {
                    idx -= 1;
                }
                let cand: Vec<f64> = row_f64(frames.row(idx)).collect();
                let updated: Vec<f64> = frames
                    .rows()
                    .zip(&closest)
                    .map(|(r, &c)| c.min(sq_dist(r, &cand)))
                    .collect();
                let pot: f64 = updated.iter().sum();
                if best.as_ref().is_none_or(|(p, _, _)| pot < *p) {
                    best = Some((pot, idx, updated));
                }
            }
            let (_, idx, updated) = best.expect("at least one trial");
            closest = updated;
            idx
        } else {
            // Every frame coincides with a chosen centre; any pick is as good.
            rng.random_range(0..t)
        };
        let start = centroids.len();
        centroids.extend(row_f64(frames.row(chosen)));
        if potential <= 0.0 {
            let c = centroids[start..].to_vec();
            for (r, d) in frames.rows().zip(closest.iter_mut()) {
                *d = d.min(sq_dist(r, &c));
            }
        }
    }
    centroids
}

fn assign(frames: &Frames<'_>, centroids: &[f64], n: usize, labels: &mut [usize], dists: &mut [f64]) {
    let dim = frames.dim();
    for ((row, label), dist) in frames.rows().zip(labels.iter_mut()).zip(dists.iter_mut()) {
        let mut best = (f64::INFINITY, 0usize);
        for c in 0..n {
            let d = sq_dist(row, &centroids[c * dim..(c + 1) * dim]);
            if d < best.0 {
                best = (d, c);
            }
        }
        *label = best.1;
        *dist = best.0;
    }
}

/// Moves, for each empty cluster, the frame farthest from its centroid (among
/// frames whose cluster has more than one member) into the empty cluster.
fn repair_empty_clusters(labels: &mut [usize], dists: &mut [f64], n: usize) {
    let mut sizes = vec![0usize; n];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for empty in 0..n {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        let i = far.expect("T >= n guarantees a donor cluster");
        sizes[labels[i]] -= 1;
        sizes[empty] += 1;
        labels[i] = empty;
        dists[i] = 0.0;
    }
}

fn update_centroids(frames: &Frames<'_>, labels: &[usize], n: usize) -> Vec<f64> {
    let dim = frames.dim();
    let mut sums = vec![0.0f64; n * dim];
    let mut counts = vec![0usize; n];
    for (row, &l) in frames.rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row_f64(row)) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        let scale = 1.0 / count as f64;
        for s in &mut sums[c * dim..(c + 1) * dim] {
            *s *= scale;
        }
    }
    sums
}

fn inertia(frames: &Frames<'_>, labels: &[usize], centroids: &[f64]) -> f64 {
    let dim = frames.dim();
    frames
        .rows()
        .zip(labels)
        .map(|(r, &l)| sq_dist(r, &centroids[l * dim..(l + 1) * dim]))
        .sum()
}

/// Absolute centroid-shift tolerance: `tol` times the mean per-column variance.
fn absolute_tolerance(frames: &Frames<'_>, tol: f64) -> f64 {
    let dim = frames.dim();
    let t = frames.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for row in frames.rows() {
        for (m, v) in mean.iter_mut().zip(row_f64(row)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = 0.0;
    for row in frames.rows() {
        for (m, v) in mean.iter().zip(row_f64(row)) {
            var += (v - m) * (v - m);
        }
    }
    tol * var / (t * dim as f64)
}

/// Lloyd's k-means from seeded k-means++ initialisation with default options.
pub fn kmeans(frames: Frames<'_>, n: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_with(frames, n, seed, KMeansOptions::default())
}

pub fn kmeans_with(frames: Frames<'_>, n: usize, seed: u64, options: KMeansOptions) -> Result<ClusterAssignment> {
    if n == 0 {
        return Err(SegmentationError::ZeroClusters);
    }
    let t = frames.len();
    if t < n {
        return Err(SegmentationError::TooFewFrames { frames: t, clusters: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&frames, n, &mut rng);
    let tol = absolute_tolerance(&frames, options.tol);

    let mut labels = vec![0usize; t];
    let mut dists = vec![0.0f64; t];
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..options.max_iter.max(1) {
        assign(&frames, &centroids, n, &mut labels, &mut dists);
        repair_empty_clusters(&mut labels, &mut dists, n);
        let updated = update_centroids(&frames, &labels, n);
        let current = inertia(&frames, &labels, &updated);
        if let Some(&prev) = history.last() {
            debug_assert!(
                current <= prev + 1e-9 * prev.abs(),
                "k-means inertia increased from {prev} to {current}"
            );
        }
        history.push(current);
        let shift: f64 = centroids.iter().zip(&updated).map(|(a, b)| (a - b) * (a - b)).sum();
        centroids = updated;
        if shift <= tol {
            break;
        }
    }

    Ok(ClusterAssignment {
        assignments: labels,
        centroids,
        n_clusters: n,
        dim: frames.dim(),
        inertia: *history.last().expect("at least one iteration"),
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(data: &[f32], dim: usize) -> Frames<'_> {
        Frames::new(data, dim).unwrap()
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 9.0];
        let a = kmeans(frames(&data, 2), 1, 7).unwrap();
        assert_eq!(a.assignments, [0, 0, 0]);
        assert_eq!(a.centroid(0), &[3.0, 5.0]);
        // (1,2), (3,4), (5,9) around (3,5)
        let direct = (4.0 + 9.0) + (0.0 + 1.0) + (4.0 + 16.0);
        assert!((a.inertia - direct).abs() < 1e-12);
    }

    #[test]
    fn one_cluster_per_frame() {
        let data = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0];
        let a = kmeans(frames(&data, 2), 4, 3).unwrap();
        assert_eq!(a.inertia, 0.0);
        let mut seen = a.assignments.clone();
        seen.sort();
        assert_eq!(seen, [0, 1, 2, 3]);
        for (t, &c) in a.assignments.iter().enumerate() {
            assert_eq!(a.centroid(c), &[data[2 * t] as f64, data[2 * t + 1] as f64]);
        }
    }

    #[test]
    fn duplicate_frames_still_fill_every_cluster() {
        let data = [1.0, 1.0, 1.0, 2.0];
        let a = kmeans(frames(&data, 1), 3, 0).unwrap();
        let sizes = a.cluster_sizes();
        assert!(sizes.iter().all(|&s| s > 0), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 4);
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn too_few_frames() {
        let data = [1.0, 2.0];
        assert!(matches!(
            kmeans(frames(&data, 1), 3, 0),
            Err(SegmentationError::TooFewFrames { frames: 2, clusters: 3 })
        ));
        assert!(matches!(kmeans(frames(&data, 1), 0, 0), Err(SegmentationError::ZeroClusters)));
    }

    #[test]
    fn repair_moves_farthest_point() {
        let mut labels = vec![0, 0, 0];
        let mut dists = vec![1.0, 5.0, 2.0];
        repair_empty_clusters(&mut labels, &mut dists, 2);
        assert_eq!(labels, [0, 1, 0]);
    }
}
