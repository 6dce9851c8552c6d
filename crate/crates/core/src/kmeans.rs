//! Forgy/Lloyd k-means expressed as explicit map / shuffle / reduce
//! stages over partitioned data.
//!
//! The map stage assigns each point of a partition to its nearest centroid
//! and emits one (sum, count) partial per cluster present — the combiner
//! form of the (key, vector) couples, algebraically identical and far
//! cheaper to ship. The reduce stage folds partials by key into new
//! barycenters. Partitions map in parallel with no shared mutable state;
//! the fold is a deterministic sequential pass, so results are
//! reproducible and independent of the partition count up to float
//! summation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// k centroids plus the iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centroids: Vec<Vec<f64>>,
    pub iteration: usize,
}

impl ClusterState {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, |c| c.len())
    }
}

/// Per-cluster partial statistics emitted by the map stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSum {
    pub key: usize,
    pub sum: Vec<f64>,
    pub count: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let mut d = 0.0;
        for (a, b) in point.iter().zip(c) {
            let diff = a - b;
            d += diff * diff;
        }
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    (best, best_d)
}

/// Map stage: assign every point of a partition to its nearest centroid
/// (squared Euclidean distance, ties to the smallest cluster id) and emit
/// per-cluster (sum, count) partials, sorted by key.
pub fn map_assign(partition: &[Vec<f64>], state: &ClusterState) -> Result<Vec<PartialSum>> {
    let dim = state.dim();
    let mut acc: Vec<Option<PartialSum>> = vec![None; state.k()];
    for point in partition {
        if point.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {}, centroids have {}",
                point.len(),
                dim
            )));
        }
        let (key, _) = nearest(point, &state.centroids);
        let slot = acc[key].get_or_insert_with(|| PartialSum {
            key,
            sum: vec![0.0; dim],
            count: 0,
        });
        for (s, v) in slot.sum.iter_mut().zip(point) {
            *s += v;
        }
        slot.count += 1;
    }
    Ok(acc.into_iter().flatten().collect())
}

/// Shuffle + reduce stage: fold the partials by key (sorted, sequential),
/// divide each key's sum by its count, and keep the previous centroid for
/// any key that received no point. Increments the iteration counter.
pub fn shuffle_reduce(partials: &[PartialSum], previous: &ClusterState) -> Result<ClusterState> {
    let k = previous.k();
    let dim = previous.dim();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    let mut order: Vec<&PartialSum> = partials.iter().collect();
    order.sort_by_key(|p| p.key);
    for p in order {
        if p.key >= k {
            return Err(Error::InvalidArgument(format!(
                "partial for cluster {} but k = {k}",
                p.key
            )));
        }
        if p.sum.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "partial sum has dimension {}, centroids have {}",
                p.sum.len(),
                dim
            )));
        }
        for (s, v) in sums[p.key].iter_mut().zip(&p.sum) {
            *s += v;
        }
        counts[p.key] += p.count;
    }
    let centroids = (0..k)
        .map(|key| {
            if counts[key] == 0 {
                previous.centroids[key].clone()
            } else {
                sums[key].iter().map(|s| s / counts[key] as f64).collect()
            }
        })
        .collect();
    Ok(ClusterState {
        centroids,
        iteration: previous.iteration + 1,
    })
}

/// Forgy initialization: k distinct data points chosen uniformly at
/// random, seed-controlled.
pub fn forgy_init(data: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterState> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > data.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {} data points",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    Ok(ClusterState {
        centroids: order[..k].iter().map(|&i| data[i].clone()).collect(),
        iteration: 0,
    })
}

/// Result of [`kmeans_fit`].
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub state: ClusterState,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares at each assignment step.
    pub inertia: Vec<f64>,
    pub converged: bool,
}

/// Lloyd iteration as repeated map / shuffle / reduce rounds over
/// `n_partitions` contiguous chunks of the data. Stops when the largest
/// centroid displacement drops below `tol` or after `max_iter` rounds;
/// final assignments are recomputed once against the final centroids.
pub fn kmeans_fit(
    data: &[Vec<f64>],
    k: usize,
    n_partitions: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansFit> {
    if data.is_empty() {
        return Err(Error::Empty);
    }
    if n_partitions < 1 {
        return Err(Error::InvalidArgument("n_partitions must be >= 1".into()));
    }
    let dim = data[0].len();
    for (i, point) in data.iter().enumerate() {
        if point.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "point {i} has dimension {}, expected {dim}",
                point.len()
            )));
        }
    }
    let mut state = forgy_init(data, k, seed)?;
    let chunk = data.len().div_ceil(n_partitions);
    let partitions: Vec<&[Vec<f64>]> = data.chunks(chunk).collect();

    let mut inertia = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let per_partition: Vec<Result<(Vec<PartialSum>, f64)>> = partitions
            .par_iter()
            .map(|part| {
                let partials = map_assign(part, &state)?;
                let cost: f64 = part
                    .iter()
                    .map(|point| nearest(point, &state.centroids).1)
                    .sum();
                Ok((partials, cost))
            })
            .collect();
        let mut partials = Vec::new();
        let mut cost = 0.0;
        for r in per_partition {
            let (p, c) = r?;
            partials.extend(p);
            cost += c;
        }
        inertia.push(cost);

        let next = shuffle_reduce(&partials, &state)?;
        let displacement = state
            .centroids
            .iter()
            .zip(&next.centroids)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0_f64, f64::max);
        state = next;
        if displacement < tol {
            converged = true;
            break;
        }
    }

    let assignments = data
        .par_iter()
        .map(|point| nearest(point, &state.centroids).0)
        .collect();
    Ok(KmeansFit {
        state,
        assignments,
        inertia,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(centroids: Vec<Vec<f64>>) -> ClusterState {
        ClusterState {
            centroids,
            iteration: 0,
        }
    }

    #[test]
    fn single_cluster_accumulates_everything() {
        let part = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let partials = map_assign(&part, &state(vec![vec![0.0, 0.0]])).unwrap();
        assert_eq!(partials.len(), 1);
        assert_eq!(partials[0].key, 0);
        assert_eq!(partials[0].sum, vec![9.0, 6.0]);
        assert_eq!(partials[0].count, 3);
    }

    #[test]
    fn equidistant_point_goes_to_the_smaller_id() {
        let part = vec![vec![0.5]];
        let partials = map_assign(&part, &state(vec![vec![0.0], vec![1.0]])).unwrap();
        assert_eq!(partials.len(), 1);
        assert_eq!(partials[0].key, 0);
    }

    #[test]
    fn points_on_centroids_split_into_two_partials() {
        let part = vec![vec![0.0, 0.0], vec![4.0, 4.0]];
        let partials = map_assign(&part, &state(vec![vec![0.0, 0.0], vec![4.0, 4.0]])).unwrap();
        assert_eq!(partials.len(), 2);
        assert_eq!(partials[0].count, 1);
        assert_eq!(partials[1].count, 1);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let part = vec![vec![1.0, 2.0, 3.0]];
        assert!(map_assign(&part, &state(vec![vec![0.0, 0.0]])).is_err());
    }

    #[test]
    fn reduce_computes_barycenters() {
        let prev = state(vec![vec![0.0, 0.0], vec![9.0, 9.0]]);
        let partials = vec![
            PartialSum {
                key: 0,
                sum: vec![2.0, 2.0],
                count: 1,
            },
            PartialSum {
                key: 0,
                sum: vec![4.0, 4.0],
                count: 1,
            },
        ];
        let next = shuffle_reduce(&partials, &prev).unwrap();
        assert_eq!(next.centroids[0], vec![3.0, 3.0]);
        // key 1 got nothing: previous centroid kept
        assert_eq!(next.centroids[1], vec![9.0, 9.0]);
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn reduce_with_single_partial_per_key() {
        let prev = state(vec![vec![0.0]]);
        let partials = vec![PartialSum {
            key: 0,
            sum: vec![10.0],
            count: 4,
        }];
        let next = shuffle_reduce(&partials, &prev).unwrap();
        assert_eq!(next.centroids[0], vec![2.5]);
    }

    fn two_blobs(n_per: usize, gap: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for blob in 0..2 {
            let cx = blob as f64 * gap;
            for _ in 0..n_per {
                data.push(vec![
                    cx + rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ]);
                labels.push(blob);
            }
        }
        (data, labels)
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (data, labels) = two_blobs(40, 25.0, 3);
        let fit = kmeans_fit(&data, 2, 4, 11, 100, 1e-9).unwrap();
        assert!(fit.converged);
        // assignments match blob labels up to cluster relabeling
        let first = fit.assignments[0];
        for (a, l) in fit.assignments.iter().zip(&labels) {
            let expect = if *l == labels[0] { first } else { 1 - first };
            assert_eq!(*a, expect);
        }
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let data = vec![vec![0.0], vec![5.0], vec![9.0]];
        let fit = kmeans_fit(&data, 3, 2, 1, 50, 1e-12).unwrap();
        let last = fit.inertia.last().unwrap();
        assert!(*last < 1e-18);
        let mut sorted = fit.assignments.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn k_larger_than_data_is_an_error() {
        let data = vec![vec![0.0], vec![1.0]];
        assert!(kmeans_fit(&data, 3, 1, 0, 10, 1e-9).is_err());
    }

    #[test]
    fn partition_count_does_not_change_the_result() {
        let (data, _) = two_blobs(30, 8.0, 7);
        let a = kmeans_fit(&data, 2, 1, 5, 60, 1e-12).unwrap();
        let b = kmeans_fit(&data, 2, 8, 5, 60, 1e-12).unwrap();
        for (ca, cb) in a.state.centroids.iter().zip(&b.state.centroids) {
            for (x, y) in ca.iter().zip(cb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn inertia_is_non_increasing() {
        let (data, _) = two_blobs(50, 3.0, 13);
        let fit = kmeans_fit(&data, 4, 3, 2, 100, 0.0).unwrap();
        for w in fit.inertia.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    /// Plain single-loop Lloyd oracle.
    fn lloyd_oracle(
        data: &[Vec<f64>],
        init: &ClusterState,
        iterations: usize,
    ) -> Vec<ClusterState> {
        let mut state = init.clone();
        let mut states = Vec::new();
        for _ in 0..iterations {
            let k = state.k();
            let dim = state.dim();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for point in data {
                let (key, _) = nearest(point, &state.centroids);
                for (s, v) in sums[key].iter_mut().zip(point) {
                    *s += v;
                }
                counts[key] += 1;
            }
            let centroids = (0..k)
                .map(|key| {
                    if counts[key] == 0 {
                        state.centroids[key].clone()
                    } else {
                        sums[key].iter().map(|s| s / counts[key] as f64).collect()
                    }
                })
                .collect();
            state = ClusterState {
                centroids,
                iteration: state.iteration + 1,
            };
            states.push(state.clone());
        }
        states
    }

    #[test]
    fn map_reduce_matches_sequential_lloyd_per_iteration() {
        let (data, _) = two_blobs(35, 4.0, 19);
        for &n_partitions in &[1usize, 2, 8] {
            let init = forgy_init(&data, 3, 23).unwrap();
            let oracle = lloyd_oracle(&data, &init, 10);

            let chunk = data.len().div_ceil(n_partitions);
            let mut state = init.clone();
            for step in oracle {
                let mut partials = Vec::new();
                for part in data.chunks(chunk) {
                    partials.extend(map_assign(part, &state).unwrap());
                }
                state = shuffle_reduce(&partials, &state).unwrap();
                for (a, b) in state.centroids.iter().zip(&step.centroids) {
                    for (x, y) in a.iter().zip(b) {
                        assert!((x - y).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
