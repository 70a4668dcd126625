use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SelectError;
use crate::vector::{euclidean, mean, squared_euclidean};

pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEANS_RESTARTS: usize = 5;
pub const MAX_K: usize = 10;

/// Per-point silhouette values and their mean, with Euclidean distance.
///
/// For point `i` in cluster `C`: `a` is the mean distance to the other members
/// of `C`, `b` the smallest mean distance to the members of another cluster,
/// `s = (b - a) / max(a, b)`. Members of singleton clusters get `s = 0`, as
/// does any point with `max(a, b) = 0`.
pub fn silhouette(points: &[&[f64]], labels: &[usize]) -> Result<(Vec<f64>, f64), SelectError> {
    assert_eq!(points.len(), labels.len());
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_labels];
    for &l in labels {
        sizes[l] += 1;
    }
    let populated = sizes.iter().filter(|&&s| s > 0).count();
    if populated < 2 {
        return Err(SelectError::SingleCluster);
    }
    let s: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; n_labels];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += euclidean(points[i], p);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..n_labels)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    let m = s.iter().sum::<f64>() / s.len() as f64;
    Ok((s, m))
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_euclidean(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    while chosen.len() < k {
        let centers: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].to_vec()).collect();
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a center: pick any unused index
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen.push(next);
    }
    chosen.iter().map(|&i| points[i].to_vec()).collect()
}

/// Moves the farthest member of the largest cluster into every empty one.
fn repair_empty(points: &[&[f64]], labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        let far = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .map(|i| (i, squared_euclidean(points[i], &centers[largest])))
            .fold((usize::MAX, -1.0), |b, c| if c.1 > b.1 { c } else { b })
            .0;
        labels[far] = empty;
        centers[empty] = points[far].to_vec();
    }
}

/// One Lloyd run from k-means++ seeding. Returns labels and inertia.
fn lloyd(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let dim = points[0].len();
    let mut centers = plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        repair_empty(points, &mut next, &mut centers);
        if next == labels {
            break;
        }
        labels = next;
        for (c, center) in centers.iter_mut().enumerate() {
            *center = mean(
                points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| *p),
                dim,
            );
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| squared_euclidean(p, &centers[l]))
        .sum();
    (labels, inertia)
}

/// Best of [`KMEANS_RESTARTS`] runs by inertia. Requires `1 <= k <= n`.
pub fn kmeans(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(k >= 1 && k <= points.len());
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(points, k, rng);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    best.unwrap().0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubClustering {
    pub k: usize,
    pub labels: Vec<usize>,
    pub mean_silhouette: f64,
}

impl SubClustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Sweeps `k` over `2..=min(10, n-1)` and keeps the clustering with the
/// highest mean silhouette (the smaller `k` on ties).
pub fn best_k_subcluster(points: &[&[f64]], seed: u64) -> Result<SubClustering, SelectError> {
    let n = points.len();
    if n < 3 {
        return Err(SelectError::TooFewMembers(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<SubClustering> = None;
    for k in 2..=MAX_K.min(n - 1) {
        let labels = kmeans(points, k, &mut rng);
        let (_, m) = silhouette(points, &labels)?;
        if best.as_ref().is_none_or(|b| m > b.mean_silhouette) {
            best = Some(SubClustering {
                k,
                labels,
                mean_silhouette: m,
            });
        }
    }
    Ok(best.expect("k range is non-empty for n >= 3"))
}
