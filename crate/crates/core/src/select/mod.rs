//! Representative selection: one-hop clustering, silhouette-tuned k-means
//! sub-clustering and maximal-marginal-relevance picks.

mod kmeans;
mod mmr;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{best_k_subcluster, kmeans, silhouette, SubClustering, KMEANS_RESTARTS, MAX_K};
pub use mmr::mmr_select;

use crate::corpus::EmbeddedSample;
use crate::vector::cosine;

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("sub-clustering needs at least 3 members, got {0}")]
    TooFewMembers(usize),
    #[error("cluster references unknown sample `{0}`")]
    UnknownSample(String),
}

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHopCluster {
    pub cluster_id: usize,
    pub centroid_id: String,
    /// Centroid first, then absorbed members in input order.
    pub member_ids: Vec<String>,
}

/// Greedy one-hop clustering: samples are visited in a seeded shuffle, and
/// each still-unassigned sample becomes a centroid that absorbs every
/// unassigned sample with cosine similarity `>= threshold`.
pub fn one_hop_cluster(samples: &[EmbeddedSample], threshold: f64, seed: u64) -> Vec<OneHopCluster> {
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assigned = vec![false; n];
    let mut clusters = Vec::new();
    for &c in &order {
        if assigned[c] {
            continue;
        }
        assigned[c] = true;
        let centroid = &samples[c].embedding;
        let absorbed: Vec<usize> = (0..n)
            .into_par_iter()
            .filter(|&j| !assigned[j] && cosine(centroid, &samples[j].embedding) >= threshold)
            .collect();
        let mut member_ids = Vec::with_capacity(absorbed.len() + 1);
        member_ids.push(samples[c].sample_id.clone());
        for j in absorbed {
            assigned[j] = true;
            member_ids.push(samples[j].sample_id.clone());
        }
        clusters.push(OneHopCluster {
            cluster_id: clusters.len(),
            centroid_id: samples[c].sample_id.clone(),
            member_ids,
        });
    }
    clusters
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Centroid,
    SubclusterCenter,
    MmrPick,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Representative {
    pub id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclusterSummary {
    pub k: usize,
    pub sizes: Vec<usize>,
    pub mean_silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRepresentatives {
    pub cluster_id: usize,
    pub representatives: Vec<Representative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subclustering: Option<SubclusterSummary>,
}

impl ClusterRepresentatives {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.representatives.iter().map(|r| r.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub clusters: Vec<ClusterRepresentatives>,
}

impl RepresentativeSet {
    pub fn total(&self) -> usize {
        self.clusters.iter().map(|c| c.representatives.len()).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectConfig {
    pub alpha: f64,
    /// MMR picks per sub-cluster.
    pub reps_per_subcluster: usize,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            alpha: DEFAULT_ALPHA,
            reps_per_subcluster: 2,
            seed: 0,
        }
    }
}

/// Independent, well-mixed seed per cluster so clusters can run in parallel.
fn cluster_seed(seed: u64, cluster: usize) -> u64 {
    let mut z = seed ^ (cluster as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chooses representatives for every cluster.
///
/// The centroid is always kept. With at least 3 other members they are
/// sub-clustered; when that yields at least two sub-clusters of size >= 3,
/// each sub-cluster contributes its MMR picks, otherwise every remaining
/// member passes through.
pub fn select_representatives(
    samples: &[EmbeddedSample],
    clusters: &[OneHopCluster],
    config: &SelectConfig,
) -> Result<RepresentativeSet, SelectError> {
    let index: HashMap<&str, &[f64]> = samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s.embedding.as_slice()))
        .collect();
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| SelectError::UnknownSample(id.to_string()))
    };
    let out: Result<Vec<ClusterRepresentatives>, SelectError> = clusters
        .par_iter()
        .map(|c| {
            let mut reps = vec![Representative {
                id: c.centroid_id.clone(),
                role: Role::Centroid,
            }];
            let rest: Vec<(&str, &[f64])> = c
                .member_ids
                .iter()
                .filter(|m| **m != c.centroid_id)
                .map(|m| lookup(m).map(|v| (m.as_str(), v)))
                .collect::<Result<_, _>>()?;
            let passthrough = |reps: &mut Vec<Representative>| {
                reps.extend(rest.iter().map(|(id, _)| Representative {
                    id: id.to_string(),
                    role: Role::Passthrough,
                }))
            };
            let mut summary = None;
            if rest.len() >= 3 {
                let points: Vec<&[f64]> = rest.iter().map(|r| r.1).collect();
                let sc = best_k_subcluster(&points, cluster_seed(config.seed, c.cluster_id))?;
                let sizes = sc.sizes();
                if sc.k >= 2 && sizes.iter().all(|&s| s >= 3) {
                    for label in 0..sc.k {
                        let members: Vec<(&str, &[f64])> = rest
                            .iter()
                            .zip(&sc.labels)
                            .filter(|(_, &l)| l == label)
                            .map(|(m, _)| *m)
                            .collect();
                        let picks = mmr_select(&members, config.alpha, config.reps_per_subcluster);
                        for (i, id) in picks.into_iter().enumerate() {
                            let role = if i == 0 { Role::SubclusterCenter } else { Role::MmrPick };
                            reps.push(Representative { id, role });
                        }
                    }
                } else {
                    passthrough(&mut reps);
                }
                summary = Some(SubclusterSummary {
                    k: sc.k,
                    sizes,
                    mean_silhouette: sc.mean_silhouette,
                });
            } else {
                passthrough(&mut reps);
            }
            Ok(ClusterRepresentatives {
                cluster_id: c.cluster_id,
                representatives: reps,
                subclustering: summary,
            })
        })
        .collect();
    Ok(RepresentativeSet { clusters: out? })
}
