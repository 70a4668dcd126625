use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::FusionMode;
use crate::fusion::{plan_inter_pairs, PairingPolicy};
use crate::select::RepresentativeSet;

/// Which fusion configurations a run produces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Intra,
    Inter,
    /// Intra folds for clusters with several representatives, inter pairs
    /// over the single-representative clusters, so no sample is used twice.
    #[default]
    Both,
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "intra" => Ok(RunMode::Intra),
            "inter" => Ok(RunMode::Inter),
            "both" | "mixed" => Ok(RunMode::Both),
            other => Err(format!("unknown mode `{other}` (expected intra, inter or both)")),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Intra => "intra",
            RunMode::Inter => "inter",
            RunMode::Both => "both",
        })
    }
}

/// One unit of fusion work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionJob {
    /// `intra-<cluster>` or `inter-<n>`; unique within a plan.
    pub job_id: String,
    pub mode: FusionMode,
    /// Representative ids: the fold order input for intra jobs, the pair for
    /// inter jobs.
    pub ids: Vec<String>,
    pub seed: u64,
}

/// splitmix64 finalizer over `seed` and a stable FNV-1a hash of `key`.
pub(crate) fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed.wrapping_add(h).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic job list for a representative set.
///
/// Intra jobs cover every cluster with at least two representatives. Inter
/// jobs pair representatives across clusters with `pairing`; in
/// [`RunMode::Both`] only single-representative clusters take part, which
/// keeps the provenance of intra and inter outputs disjoint.
pub fn plan_fusion(
    reps: &RepresentativeSet,
    mode: RunMode,
    pairing: PairingPolicy,
    seed: u64,
) -> Result<Vec<FusionJob>, PipelineError> {
    if reps.total() == 0 {
        return Err(PipelineError::Plan("representative set is empty".into()));
    }
    let mut clusters: Vec<_> = reps.clusters.iter().collect();
    clusters.sort_by_key(|c| c.cluster_id);
    let ids = |c: &crate::select::ClusterRepresentatives| -> Vec<String> {
        c.representatives.iter().map(|r| r.id.clone()).collect()
    };
    let mut jobs = Vec::new();
    if mode != RunMode::Inter {
        for c in clusters.iter().filter(|c| c.representatives.len() >= 2) {
            let job_id = format!("intra-{}", c.cluster_id);
            jobs.push(FusionJob {
                seed: derive_seed(seed, &job_id),
                job_id,
                mode: FusionMode::Intra,
                ids: ids(c),
            });
        }
    }
    if mode != RunMode::Intra {
        let groups: Vec<Vec<String>> = clusters
            .iter()
            .filter(|c| mode == RunMode::Inter || c.representatives.len() == 1)
            .map(|c| ids(c))
            .collect();
        let nonempty = groups.iter().filter(|g| !g.is_empty()).count();
        if nonempty >= 2 {
            let pairs = plan_inter_pairs(&groups, pairing, derive_seed(seed, "inter-pairing"))
                .map_err(|e| PipelineError::Plan(e.message))?;
            for (n, (a, b)) in pairs.into_iter().enumerate() {
                let job_id = format!("inter-{n}");
                jobs.push(FusionJob {
                    seed: derive_seed(seed, &job_id),
                    job_id,
                    mode: FusionMode::Inter,
                    ids: vec![a, b],
                });
            }
        } else if mode == RunMode::Inter {
            return Err(PipelineError::Plan(format!(
                "inter-cluster fusion needs representatives from at least 2 clusters, found {nonempty}"
            )));
        }
    }
    Ok(jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::select::{ClusterRepresentatives, Representative, Role};
    use std::collections::HashSet;

    pub(crate) fn rep_set(sizes: &[usize]) -> RepresentativeSet {
        RepresentativeSet {
            clusters: sizes
                .iter()
                .enumerate()
                .map(|(c, &n)| ClusterRepresentatives {
                    cluster_id: c,
                    representatives: (0..n)
                        .map(|i| Representative {
                            id: format!("s{c}-{i}"),
                            role: if i == 0 { Role::Centroid } else { Role::Passthrough },
                        })
                        .collect(),
                    subclustering: None,
                })
                .collect(),
        }
    }

    #[test]
    fn intra_jobs_cover_multi_rep_clusters() {
        let reps = rep_set(&[3, 1, 2, 1, 1, 1, 4, 1, 1, 1]);
        let jobs = plan_fusion(&reps, RunMode::Intra, PairingPolicy::default(), 7).unwrap();
        assert_eq!(jobs.len(), 3);
        assert!(jobs.iter().all(|j| j.mode == FusionMode::Intra));
    }

    #[test]
    fn same_seed_same_plan() {
        let reps = rep_set(&[3, 1, 2, 1, 1, 1, 4, 1, 1, 1]);
        for mode in [RunMode::Intra, RunMode::Inter, RunMode::Both] {
            let a = plan_fusion(&reps, mode, PairingPolicy::default(), 11).unwrap();
            let b = plan_fusion(&reps, mode, PairingPolicy::default(), 11).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn both_mode_is_disjoint_union() {
        let reps = rep_set(&[3, 1, 2, 1, 1, 1, 4, 1, 1, 1]);
        let jobs = plan_fusion(&reps, RunMode::Both, PairingPolicy::default(), 3).unwrap();
        let intra: Vec<_> = jobs.iter().filter(|j| j.mode == FusionMode::Intra).collect();
        let inter: Vec<_> = jobs.iter().filter(|j| j.mode == FusionMode::Inter).collect();
        assert_eq!(intra.len(), 3);
        // seven singleton clusters give three pairs
        assert_eq!(inter.len(), 3);
        let mut seen = HashSet::new();
        for j in &jobs {
            for id in &j.ids {
                assert!(seen.insert(id.clone()), "{id} used twice");
            }
        }
    }

    #[test]
    fn empty_set_is_an_error() {
        let reps = RepresentativeSet { clusters: Vec::new() };
        assert!(plan_fusion(&reps, RunMode::Both, PairingPolicy::default(), 0).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("INTER".parse::<RunMode>().unwrap(), RunMode::Inter);
        assert_eq!("mixed".parse::<RunMode>().unwrap(), RunMode::Both);
        assert!("all".parse::<RunMode>().is_err());
    }
}
