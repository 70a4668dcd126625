//! Intra-cluster folds and inter-cluster pairings.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{fuse_pair, FusedCandidate, PairOutcome};
use super::ops::{FusionContext, Operand};
use super::{FusionError, Stage};
use crate::corpus::{FusionMode, MergedCorpus, Provenance};

/// The output with the lowest total loss; ties go to the lower strategy index.
pub fn best_output(outcome: &PairOutcome) -> &FusedCandidate {
    outcome
        .outputs
        .iter()
        .min_by_key(|c| (c.merged.provenance.final_loss.total(), c.run.strategy.index))
        .expect("a successful pair has at least one output")
}

/// Folds a cluster's representatives into one corpus: seeded shuffle, then
/// `((r1 ⊕ r2) ⊕ r3) ⊕ …`, carrying the best output of each step forward.
/// A single representative is passed through unchanged.
pub fn intra_cluster_fuse(
    ctx: &FusionContext<'_>,
    reps: &[Operand],
    seed: u64,
) -> Result<MergedCorpus, FusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match reps {
        [] => Err(FusionError::new(Stage::Driver, "", "no representatives to fuse")),
        [only] => Ok(MergedCorpus {
            user: only.user.clone(),
            assistant: only.assistant.clone(),
            provenance: Provenance::passthrough(only.ids.clone(), FusionMode::Intra, seed),
        }),
        _ => {
            let mut order: Vec<&Operand> = reps.iter().collect();
            order.shuffle(&mut rng);
            let mut acc = order[0].clone();
            let mut last: Option<MergedCorpus> = None;
            let mut notes = Vec::new();
            for (step, next) in order[1..].iter().enumerate() {
                let step_seed = rng.gen::<u64>();
                let outcome = fuse_pair(ctx, &acc, next, FusionMode::Intra, step_seed).map_err(|e| {
                    FusionError::new(e.stage, e.pair.clone(), format!("fold step {}: {}", step + 1, e.message))
                })?;
                for e in &outcome.errors {
                    notes.push(format!("step {}: dropped strategy: {e}", step + 1));
                }
                let best = best_output(&outcome).merged.clone();
                acc = Operand::from_merged(&best);
                last = Some(best);
            }
            let mut merged = last.expect("at least one fold step ran");
            merged.provenance.fold_steps = (reps.len() - 1) as u32;
            merged.provenance.seed = seed;
            merged.provenance.notes = notes;
            Ok(merged)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingPolicy {
    /// Seeded random maximal matching across clusters over all representatives.
    #[default]
    RandomMatching,
    /// The same matching restricted to each cluster's first representative.
    CentroidMatching,
}

/// Pairs representatives from different clusters, each used at most once.
///
/// Groups are shuffled internally; then the two groups with the most unpaired
/// members (ties in seeded random order) give up one member each, until fewer
/// than two groups have members left. This pairs as many representatives as
/// any cross-cluster matching can.
pub fn plan_inter_pairs(
    groups: &[Vec<String>],
    policy: PairingPolicy,
    seed: u64,
) -> Result<Vec<(String, String)>, FusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<(u64, Vec<String>)> = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let mut g = match policy {
                PairingPolicy::RandomMatching => g.clone(),
                PairingPolicy::CentroidMatching => vec![g[0].clone()],
            };
            g.shuffle(&mut rng);
            (rng.gen::<u64>(), g)
        })
        .collect();
    if pools.len() < 2 {
        return Err(FusionError::new(
            Stage::Driver,
            "",
            format!("inter-cluster fusion needs at least 2 non-empty clusters, got {}", pools.len()),
        ));
    }
    let mut pairs = Vec::new();
    loop {
        pools.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        if pools.len() < 2 || pools[1].1.is_empty() {
            break;
        }
        let x = pools[0].1.pop().unwrap();
        let y = pools[1].1.pop().unwrap();
        pairs.push((x, y));
    }
    Ok(pairs)
}

/// Runs one fusion per planned pair; each entry keeps the pair's best output
/// or its error.
pub fn inter_cluster_fuse(
    ctx: &FusionContext<'_>,
    pairs: &[(Operand, Operand)],
    seed: u64,
) -> Vec<Result<PairOutcome, FusionError>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs
        .iter()
        .map(|(a, b)| fuse_pair(ctx, a, b, FusionMode::Inter, rng.gen()))
        .collect()
}
