use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DenoiseError, NeighborTriple};
use crate::corpus::EmbeddedSample;
use crate::vector::dot;

/// Exact two nearest neighbours of every row by cosine similarity (rows are
/// unit-norm, so the dot product is used). Ties go to the ascending id.
pub fn knn_neighbors(ids: &[&str], rows: &[&[f64]]) -> Result<Vec<[usize; 2]>, DenoiseError> {
    let n = rows.len();
    if n < 3 {
        return Err(DenoiseError::TooFewSamples(n));
    }
    let better = |(sa, a): (f64, usize), (sb, b): (f64, usize)| sa > sb || (sa == sb && ids[a] < ids[b]);
    Ok((0..n)
        .into_par_iter()
        .map(|anchor| {
            let mut best: [(f64, usize); 2] = [(f64::NEG_INFINITY, usize::MAX); 2];
            for j in 0..n {
                if j == anchor {
                    continue;
                }
                let cand = (dot(rows[anchor], rows[j]), j);
                if best[0].1 == usize::MAX || better(cand, best[0]) {
                    best[1] = best[0];
                    best[0] = cand;
                } else if best[1].1 == usize::MAX || better(cand, best[1]) {
                    best[1] = cand;
                }
            }
            [best[0].1, best[1].1]
        })
        .collect())
}

fn scores(samples: &[EmbeddedSample]) -> Result<Vec<u8>, DenoiseError> {
    samples
        .iter()
        .map(|s| s.raw_score.ok_or_else(|| DenoiseError::Unscored(s.sample_id.clone())))
        .collect()
}

pub fn triples_from_neighbors(scores: &[u8], neighbors: &[[usize; 2]]) -> Vec<NeighborTriple> {
    neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| NeighborTriple {
            anchor: scores[i],
            nn1: scores[nb[0]],
            nn2: scores[nb[1]],
        })
        .collect()
}

/// One triple per sample from an exact neighbour search over all samples.
pub fn knn_triples(samples: &[EmbeddedSample]) -> Result<Vec<NeighborTriple>, DenoiseError> {
    if samples.len() < 3 {
        return Err(DenoiseError::TooFewSamples(samples.len()));
    }
    let y = scores(samples)?;
    let ids: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.embedding.as_slice()).collect();
    Ok(triples_from_neighbors(&y, &knn_neighbors(&ids, &rows)?))
}

/// Pools triples over `rounds` seeded random subsets, each holding
/// `fraction` of the samples (at least 3); neighbours are searched within the
/// subset only.
pub fn sampled_triples(
    samples: &[EmbeddedSample],
    rounds: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<NeighborTriple>, DenoiseError> {
    let n = samples.len();
    if n < 3 {
        return Err(DenoiseError::TooFewSamples(n));
    }
    let y = scores(samples)?;
    let take = ((n as f64 * fraction).ceil() as usize).clamp(3, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rounds * take);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..rounds.max(1) {
        order.shuffle(&mut rng);
        let mut subset = order[..take].to_vec();
        subset.sort_unstable();
        let ids: Vec<&str> = subset.iter().map(|&i| samples[i].sample_id.as_str()).collect();
        let rows: Vec<&[f64]> = subset.iter().map(|&i| samples[i].embedding.as_slice()).collect();
        let sub_scores: Vec<u8> = subset.iter().map(|&i| y[i]).collect();
        let nb = knn_neighbors(&ids, &rows)?;
        out.extend(triples_from_neighbors(&sub_scores, &nb));
    }
    Ok(out)
}
