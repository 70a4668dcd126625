//! Score denoising through a global score transition matrix.
//!
//! Raw scores of a sample and of its two nearest embedding neighbours are
//! summarised into first-, second- and third-order consensus frequencies. For
//! a transition matrix `T` (row = true score, column = observed score) and a
//! prior `p`, the model predicts
//!
//! ```text
//! q1[i]       = Σ_k p_k T[k][i]
//! q2[z][i]    = Σ_k p_k T[k][i] T[k][i+z]
//! q3[z][g][i] = Σ_k p_k T[k][i] T[k][i+z] T[k][i+g]      (indices mod K)
//! ```
//!
//! [`solve_transition`] fits `(T, p)` to the empirical frequencies and the
//! corrected score is the Bayes-optimal true score given the observation.

mod knn;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use knn::{knn_neighbors, knn_triples, sampled_triples, triples_from_neighbors};
pub use solver::{solve_transition, SolveResult, SolverConfig};

use crate::corpus::EmbeddedSample;

#[derive(Debug, Error, PartialEq)]
pub enum DenoiseError {
    #[error("need at least 3 scored samples for neighbour triples, got {0}")]
    TooFewSamples(usize),
    #[error("sample `{0}` has no raw score")]
    Unscored(String),
    #[error("score {score} is outside 0..{k}")]
    ScoreOutOfRange { score: u8, k: usize },
    #[error("no triples to estimate consensus from")]
    NoTriples,
    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
}

const STOCHASTIC_TOL: f64 = 1e-6;

/// `(i + g) mod k` on 0-based score indices.
pub fn cyclic_shift_index(i: usize, g: usize, k: usize) -> usize {
    (i + g) % k
}

/// Row-stochastic `K×K` matrix: entry `(i, j)` is P(observed j | true i).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, DenoiseError> {
        let k = rows.len();
        if k == 0 {
            return Err(DenoiseError::InvalidMatrix("empty".into()));
        }
        let mut entries = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(DenoiseError::InvalidMatrix(format!("row {i} has {} entries", row.len())));
            }
            if row.iter().any(|x| x.is_nan() || *x < 0.0) {
                return Err(DenoiseError::InvalidMatrix(format!("row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(DenoiseError::InvalidMatrix(format!("row {i} sums to {s}")));
            }
            entries.extend_from_slice(row);
        }
        Ok(TransitionMatrix { k, entries })
    }

    pub(crate) fn from_flat(k: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), k * k);
        TransitionMatrix { k, entries }
    }

    pub fn identity(k: usize) -> Self {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        TransitionMatrix { k, entries }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|i| self.row(i).to_vec()).collect()
    }

    pub(crate) fn flat(&self) -> &[f64] {
        &self.entries
    }

    /// Largest per-row total variation distance to `other`.
    pub fn max_row_tv(&self, other: &TransitionMatrix) -> f64 {
        (0..self.k)
            .map(|i| {
                0.5 * self
                    .row(i)
                    .iter()
                    .zip(other.row(i))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = DenoiseError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        TransitionMatrix::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(t: TransitionMatrix) -> Self {
        t.rows()
    }
}

/// Distribution of true scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScorePrior(Vec<f64>);

impl ScorePrior {
    pub fn new(p: Vec<f64>) -> Result<Self, DenoiseError> {
        if p.is_empty() || p.iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(DenoiseError::InvalidPrior("entries must be non-negative".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(DenoiseError::InvalidPrior(format!("sums to {s}")));
        }
        Ok(ScorePrior(p))
    }

    pub fn uniform(k: usize) -> Self {
        ScorePrior(vec![1.0 / k as f64; k])
    }

    pub(crate) fn from_raw(p: Vec<f64>) -> Self {
        ScorePrior(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ScorePrior {
    type Error = DenoiseError;
    fn try_from(p: Vec<f64>) -> Result<Self, Self::Error> {
        ScorePrior::new(p)
    }
}

impl From<ScorePrior> for Vec<f64> {
    fn from(p: ScorePrior) -> Self {
        p.0
    }
}

/// Raw scores of an anchor and its first and second nearest neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeighborTriple {
    pub anchor: u8,
    pub nn1: u8,
    pub nn2: u8,
}

/// First-, second- and third-order consensus frequencies.
///
/// Storage is flat: `q2` is indexed `z*K + i`, `q3` is `(z*K + g)*K + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEstimates {
    pub k: usize,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub q3: Vec<f64>,
}

impl ConsensusEstimates {
    pub fn zeros(k: usize) -> Self {
        ConsensusEstimates {
            k,
            q1: vec![0.0; k],
            q2: vec![0.0; k * k],
            q3: vec![0.0; k * k * k],
        }
    }

    pub fn q2(&self, z: usize, i: usize) -> f64 {
        self.q2[z * self.k + i]
    }

    pub fn q3(&self, z: usize, g: usize, i: usize) -> f64 {
        self.q3[(z * self.k + g) * self.k + i]
    }

    /// Sum of squared differences over all three families.
    pub fn squared_distance(&self, other: &ConsensusEstimates) -> f64 {
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        sq(&self.q1, &other.q1) + sq(&self.q2, &other.q2) + sq(&self.q3, &other.q3)
    }
}

/// Empirical consensus frequencies over `triples`.
pub fn estimate_consensus(triples: &[NeighborTriple], k: usize) -> Result<ConsensusEstimates, DenoiseError> {
    if triples.is_empty() {
        return Err(DenoiseError::NoTriples);
    }
    let mut est = ConsensusEstimates::zeros(k);
    let unit = 1.0 / triples.len() as f64;
    for t in triples {
        let (i, a, b) = (t.anchor as usize, t.nn1 as usize, t.nn2 as usize);
        for s in [t.anchor, t.nn1, t.nn2] {
            if s as usize >= k {
                return Err(DenoiseError::ScoreOutOfRange { score: s, k });
            }
        }
        // nn1 = i + z and nn2 = i + g pin down z and g uniquely
        let z = (a + k - i) % k;
        let g = (b + k - i) % k;
        est.q1[i] += unit;
        est.q2[z * k + i] += unit;
        est.q3[(z * k + g) * k + i] += unit;
    }
    Ok(est)
}

/// Consensus frequencies implied by `(T, p)`.
pub fn model_consensus(t: &TransitionMatrix, p: &ScorePrior) -> ConsensusEstimates {
    solver::model_flat(t.k(), t.flat(), p.as_slice())
}

fn check_score(s: u8, k: usize) -> usize {
    assert!((s as usize) < k, "score {s} outside 0..{k}");
    s as usize
}

/// Index of the largest value; ties go to the lower index.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Most probable true score for each observed score: `argmax_i p_i T[i][y]`,
/// ties toward the lower index.
pub fn correct_scores(t: &TransitionMatrix, p: &ScorePrior, observed: &[u8]) -> Vec<u8> {
    let k = t.k();
    let table: Vec<u8> = (0..k)
        .map(|y| argmax((0..k).map(|i| p.as_slice()[i] * t.get(i, y))) as u8)
        .collect();
    observed.iter().map(|&y| table[check_score(y, k)]).collect()
}

/// Bayes correction that also conditions on the two nearest neighbours'
/// observed scores, treating the three observations as independent draws from
/// the same true score: `argmax_i p_i T[i][y] T[i][y_nn1] T[i][y_nn2]`.
/// Falls back to [`correct_scores`] for a sample whose posterior vanishes.
pub fn correct_scores_with_neighbors(
    t: &TransitionMatrix,
    p: &ScorePrior,
    observed: &[u8],
    neighbors: &[[usize; 2]],
) -> Vec<u8> {
    assert_eq!(observed.len(), neighbors.len());
    let k = t.k();
    let single = correct_scores(t, p, observed);
    observed
        .iter()
        .zip(neighbors)
        .enumerate()
        .map(|(n, (&y, nb))| {
            let (y0, y1, y2) = (
                check_score(y, k),
                check_score(observed[nb[0]], k),
                check_score(observed[nb[1]], k),
            );
            let post: Vec<f64> = (0..k)
                .map(|i| p.as_slice()[i] * t.get(i, y0) * t.get(i, y1) * t.get(i, y2))
                .collect();
            if post.iter().all(|&v| v <= f64::MIN_POSITIVE) {
                single[n]
            } else {
                argmax(post.into_iter()) as u8
            }
        })
        .collect()
}

/// Which rule produces corrected scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    /// Posterior given the sample's own observed score.
    Observed,
    /// Posterior given the sample's and its two nearest neighbours' scores.
    #[default]
    Neighbors,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiseConfig {
    pub k: usize,
    pub rounds: usize,
    pub sample_fraction: f64,
    pub seed: u64,
    pub correction: Correction,
    pub solver: SolverConfig,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            k: crate::K,
            rounds: 3,
            sample_fraction: 0.9,
            seed: 0,
            correction: Correction::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseOutcome {
    pub fit: SolveResult,
    pub empirical: ConsensusEstimates,
    pub triples: usize,
    /// Corrected score per input sample, in input order.
    pub corrected: Vec<u8>,
}

/// Full denoising pass: sampled triples, consensus, solve, correct.
pub fn denoise(samples: &[EmbeddedSample], config: &DenoiseConfig) -> Result<DenoiseOutcome, DenoiseError> {
    let observed: Vec<u8> = samples
        .iter()
        .map(|s| {
            let y = s.raw_score.ok_or_else(|| DenoiseError::Unscored(s.sample_id.clone()))?;
            if y as usize >= config.k {
                return Err(DenoiseError::ScoreOutOfRange { score: y, k: config.k });
            }
            Ok(y)
        })
        .collect::<Result<_, _>>()?;
    let triples = sampled_triples(samples, config.rounds, config.sample_fraction, config.seed)?;
    let empirical = estimate_consensus(&triples, config.k)?;
    let fit = solve_transition(&empirical, &config.solver);
    let corrected = match config.correction {
        Correction::Observed => correct_scores(&fit.t, &fit.p, &observed),
        Correction::Neighbors => {
            let ids: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
            let rows: Vec<&[f64]> = samples.iter().map(|s| s.embedding.as_slice()).collect();
            let nb = knn_neighbors(&ids, &rows)?;
            correct_scores_with_neighbors(&fit.t, &fit.p, &observed, &nb)
        }
    };
    Ok(DenoiseOutcome {
        fit,
        empirical,
        triples: triples.len(),
        corrected,
    })
}
