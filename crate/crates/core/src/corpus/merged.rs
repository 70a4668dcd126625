use serde::{Deserialize, Serialize};

use crate::fusion::DomainRelation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Intra,
    Inter,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Intra => "intra",
            FusionMode::Inter => "inter",
        })
    }
}

/// Which of the nine fusion strategies produced a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyTag {
    pub relation: DomainRelation,
    pub index: u8,
    pub name: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalLoss {
    pub cycle1: u32,
    pub cycle2: u32,
}

impl FinalLoss {
    pub fn total(&self) -> u32 {
        self.cycle1 + self.cycle2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Ids of every original sample folded into this corpus.
    pub sources: Vec<String>,
    pub strategy: Option<StrategyTag>,
    pub mode: FusionMode,
    /// Merged-corpus generations in cycle 1 (initial draft included).
    pub cycle1_iters: u32,
    /// Answer updates applied in cycle 2.
    pub cycle2_iters: u32,
    pub final_loss: FinalLoss,
    pub seed: u64,
    /// Number of pairwise fusions an intra-cluster fold went through.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub fold_steps: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl Provenance {
    pub fn passthrough(sources: Vec<String>, mode: FusionMode, seed: u64) -> Self {
        Provenance {
            sources,
            strategy: None,
            mode,
            cycle1_iters: 0,
            cycle2_iters: 0,
            final_loss: FinalLoss::default(),
            seed,
            fold_steps: 0,
            notes: Vec::new(),
        }
    }
}

/// A fused `### User` / `### Assistant` pair with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedCorpus {
    pub user: String,
    pub assistant: String,
    pub provenance: Provenance,
}
