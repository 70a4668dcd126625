//! Two-to-one corpus fusion.
//!
//! For a pair of corpora the engine classifies their domain relation, then
//! runs each of the three strategies for that relation through two cycles:
//!
//! 1. *Question optimization*: generate a merged draft, score it with the
//!    completeness check, and let the symbolic optimizer pick a better
//!    template for the next draft, up to the generation budget.
//! 2. *Answer optimization*: score the best draft's answer with the final
//!    answer check and rewrite only the answer, again up to the budget.
//!
//! The result per strategy combines the best cycle-1 user section with the
//! best cycle-2 assistant section.

mod drivers;
mod engine;
mod loss;
mod ops;
mod spo;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use drivers::{
    best_output, inter_cluster_fuse, intra_cluster_fuse, plan_inter_pairs, PairingPolicy,
};
pub use engine::{fuse_pair, select_candidate, FusedCandidate, PairOutcome, StrategyRun};
pub use loss::{LossKind, RootCondition, SymbolicLoss};
pub use ops::{
    analyze_domain, check_final_answer, detect_completeness, generate_merged, update_answer,
    DomainAnalysis, Draft, FusionContext, Operand,
};
pub use spo::{
    defect_of, fau_variant_for, mcg_variant_for, optimize_prompt, Defect, OptimizedPrompt,
    MCG_ROUTES,
};

use crate::gateway::SchemaRegistry;

pub const DA_SCHEMA: &str = "domain_analysis";
pub const ICD_SCHEMA: &str = "icd_loss";
pub const FAC_SCHEMA: &str = "fac_loss";

/// Every MCG variant a prompt pack must provide.
pub const MCG_VARIANTS: [&str; 10] = [
    "base",
    "terms",
    "terms_ans",
    "terms_quest",
    "terms_quest_ans",
    "terms_wo_quest",
    "wo_quest",
    "wo_essential_knowledge",
    "quest_ans",
    "ans",
];

pub const FAU_VARIANTS: [&str; 2] = ["omitted_answer", "irrelevant_content"];

pub const DEFAULT_BUDGET: u32 = 3;
pub const DA_TEMPERATURE: f64 = 0.4;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

pub(crate) fn register_schemas(registry: &mut SchemaRegistry) {
    registry.register(DA_SCHEMA, ops::validate_domain_analysis);
    registry.register(ICD_SCHEMA, loss::validate_icd);
    registry.register(FAC_SCHEMA, loss::validate_fac);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRelation {
    Same,
    Related,
    Unrelated,
}

impl DomainRelation {
    pub const ALL: [DomainRelation; 3] = [
        DomainRelation::Same,
        DomainRelation::Related,
        DomainRelation::Unrelated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainRelation::Same => "same",
            DomainRelation::Related => "related",
            DomainRelation::Unrelated => "unrelated",
        }
    }

    /// Accepts `same`, `Related`, `unrelated-domain`, `same domain`, ...
    pub fn parse(s: &str) -> Option<DomainRelation> {
        let s = s.trim().to_ascii_lowercase();
        let s = s
            .strip_suffix("-domain")
            .or_else(|| s.strip_suffix(" domain"))
            .or_else(|| s.strip_suffix("_domain"))
            .unwrap_or(&s);
        DomainRelation::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for DomainRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A natural-language fusion strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionStrategy {
    pub relation: DomainRelation,
    /// 1, 2 or 3 within the relation.
    pub index: u8,
    pub name: String,
    pub instruction_text: String,
}

/// The pack's three strategies for `relation`.
pub fn pick_strategies(pack: &crate::prompt::PromptPack, relation: DomainRelation) -> Vec<FusionStrategy> {
    pack.strategies(relation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Da,
    Mcg,
    Icd,
    Fac,
    Fau,
    Spo,
    /// Fold or pairing level failures.
    Driver,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Da => "DA",
            Stage::Mcg => "MCG",
            Stage::Icd => "ICD",
            Stage::Fac => "FAC",
            Stage::Fau => "FAU",
            Stage::Spo => "SPO",
            Stage::Driver => "driver",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("fusion of {pair} failed at {stage}: {message}")]
pub struct FusionError {
    pub stage: Stage,
    /// Source ids of the pair, joined with `+`.
    pub pair: String,
    pub message: String,
}

impl FusionError {
    pub fn new(stage: Stage, pair: impl Into<String>, message: impl Into<String>) -> Self {
        FusionError {
            stage,
            pair: pair.into(),
            message: message.into(),
        }
    }

    pub(crate) fn with_pair(mut self, pair: &str) -> Self {
        if self.pair.is_empty() {
            self.pair = pair.to_string();
        }
        self
    }
}
