use log::debug;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    analyze_domain, check_final_answer, detect_completeness, generate_merged, DomainAnalysis, Draft,
    FusionContext, Operand,
};
use super::spo::optimize_prompt;
use super::{FusionError, FusionStrategy, Stage};
use crate::corpus::{FinalLoss, FusionMode, MergedCorpus, Provenance, StrategyTag};
use crate::prompt::{Operator, SlotValues};

/// Index of the candidate to keep: the first zero-loss one, else the unique
/// minimum, else a uniform draw among the minima.
pub fn select_candidate(losses: &[u32], rng: &mut impl Rng) -> usize {
    assert!(!losses.is_empty());
    if let Some(i) = losses.iter().position(|&l| l == 0) {
        return i;
    }
    let min = *losses.iter().min().unwrap();
    let minima: Vec<usize> = (0..losses.len()).filter(|&i| losses[i] == min).collect();
    if minima.len() == 1 {
        minima[0]
    } else {
        minima[rng.gen_range(0..minima.len())]
    }
}

/// Trace of one strategy through both cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: FusionStrategy,
    /// Completeness loss of every cycle-1 generation, in order.
    pub cycle1_losses: Vec<u32>,
    /// MCG variant used for every cycle-1 generation.
    pub cycle1_variants: Vec<String>,
    pub cycle1_choice: usize,
    /// Final-answer loss of the cycle-1 winner and of every answer update.
    pub cycle2_losses: Vec<u32>,
    pub cycle2_variants: Vec<String>,
    pub cycle2_choice: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedCandidate {
    pub merged: MergedCorpus,
    pub run: StrategyRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub analysis: DomainAnalysis,
    /// One entry per strategy that completed, in strategy order.
    pub outputs: Vec<FusedCandidate>,
    /// Strategies that failed, with their errors.
    pub errors: Vec<FusionError>,
}

fn run_strategy(
    ctx: &FusionContext<'_>,
    a: &Operand,
    b: &Operand,
    analysis: &DomainAnalysis,
    strategy: &FusionStrategy,
    rng: &mut ChaCha8Rng,
    pair: &str,
) -> Result<(Draft, StrategyRun, FinalLoss), FusionError> {
    let budget = ctx.budget.max(1) as usize;
    let key_terms = analysis.key_terms();
    let spo = |e: FusionError| e.with_pair(pair);

    // cycle 1: question optimization
    let mut template = ctx
        .pack
        .template(Operator::Mcg, "base")
        .map_err(|e| FusionError::new(Stage::Mcg, pair, e.to_string()))?
        .clone();
    let mut feedback = SlotValues::new();
    let mut drafts = Vec::new();
    let mut losses = Vec::new();
    let mut variants = Vec::new();
    loop {
        let draft = generate_merged(ctx, a, b, analysis, strategy, &template, &feedback)?;
        let loss = detect_completeness(ctx, &draft, &key_terms, pair)?;
        variants.push(template.variant.clone());
        drafts.push(draft);
        losses.push(loss.value());
        if loss.value() == 0 || drafts.len() >= budget {
            break;
        }
        let next = optimize_prompt(ctx.pack, &template, &loss).map_err(spo)?;
        template = next.template;
        feedback = next.feedback;
    }
    let c1 = select_candidate(&losses, rng);
    let winner = drafts.swap_remove(c1);

    // cycle 2: answer optimization; the user section is frozen from here on
    let mut fau = ctx
        .pack
        .template(Operator::Fau, super::FAU_VARIANTS[0])
        .map_err(|e| FusionError::new(Stage::Fau, pair, e.to_string()))?
        .clone();
    let mut answers = vec![winner.assistant.clone()];
    let mut c2_losses = Vec::new();
    let mut c2_variants = Vec::new();
    let mut current = winner.clone();
    loop {
        let loss = check_final_answer(ctx, &current, pair)?;
        c2_losses.push(loss.value());
        if loss.value() == 0 || answers.len() >= budget {
            break;
        }
        let next = optimize_prompt(ctx.pack, &fau, &loss).map_err(spo)?;
        fau = next.template.clone();
        c2_variants.push(fau.variant.clone());
        current = super::ops::update_answer(ctx, &current, &next, pair)?;
        answers.push(current.assistant.clone());
    }
    let c2 = select_candidate(&c2_losses, rng);
    let final_draft = Draft {
        user: winner.user,
        assistant: answers.swap_remove(c2),
    };
    let final_loss = FinalLoss {
        cycle1: losses[c1],
        cycle2: c2_losses[c2],
    };
    let run = StrategyRun {
        strategy: strategy.clone(),
        cycle1_losses: losses,
        cycle1_variants: variants,
        cycle1_choice: c1,
        cycle2_losses: c2_losses,
        cycle2_variants: c2_variants,
        cycle2_choice: c2,
    };
    Ok((final_draft, run, final_loss))
}

/// Fuses two corpora, producing up to one merged corpus per strategy.
///
/// Fails when the operands overlap, when domain analysis fails, or when every
/// strategy fails; individual strategy failures are reported in
/// [`PairOutcome::errors`].
pub fn fuse_pair(
    ctx: &FusionContext<'_>,
    a: &Operand,
    b: &Operand,
    mode: FusionMode,
    seed: u64,
) -> Result<PairOutcome, FusionError> {
    let pair = format!("{}+{}", a.label(), b.label());
    if a.ids.iter().any(|id| b.ids.contains(id)) {
        return Err(FusionError::new(Stage::Driver, &pair, "operands share source ids"));
    }
    let analysis = analyze_domain(ctx, a, b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outputs = Vec::new();
    let mut errors = Vec::new();
    let sources: Vec<String> = a.ids.iter().chain(&b.ids).cloned().collect();
    for strategy in super::pick_strategies(ctx.pack, analysis.relation) {
        match run_strategy(ctx, a, b, &analysis, &strategy, &mut rng, &pair) {
            Ok((draft, run, final_loss)) => {
                let provenance = Provenance {
                    sources: sources.clone(),
                    strategy: Some(StrategyTag {
                        relation: strategy.relation,
                        index: strategy.index,
                        name: strategy.name.clone(),
                    }),
                    mode,
                    cycle1_iters: run.cycle1_losses.len() as u32,
                    cycle2_iters: (run.cycle2_losses.len() - 1) as u32,
                    final_loss,
                    seed,
                    fold_steps: 0,
                    notes: Vec::new(),
                };
                outputs.push(FusedCandidate {
                    merged: MergedCorpus {
                        user: draft.user,
                        assistant: draft.assistant,
                        provenance,
                    },
                    run,
                });
            }
            Err(e) => {
                debug!("strategy {}/{} dropped: {e}", strategy.relation, strategy.index);
                errors.push(e);
            }
        }
    }
    if outputs.is_empty() {
        let detail: Vec<String> = errors.iter().map(ToString::to_string).collect();
        let stage = errors.last().map_or(Stage::Driver, |e| e.stage);
        return Err(FusionError::new(stage, &pair, format!("every strategy failed: {}", detail.join(" | "))));
    }
    Ok(PairOutcome {
        analysis,
        outputs,
        errors,
    })
}
