//! Symbolic prompt optimizer: routes unsatisfied loss roots to the matching
//! template variant and fills its feedback slots. Pure; never calls a model.

use std::collections::BTreeSet;

use super::loss::{LossKind, SymbolicLoss};
use super::FusionError;
use crate::prompt::{Operator, PromptPack, PromptTemplate, SlotValues};

/// Defect classes the completeness check can report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Defect {
    /// Key terms went missing.
    Terms,
    /// The question lacks or misuses context and background knowledge.
    Knowledge,
    /// The question is malformed or closed-ended.
    Question,
    /// No direct answer.
    Answer,
}

/// Class of an ICD root; `regeneration` belongs to none.
pub fn defect_of(root: &str) -> Option<Defect> {
    match root {
        "key_term_coverage" => Some(Defect::Terms),
        "context_missing" | "external_knowledge" | "context_contain" => Some(Defect::Knowledge),
        "question_well_formed" | "question_type" => Some(Defect::Question),
        "direct_answer" => Some(Defect::Answer),
        _ => None,
    }
}

use Defect::{Answer as A, Knowledge as K, Question as Q, Terms as T};

/// MCG variants with the defect set each one addresses, in fallback priority
/// order: when no variant matches the defect set exactly, the first variant
/// of maximal size whose set is contained in it wins.
pub const MCG_ROUTES: &[(&str, &[Defect])] = &[
    ("terms_quest_ans", &[T, K, A]),
    ("terms_quest", &[T, K]),
    ("terms_wo_quest", &[T, Q]),
    ("terms_ans", &[T, A]),
    ("quest_ans", &[K, A]),
    ("terms", &[T]),
    ("wo_essential_knowledge", &[K]),
    ("wo_quest", &[Q]),
    ("ans", &[A]),
];

/// Picks the MCG variant for a set of defects (`base` for the empty set).
pub fn mcg_variant_for(defects: &BTreeSet<Defect>) -> &'static str {
    if defects.is_empty() {
        return "base";
    }
    if let Some((v, _)) = MCG_ROUTES
        .iter()
        .find(|(_, set)| set.len() == defects.len() && set.iter().all(|d| defects.contains(d)))
    {
        return v;
    }
    let mut best: Option<(&'static str, usize)> = None;
    for (v, set) in MCG_ROUTES {
        if set.iter().all(|d| defects.contains(d)) && best.is_none_or(|(_, n)| set.len() > n) {
            best = Some((v, set.len()));
        }
    }
    best.map_or("base", |(v, _)| v)
}

/// FAU variant for a final-answer loss. A missing direct answer takes
/// precedence over irrelevant content when both are flagged.
pub fn fau_variant_for(loss: &SymbolicLoss) -> &'static str {
    if loss.is_unsatisfied("direct_answer") {
        "omitted_answer"
    } else {
        "irrelevant_content"
    }
}

/// Next template plus the feedback slot values drawn from the loss.
#[derive(Debug, Clone)]
pub struct OptimizedPrompt {
    pub template: PromptTemplate,
    pub feedback: SlotValues,
}

fn joined(items: &[String]) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.join("; ")
    }
}

fn or_none(s: Option<&str>) -> String {
    s.map_or_else(|| "none".to_string(), str::to_string)
}

/// Feedback slots for MCG variants. Every MCG slot beyond the base ones is
/// filled, so any variant renders.
pub fn mcg_feedback(loss: &SymbolicLoss, uncovered: &[&str]) -> SlotValues {
    let root = |n: &str| loss.root(n);
    let terms = root("key_term_coverage");
    let list = |n: &str, f: &str| root(n).map(|r| r.list(f)).unwrap_or_default();
    let unsat_list = |n: &str, f: &str| {
        if loss.is_unsatisfied(n) {
            list(n, f)
        } else {
            Vec::new()
        }
    };
    let mut question = Vec::new();
    if loss.is_unsatisfied("question_well_formed") {
        question.push(or_none(root("question_well_formed").and_then(|r| r.text("feedback"))));
    }
    if loss.is_unsatisfied("question_type") {
        let kind = root("question_type").and_then(|r| r.text("value")).unwrap_or("closed");
        question.push(format!("the question is {kind}-ended; it should invite a full explanation"));
    }
    let answer = if loss.is_unsatisfied("direct_answer") {
        or_none(root("direct_answer").and_then(|r| r.text("feedback")))
    } else {
        "none".to_string()
    };
    let mut notes: Vec<String> = Vec::new();
    if loss.is_unsatisfied("regeneration") {
        notes.push(or_none(root("regeneration").and_then(|r| r.text("justification"))));
    }
    for name in uncovered {
        notes.push(format!("also unresolved: {name}"));
    }
    SlotValues::new()
        .with("missing_terms", joined(&terms.map(|r| r.list("missing_terms")).unwrap_or_default()))
        .with("retained_terms", joined(&terms.map(|r| r.list("retained_terms")).unwrap_or_default()))
        .with("context_missing", joined(&unsat_list("context_missing", "items")))
        .with("context_contain", joined(&unsat_list("context_contain", "items")))
        .with("external_knowledge", joined(&unsat_list("external_knowledge", "knowledge")))
        .with("question_feedback", joined(&question))
        .with("answer_feedback", answer)
        .with("feedback", joined(&notes))
}

/// Feedback slots for FAU variants.
pub fn fau_feedback(loss: &SymbolicLoss) -> SlotValues {
    let da = loss.root("direct_answer");
    let irr = loss.root("irrelevant_content");
    let answer = if loss.is_unsatisfied("direct_answer") {
        or_none(da.and_then(|r| r.text("feedback")))
    } else {
        "none".to_string()
    };
    let items = if loss.is_unsatisfied("irrelevant_content") {
        irr.map(|r| r.list("items")).unwrap_or_default()
    } else {
        Vec::new()
    };
    let mut notes = Vec::new();
    if loss.is_unsatisfied("direct_answer") && loss.is_unsatisfied("irrelevant_content") {
        notes.push(format!("after adding the direct answer, also remove: {}", joined(&items)));
    }
    SlotValues::new()
        .with("irrelevant_content", joined(&items))
        .with("answer_feedback", answer)
        .with("feedback", joined(&notes))
}

/// Maps `(current template, loss)` to the next template. ICD losses drive
/// MCG templates, FAC losses drive FAU templates.
pub fn optimize_prompt(
    pack: &PromptPack,
    current: &PromptTemplate,
    loss: &SymbolicLoss,
) -> Result<OptimizedPrompt, FusionError> {
    let spo_err = |msg: String| FusionError::new(super::Stage::Spo, "", msg);
    if loss.value() == 0 {
        return Err(spo_err("nothing to optimize: loss is zero".into()));
    }
    let expected = match loss.kind {
        LossKind::Icd => Operator::Mcg,
        LossKind::Fac => Operator::Fau,
    };
    if current.operator != expected {
        return Err(spo_err(format!(
            "{:?} loss cannot update a {} template",
            loss.kind, current.operator
        )));
    }
    let (variant, feedback) = match loss.kind {
        LossKind::Icd => {
            let defects: BTreeSet<Defect> = loss.unsatisfied().filter_map(|r| defect_of(&r.name)).collect();
            let variant = mcg_variant_for(&defects);
            let covered: BTreeSet<Defect> = MCG_ROUTES
                .iter()
                .find(|(v, _)| *v == variant)
                .map(|(_, s)| s.iter().copied().collect())
                .unwrap_or_default();
            let uncovered: Vec<&str> = loss
                .unsatisfied()
                .filter(|r| defect_of(&r.name).is_some_and(|d| !covered.contains(&d)))
                .map(|r| r.name.as_str())
                .collect();
            (variant, mcg_feedback(loss, &uncovered))
        }
        LossKind::Fac => (fau_variant_for(loss), fau_feedback(loss)),
    };
    let template = pack
        .template(expected, variant)
        .map_err(|e| spo_err(e.to_string()))?
        .clone();
    Ok(OptimizedPrompt { template, feedback })
}
