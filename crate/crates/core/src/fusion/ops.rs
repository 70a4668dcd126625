//! The model-backed fusion operators.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::loss::{LossKind, SymbolicLoss};
use super::spo::OptimizedPrompt;
use super::{DomainRelation, FusionError, FusionStrategy, Stage, DA_SCHEMA, FAC_SCHEMA, ICD_SCHEMA};
use crate::corpus::{format_marker, parse_marker_reply, CorpusSample, MergedCorpus};
use crate::gateway::{Expect, Gateway, GatewayRequest};
use crate::prompt::{Operator, PromptPack, PromptTemplate, SlotValues};

/// Shared handles for one fusion run.
#[derive(Clone, Copy)]
pub struct FusionContext<'a> {
    pub gateway: &'a Gateway,
    pub pack: &'a PromptPack,
    /// Generations allowed per strategy and cycle.
    pub budget: u32,
    pub da_temperature: f64,
    pub temperature: f64,
}

impl<'a> FusionContext<'a> {
    pub fn new(gateway: &'a Gateway, pack: &'a PromptPack) -> Self {
        FusionContext {
            gateway,
            pack,
            budget: super::DEFAULT_BUDGET,
            da_temperature: super::DA_TEMPERATURE,
            temperature: super::DEFAULT_TEMPERATURE,
        }
    }
}

/// One side of a fusion: an original sample or an earlier fusion result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operand {
    /// Original sample ids this operand stands for.
    pub ids: Vec<String>,
    pub user: String,
    pub assistant: String,
}

impl Operand {
    pub fn from_sample(s: &CorpusSample) -> Self {
        Operand {
            ids: vec![s.id.clone()],
            user: s.user_text(),
            assistant: s.response.clone(),
        }
    }

    pub fn from_merged(m: &MergedCorpus) -> Self {
        Operand {
            ids: m.provenance.sources.clone(),
            user: m.user.clone(),
            assistant: m.assistant.clone(),
        }
    }

    pub fn marker(&self) -> String {
        format_marker(&self.user, &self.assistant)
    }

    pub fn label(&self) -> String {
        self.ids.join("+")
    }
}

/// A merged question/answer pair under construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draft {
    pub user: String,
    pub assistant: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainAnalysis {
    pub relation: DomainRelation,
    pub domain_a: String,
    pub domain_b: String,
    pub key_terms_a: Vec<String>,
    pub key_terms_b: Vec<String>,
    pub matching_pattern: String,
}

impl DomainAnalysis {
    /// Terms of both sides, deduplicated case-insensitively.
    pub fn key_terms(&self) -> Vec<String> {
        dedup_terms(self.key_terms_a.iter().chain(&self.key_terms_b).cloned())
    }
}

fn dedup_terms(terms: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    terms
        .into_iter()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty() && seen.insert(t.to_lowercase()))
        .collect()
}

fn string_list(v: Option<&Value>) -> Option<Vec<String>> {
    match v {
        None | Some(Value::Null) => Some(Vec::new()),
        Some(Value::Array(a)) => a.iter().map(|x| x.as_str().map(str::to_string)).collect(),
        Some(_) => None,
    }
}

fn parse_domain_analysis(v: &Value) -> Result<DomainAnalysis, String> {
    let relation = v
        .get("relation")
        .and_then(Value::as_str)
        .ok_or("missing `relation`")?;
    let relation =
        DomainRelation::parse(relation).ok_or_else(|| format!("unknown relation `{relation}`"))?;
    let text = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
    let terms = |k: &str| string_list(v.get(k)).ok_or_else(|| format!("`{k}` must be a list of strings"));
    Ok(DomainAnalysis {
        relation,
        domain_a: text("domain_a"),
        domain_b: text("domain_b"),
        key_terms_a: dedup_terms(terms("key_terms_a")?),
        key_terms_b: dedup_terms(terms("key_terms_b")?),
        matching_pattern: text("matching_pattern"),
    })
}

pub(crate) fn validate_domain_analysis(v: &Value) -> Result<(), String> {
    parse_domain_analysis(v).map(|_| ())
}

#[allow(clippy::too_many_arguments)]
fn call(
    ctx: &FusionContext<'_>,
    stage: Stage,
    pair: &str,
    operator: Operator,
    template: &PromptTemplate,
    slots: &SlotValues,
    expect: Expect,
    temperature: f64,
) -> Result<crate::gateway::GatewayResponse, FusionError> {
    let err = |m: String| FusionError::new(stage, pair, m);
    let prompt = template.render(slots).map_err(|e| err(e.to_string()))?;
    let fp: Vec<(&str, &str)> = std::iter::once(("variant", template.variant.as_str()))
        .chain(slots.iter())
        .collect();
    let request = GatewayRequest::new(operator.name(), prompt, expect)
        .temperature(temperature)
        .fingerprint_slots(&fp);
    ctx.gateway.invoke(&request).map_err(|e| err(e.to_string()))
}

/// Classifies the domain relation and extracts key terms of both sides.
pub fn analyze_domain(ctx: &FusionContext<'_>, a: &Operand, b: &Operand) -> Result<DomainAnalysis, FusionError> {
    let pair = format!("{}+{}", a.label(), b.label());
    let template = ctx
        .pack
        .template(Operator::Da, "default")
        .map_err(|e| FusionError::new(Stage::Da, &pair, e.to_string()))?;
    let slots = SlotValues::new().with("corpus_a", a.marker()).with("corpus_b", b.marker());
    let resp = call(ctx, Stage::Da, &pair, Operator::Da, template, &slots, Expect::Json(DA_SCHEMA), ctx.da_temperature)?;
    parse_domain_analysis(resp.parsed.as_ref().expect("validated"))
        .map_err(|e| FusionError::new(Stage::Da, &pair, e))
}

/// Slots every MCG template receives; feedback slots default to "none".
pub(crate) fn mcg_slots(a: &Operand, b: &Operand, analysis: &DomainAnalysis, strategy: &FusionStrategy) -> SlotValues {
    let terms = analysis.key_terms();
    let mut slots = SlotValues::new()
        .with("corpus_a", a.marker())
        .with("corpus_b", b.marker())
        .with("relation", analysis.relation.name())
        .with("strategy_name", strategy.name.as_str())
        .with("strategy_text", strategy.instruction_text.as_str())
        .with("key_terms", if terms.is_empty() { "none".to_string() } else { terms.join("; ") });
    for s in [
        "missing_terms",
        "retained_terms",
        "context_missing",
        "context_contain",
        "external_knowledge",
        "question_feedback",
        "answer_feedback",
        "feedback",
    ] {
        slots.set(s, "none");
    }
    slots
}

/// One merged-corpus generation with `template` (an MCG variant).
pub fn generate_merged(
    ctx: &FusionContext<'_>,
    a: &Operand,
    b: &Operand,
    analysis: &DomainAnalysis,
    strategy: &FusionStrategy,
    template: &PromptTemplate,
    feedback: &SlotValues,
) -> Result<Draft, FusionError> {
    let pair = format!("{}+{}", a.label(), b.label());
    if template.operator != Operator::Mcg {
        return Err(FusionError::new(Stage::Mcg, &pair, format!("{} template given to MCG", template.operator)));
    }
    let mut slots = mcg_slots(a, b, analysis, strategy);
    for (k, v) in feedback.iter() {
        slots.set(k, v);
    }
    let resp = call(ctx, Stage::Mcg, &pair, Operator::Mcg, template, &slots, Expect::Text, ctx.temperature)?;
    let (user, assistant) =
        parse_marker_reply(&resp.raw_text).map_err(|e| FusionError::new(Stage::Mcg, &pair, e.to_string()))?;
    Ok(Draft { user, assistant })
}

/// Completeness check of a draft against the expected key terms.
pub fn detect_completeness(
    ctx: &FusionContext<'_>,
    draft: &Draft,
    key_terms: &[String],
    pair: &str,
) -> Result<SymbolicLoss, FusionError> {
    let template = ctx
        .pack
        .template(Operator::Icd, "default")
        .map_err(|e| FusionError::new(Stage::Icd, pair, e.to_string()))?;
    let slots = SlotValues::new()
        .with("merged_user", draft.user.as_str())
        .with("merged_assistant", draft.assistant.as_str())
        .with("key_terms", if key_terms.is_empty() { "none".to_string() } else { key_terms.join("; ") });
    let resp = call(ctx, Stage::Icd, pair, Operator::Icd, template, &slots, Expect::Json(ICD_SCHEMA), ctx.temperature)?;
    SymbolicLoss::from_value(LossKind::Icd, resp.parsed.as_ref().expect("validated"))
        .map_err(|e| FusionError::new(Stage::Icd, pair, e))
}

/// Final-answer check of a draft.
pub fn check_final_answer(ctx: &FusionContext<'_>, draft: &Draft, pair: &str) -> Result<SymbolicLoss, FusionError> {
    let template = ctx
        .pack
        .template(Operator::Fac, "default")
        .map_err(|e| FusionError::new(Stage::Fac, pair, e.to_string()))?;
    let slots = SlotValues::new()
        .with("user_section", draft.user.as_str())
        .with("assistant_section", draft.assistant.as_str());
    let resp = call(ctx, Stage::Fac, pair, Operator::Fac, template, &slots, Expect::Json(FAC_SCHEMA), ctx.temperature)?;
    SymbolicLoss::from_value(LossKind::Fac, resp.parsed.as_ref().expect("validated"))
        .map_err(|e| FusionError::new(Stage::Fac, pair, e))
}

/// Rewrites the answer of `draft`. The reply's user section must match the
/// draft's byte for byte.
pub fn update_answer(
    ctx: &FusionContext<'_>,
    draft: &Draft,
    prompt: &OptimizedPrompt,
    pair: &str,
) -> Result<Draft, FusionError> {
    let err = |m: String| FusionError::new(Stage::Fau, pair, m);
    if prompt.template.operator != Operator::Fau {
        return Err(err(format!("{} template given to FAU", prompt.template.operator)));
    }
    let mut slots = SlotValues::new()
        .with("corpus", format_marker(&draft.user, &draft.assistant))
        .with("user_section", draft.user.as_str())
        .with("assistant_section", draft.assistant.as_str());
    for s in ["irrelevant_content", "answer_feedback", "feedback"] {
        slots.set(s, "none");
    }
    for (k, v) in prompt.feedback.iter() {
        slots.set(k, v);
    }
    let resp = call(ctx, Stage::Fau, pair, Operator::Fau, &prompt.template, &slots, Expect::Text, ctx.temperature)?;
    let (user, assistant) = parse_marker_reply(&resp.raw_text).map_err(|e| err(e.to_string()))?;
    if user != draft.user {
        return Err(err("reply altered the user section".into()));
    }
    Ok(Draft {
        user: draft.user.clone(),
        assistant,
    })
}
