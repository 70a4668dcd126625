//! Symbolic loss objects returned by the completeness and answer checks.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Merged-corpus completeness check (question side).
    Icd,
    /// Final-answer check (answer side).
    Fac,
}

#[derive(Debug, Clone, Copy)]
enum Field {
    Text,
    TextList,
    Flag,
    Choice(&'static [&'static str]),
}

struct RootSpec {
    name: &'static str,
    /// `(field, kind, required even when satisfied)`
    fields: &'static [(&'static str, Field, bool)],
    /// Must be present and non-empty when the root is unsatisfied.
    payload: &'static str,
}

const DIRECT_ANSWER: RootSpec = RootSpec {
    name: "direct_answer",
    fields: &[("answer", Field::Text, false), ("feedback", Field::Text, false)],
    payload: "feedback",
};

const ICD_ROOTS: &[RootSpec] = &[
    RootSpec {
        name: "key_term_coverage",
        fields: &[
            ("retained_terms", Field::TextList, true),
            ("missing_terms", Field::TextList, true),
        ],
        payload: "missing_terms",
    },
    RootSpec {
        name: "question_well_formed",
        fields: &[("feedback", Field::Text, false)],
        payload: "feedback",
    },
    RootSpec {
        name: "question_type",
        fields: &[("value", Field::Choice(&["open", "closed"]), true)],
        payload: "value",
    },
    RootSpec {
        name: "external_knowledge",
        fields: &[("required", Field::Flag, true), ("knowledge", Field::TextList, false)],
        payload: "knowledge",
    },
    RootSpec {
        name: "context_contain",
        fields: &[("items", Field::TextList, false)],
        payload: "items",
    },
    RootSpec {
        name: "context_missing",
        fields: &[("items", Field::TextList, false)],
        payload: "items",
    },
    DIRECT_ANSWER,
    RootSpec {
        name: "regeneration",
        fields: &[("justification", Field::Text, false)],
        payload: "justification",
    },
];

const FAC_ROOTS: &[RootSpec] = &[
    DIRECT_ANSWER,
    RootSpec {
        name: "irrelevant_content",
        fields: &[("items", Field::TextList, false)],
        payload: "items",
    },
];

impl LossKind {
    fn roots(self) -> &'static [RootSpec] {
        match self {
            LossKind::Icd => ICD_ROOTS,
            LossKind::Fac => FAC_ROOTS,
        }
    }

    /// Root names in canonical order.
    pub fn root_names(self) -> Vec<&'static str> {
        self.roots().iter().map(|r| r.name).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCondition {
    pub name: String,
    pub satisfied: bool,
    /// Every field of the root object except `satisfied`.
    pub payload: Map<String, Value>,
}

impl RootCondition {
    pub fn text(&self, field: &str) -> Option<&str> {
        self.payload.get(field).and_then(Value::as_str).filter(|s| !s.trim().is_empty())
    }

    pub fn list(&self, field: &str) -> Vec<String> {
        self.payload
            .get(field)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default()
    }
}

/// Structured report whose value is the number of unsatisfied roots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicLoss {
    pub kind: LossKind,
    pub roots: Vec<RootCondition>,
}

fn non_empty(v: &Value) -> bool {
    match v {
        Value::String(s) => !s.trim().is_empty(),
        Value::Array(a) => !a.is_empty(),
        Value::Null => false,
        _ => true,
    }
}

impl SymbolicLoss {
    /// Validates `value` against the schema for `kind`.
    pub fn from_value(kind: LossKind, value: &Value) -> Result<SymbolicLoss, String> {
        let obj = value.as_object().ok_or("loss must be a JSON object")?;
        let mut roots = Vec::new();
        for spec in kind.roots() {
            let node = obj
                .get(spec.name)
                .ok_or_else(|| format!("missing root `{}`", spec.name))?
                .as_object()
                .ok_or_else(|| format!("root `{}` must be an object", spec.name))?;
            let satisfied = node
                .get("satisfied")
                .and_then(Value::as_bool)
                .ok_or_else(|| format!("root `{}` needs a boolean `satisfied`", spec.name))?;
            for (field, kind, always) in spec.fields {
                let Some(v) = node.get(*field).filter(|v| !v.is_null()) else {
                    if *always {
                        return Err(format!("root `{}` is missing `{field}`", spec.name));
                    }
                    continue;
                };
                let ok = match kind {
                    Field::Text => v.is_string(),
                    Field::TextList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
                    Field::Flag => v.is_boolean(),
                    Field::Choice(opts) => v.as_str().is_some_and(|s| opts.contains(&s)),
                };
                if !ok {
                    return Err(format!("root `{}` has an invalid `{field}`", spec.name));
                }
            }
            if !satisfied && !node.get(spec.payload).is_some_and(non_empty) {
                return Err(format!(
                    "root `{}` is unsatisfied but `{}` is empty",
                    spec.name, spec.payload
                ));
            }
            let mut payload = node.clone();
            payload.remove("satisfied");
            roots.push(RootCondition {
                name: spec.name.to_string(),
                satisfied,
                payload,
            });
        }
        Ok(SymbolicLoss { kind, roots })
    }

    /// Count of roots with `satisfied = false`.
    pub fn value(&self) -> u32 {
        self.roots.iter().filter(|r| !r.satisfied).count() as u32
    }

    pub fn root(&self, name: &str) -> Option<&RootCondition> {
        self.roots.iter().find(|r| r.name == name)
    }

    pub fn unsatisfied(&self) -> impl Iterator<Item = &RootCondition> {
        self.roots.iter().filter(|r| !r.satisfied)
    }

    pub fn is_unsatisfied(&self, name: &str) -> bool {
        self.root(name).is_some_and(|r| !r.satisfied)
    }
}

pub(crate) fn validate_icd(v: &Value) -> Result<(), String> {
    SymbolicLoss::from_value(LossKind::Icd, v).map(|_| ())
}

pub(crate) fn validate_fac(v: &Value) -> Result<(), String> {
    SymbolicLoss::from_value(LossKind::Fac, v).map(|_| ())
}
