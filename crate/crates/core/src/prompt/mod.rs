//! Prompt packs: versioned text templates with `{slot}` placeholders.
//!
//! A pack is a directory holding `manifest.toml`, which maps every
//! `(operator, variant)` pair to a template file, and `strategies.toml`, which
//! holds the nine fusion strategies. A copy of the default pack is compiled
//! into the crate; [`PromptPack::write_to`] dumps it for editing.

mod builtin;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{DomainRelation, FusionStrategy};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("template {operator}/{variant} uses unknown slot `{slot}`")]
    UnknownSlot {
        operator: Operator,
        variant: String,
        slot: String,
    },
    #[error("template {operator}/{variant}: slot `{slot}` was not filled")]
    UnfilledSlot {
        operator: Operator,
        variant: String,
        slot: String,
    },
    #[error("prompt pack has no template for {operator}/{variant}")]
    MissingTemplate { operator: Operator, variant: String },
    #[error("prompt pack strategies: {0}")]
    Strategies(String),
}

/// The LLM operators that consume templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Rate,
    Da,
    Mcg,
    Icd,
    Fac,
    Fau,
}

impl Operator {
    pub const ALL: [Operator; 6] = [
        Operator::Rate,
        Operator::Da,
        Operator::Mcg,
        Operator::Icd,
        Operator::Fac,
        Operator::Fau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Rate => "rate",
            Operator::Da => "da",
            Operator::Mcg => "mcg",
            Operator::Icd => "icd",
            Operator::Fac => "fac",
            Operator::Fau => "fau",
        }
    }

    /// Slots a template of this operator may reference.
    pub fn allowed_slots(self) -> &'static [&'static str] {
        match self {
            Operator::Rate => &["instruction", "input_block", "response"],
            Operator::Da => &["corpus_a", "corpus_b"],
            Operator::Mcg => &[
                "corpus_a",
                "corpus_b",
                "relation",
                "strategy_name",
                "strategy_text",
                "key_terms",
                "missing_terms",
                "retained_terms",
                "context_missing",
                "context_contain",
                "external_knowledge",
                "question_feedback",
                "answer_feedback",
                "feedback",
            ],
            Operator::Icd => &["merged_user", "merged_assistant", "key_terms"],
            Operator::Fac => &["user_section", "assistant_section"],
            Operator::Fau => &[
                "corpus",
                "user_section",
                "assistant_section",
                "irrelevant_content",
                "answer_feedback",
                "feedback",
            ],
        }
    }

    /// Variants every pack must provide for this operator.
    pub fn required_variants(self) -> &'static [&'static str] {
        match self {
            Operator::Mcg => &crate::fusion::MCG_VARIANTS,
            Operator::Fau => &crate::fusion::FAU_VARIANTS,
            _ => &["default"],
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn slot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").unwrap())
}

/// One operator prompt with named `{slot}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub operator: Operator,
    pub variant: String,
    text: String,
    slots: BTreeSet<String>,
}

impl PromptTemplate {
    /// Parses `text`, rejecting placeholders the operator does not know.
    pub fn new(
        operator: Operator,
        variant: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let variant = variant.into();
        let text = text.into();
        let mut slots = BTreeSet::new();
        for cap in slot_regex().captures_iter(&text) {
            let slot = &cap[1];
            if !operator.allowed_slots().contains(&slot) {
                return Err(PromptError::UnknownSlot {
                    operator,
                    variant,
                    slot: slot.to_string(),
                });
            }
            slots.insert(slot.to_string());
        }
        Ok(PromptTemplate {
            operator,
            variant,
            text,
            slots,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(String::as_str)
    }

    /// Substitutes every placeholder in one pass; substituted values are never
    /// re-scanned, so slot text containing braces is inserted verbatim.
    pub fn render(&self, values: &SlotValues) -> Result<String, PromptError> {
        if let Some(slot) = self.slots.iter().find(|s| !values.0.contains_key(s.as_str())) {
            return Err(PromptError::UnfilledSlot {
                operator: self.operator,
                variant: self.variant.clone(),
                slot: slot.clone(),
            });
        }
        Ok(slot_regex()
            .replace_all(&self.text, |cap: &regex::Captures| values.0[&cap[1]].clone())
            .into_owned())
    }
}

/// Slot name → value map used for rendering and for mock fingerprints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotValues(BTreeMap<String, String>);

impl SlotValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, slot: &str, value: impl Into<String>) -> Self {
        self.set(slot, value);
        self
    }

    pub fn set(&mut self, slot: &str, value: impl Into<String>) {
        self.0.insert(slot.to_string(), value.into());
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    template: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    operator: Operator,
    variant: String,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StrategyFile {
    strategy: Vec<FusionStrategy>,
}

/// Every template and strategy the pipeline needs.
#[derive(Debug, Clone)]
pub struct PromptPack {
    templates: BTreeMap<(Operator, String), PromptTemplate>,
    strategies: Vec<FusionStrategy>,
}

impl PromptPack {
    /// The pack compiled into the crate.
    pub fn builtin() -> &'static PromptPack {
        static PACK: OnceLock<PromptPack> = OnceLock::new();
        PACK.get_or_init(|| {
            let files = builtin::FILES;
            let read = |name: &str| {
                files
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, body)| body.to_string())
                    .ok_or_else(|| PromptError::Manifest {
                        path: PathBuf::from(name),
                        reason: "missing from the built-in pack".into(),
                    })
            };
            Self::assemble(Path::new("<builtin>"), read).expect("built-in prompt pack is valid")
        })
    }

    /// Loads a pack directory (see the module docs for the layout).
    pub fn load(dir: &Path) -> Result<PromptPack, PromptError> {
        Self::assemble(dir, |name| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })
        })
    }

    fn assemble(
        dir: &Path,
        read: impl Fn(&str) -> Result<String, PromptError>,
    ) -> Result<PromptPack, PromptError> {
        let manifest_path = dir.join("manifest.toml");
        let manifest: Manifest =
            toml::from_str(&read("manifest.toml")?).map_err(|e| PromptError::Manifest {
                path: manifest_path.clone(),
                reason: e.to_string(),
            })?;
        let mut templates = BTreeMap::new();
        for entry in manifest.template {
            let text = read(&entry.file)?;
            let t = PromptTemplate::new(entry.operator, entry.variant.clone(), text)?;
            if templates.insert((entry.operator, entry.variant.clone()), t).is_some() {
                return Err(PromptError::Manifest {
                    path: manifest_path,
                    reason: format!("duplicate entry {}/{}", entry.operator, entry.variant),
                });
            }
        }
        for op in Operator::ALL {
            for v in op.required_variants() {
                if !templates.contains_key(&(op, v.to_string())) {
                    return Err(PromptError::MissingTemplate {
                        operator: op,
                        variant: v.to_string(),
                    });
                }
            }
        }
        let strategies: StrategyFile = toml::from_str(&read("strategies.toml")?)
            .map_err(|e| PromptError::Strategies(e.to_string()))?;
        let strategies = strategies.strategy;
        for rel in DomainRelation::ALL {
            let mut idx: Vec<u8> = strategies
                .iter()
                .filter(|s| s.relation == rel)
                .map(|s| s.index)
                .collect();
            idx.sort_unstable();
            if idx != [1, 2, 3] {
                return Err(PromptError::Strategies(format!(
                    "{rel} needs strategies with index 1, 2 and 3, found {idx:?}"
                )));
            }
        }
        if strategies.len() != 9 {
            return Err(PromptError::Strategies(format!(
                "expected 9 strategies, found {}",
                strategies.len()
            )));
        }
        Ok(PromptPack {
            templates,
            strategies,
        })
    }

    pub fn template(&self, operator: Operator, variant: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(&(operator, variant.to_string()))
            .ok_or_else(|| PromptError::MissingTemplate {
                operator,
                variant: variant.to_string(),
            })
    }

    /// The three strategies for `relation`, ordered by index.
    pub fn strategies(&self, relation: DomainRelation) -> Vec<FusionStrategy> {
        let mut out: Vec<FusionStrategy> = self
            .strategies
            .iter()
            .filter(|s| s.relation == relation)
            .cloned()
            .collect();
        out.sort_by_key(|s| s.index);
        out
    }

    /// Writes the built-in pack's files into `dir`.
    pub fn write_builtin(dir: &Path) -> Result<(), PromptError> {
        fs::create_dir_all(dir).map_err(|source| PromptError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (name, body) in builtin::FILES {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| PromptError::Io { path, source })?;
        }
        Ok(())
    }
}
