//! On-disk data model: corpus samples, their embeddings, merged corpora and
//! the `### User` / `### Assistant` marker format.

mod embeddings;
mod jsonl;
mod marker;
mod merged;

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embeddings::{
    attach_embeddings, read_embeddings, write_embeddings_binary, write_embeddings_jsonl,
    EmbeddingEndpoint, EmbeddingProvider, EmbeddingTable,
};
pub use jsonl::{load_jsonl, load_jsonl_files, read_jsonl, write_jsonl, write_jsonl_atomic};
pub(crate) use jsonl::tmp_path;
pub use marker::{export_marker_format, format_marker, parse_marker, parse_marker_reply};
pub use merged::{FinalLoss, FusionMode, MergedCorpus, Provenance, StrategyTag};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: duplicate sample id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("no embedding for {} sample(s): {}", .0.len(), .0.join(", "))]
    MissingEmbeddings(Vec<String>),
    #[error("embedding for `{id}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding for `{0}` cannot be normalized (zero or non-finite norm)")]
    DegenerateEmbedding(String),
    #[error("embedding endpoint: {0}")]
    Endpoint(String),
    #[error("marker format: {0}")]
    Marker(String),
}

/// One instruction-tuning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    pub response: String,
    pub source: String,
    /// Number of conversation turns folded into `instruction` when the record
    /// was multi-turn; absent for single-turn records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flattened_turns: Option<usize>,
}

impl CorpusSample {
    /// The user-facing half of the sample: instruction followed by the
    /// optional input block.
    pub fn user_text(&self) -> String {
        if self.input.trim().is_empty() {
            self.instruction.clone()
        } else {
            format!("{}\n\n{}", self.instruction, self.input)
        }
    }

    /// Text handed to an embedding model.
    pub fn embedding_text(&self) -> String {
        format!("{}\n{}", self.user_text(), self.response)
    }
}

/// A sample id paired with its unit-norm embedding and scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSample {
    pub sample_id: String,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub raw_score: Option<u8>,
    #[serde(default)]
    pub corrected_score: Option<u8>,
}

/// Partition of scored ids into the low-quality (0..=2) and high-quality
/// (3..=5) sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub lq_ids: Vec<String>,
    pub hq_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.lq_ids.len() + self.hq_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_disjoint(&self) -> bool {
        let lq: HashSet<&str> = self.lq_ids.iter().map(String::as_str).collect();
        self.hq_ids.iter().all(|id| !lq.contains(id.as_str()))
    }
}
