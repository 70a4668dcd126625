//! Embedding ingestion.
//!
//! Two file layouts are accepted:
//!
//! * JSONL (`*.jsonl`): one `{"id": "...", "vector": [f64, ...]}` per line.
//! * Binary: a matrix file plus an `<path>.ids` sidecar. The matrix file is a
//!   24-byte header: magic `PMXE`, `u32` version (1), `u32` dimension,
//!   `u32` reserved (0), `u64` row count, all little-endian, followed by
//!   `rows × dim` little-endian `f32` values in row-major order. The sidecar
//!   holds one UTF-8 id per line, in row order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CorpusError, CorpusSample, EmbeddedSample};
use crate::gateway::http::post_json;
use crate::vector::normalized;

const MAGIC: &[u8; 4] = b"PMXE";
const HEADER_LEN: usize = 24;

/// Supplies a raw (not necessarily normalized) vector per sample.
pub trait EmbeddingProvider {
    fn vectors(&self, samples: &[CorpusSample]) -> Result<Vec<Option<Vec<f64>>>, CorpusError>;
}

/// Vectors keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the vector for `id`.
    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) {
        let id = id.into();
        match self.index.get(&id) {
            Some(&i) => self.rows[i] = vector,
            None => {
                self.index.insert(id.clone(), self.rows.len());
                self.ids.push(id);
                self.rows.push(vector);
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.rows[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.rows.iter().map(Vec::as_slice))
    }
}

impl EmbeddingProvider for EmbeddingTable {
    fn vectors(&self, samples: &[CorpusSample]) -> Result<Vec<Option<Vec<f64>>>, CorpusError> {
        Ok(samples
            .iter()
            .map(|s| self.get(&s.id).map(<[f64]>::to_vec))
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    id: String,
    vector: Vec<f64>,
}

/// Reads either layout; `.jsonl` selects JSONL, anything else the binary form.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable, CorpusError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl_table(path)
    } else {
        read_binary_table(path)
    }
}

fn read_jsonl_table(path: &Path) -> Result<EmbeddingTable, CorpusError> {
    let rows: Vec<JsonRow> = super::read_jsonl(path)?;
    let mut table = EmbeddingTable::new();
    let mut dim = None;
    for (i, row) in rows.into_iter().enumerate() {
        let expected = *dim.get_or_insert(row.vector.len());
        if row.vector.len() != expected {
            return Err(CorpusError::DimensionMismatch {
                id: row.id,
                expected,
                found: row.vector.len(),
            });
        }
        if table.get(&row.id).is_some() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("duplicate embedding id `{}`", row.id),
            });
        }
        table.insert(row.id, row.vector);
    }
    Ok(table)
}

fn ids_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".ids");
    path.with_file_name(name)
}

fn read_binary_table(path: &Path) -> Result<EmbeddingTable, CorpusError> {
    let io = |p: &Path, e| CorpusError::Io {
        path: p.to_path_buf(),
        source: e,
    };
    let bad = |reason: &str| CorpusError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        reason: reason.to_string(),
    };
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a PMXE embedding matrix"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != 1 {
        return Err(bad("unsupported matrix version"));
    }
    let dim = u32_at(8) as usize;
    let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + rows * dim * 4 {
        return Err(bad("matrix size does not match header"));
    }
    let sidecar = ids_path(path);
    let ids_raw = fs::read_to_string(&sidecar).map_err(|e| io(&sidecar, e))?;
    let ids: Vec<&str> = ids_raw.lines().filter(|l| !l.is_empty()).collect();
    if ids.len() != rows {
        return Err(bad("id sidecar row count does not match matrix"));
    }
    let mut table = EmbeddingTable::new();
    for (r, id) in ids.iter().enumerate() {
        let start = HEADER_LEN + r * dim * 4;
        let v = bytes[start..start + dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        table.insert(*id, v);
    }
    Ok(table)
}

pub fn write_embeddings_jsonl(path: &Path, table: &EmbeddingTable) -> Result<(), CorpusError> {
    let rows: Vec<JsonRow> = table
        .iter()
        .map(|(id, v)| JsonRow {
            id: id.to_string(),
            vector: v.to_vec(),
        })
        .collect();
    super::write_jsonl(path, &rows)
}

pub fn write_embeddings_binary(path: &Path, table: &EmbeddingTable) -> Result<(), CorpusError> {
    let dim = table.iter().next().map_or(0, |(_, v)| v.len());
    let mut bytes = Vec::with_capacity(HEADER_LEN + table.len() * dim * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    bytes.extend_from_slice(&(table.len() as u64).to_le_bytes());
    let mut ids = String::new();
    for (id, v) in table.iter() {
        if v.len() != dim {
            return Err(CorpusError::DimensionMismatch {
                id: id.to_string(),
                expected: dim,
                found: v.len(),
            });
        }
        for x in v {
            bytes.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        ids.push_str(id);
        ids.push('\n');
    }
    let io = |p: &Path, e| CorpusError::Io {
        path: p.to_path_buf(),
        source: e,
    };
    fs::write(path, bytes).map_err(|e| io(path, e))?;
    let sidecar = ids_path(path);
    fs::write(&sidecar, ids).map_err(|e| io(&sidecar, e))
}

/// OpenAI-style `/embeddings` endpoint (`{"model", "input": [..]}` in,
/// `{"data": [{"index", "embedding"}]}` out).
#[derive(Debug, Clone)]
pub struct EmbeddingEndpoint {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub batch_size: usize,
    pub timeout: Duration,
}

impl EmbeddingEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EmbeddingEndpoint {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            batch_size: 64,
            timeout: Duration::from_secs(60),
        }
    }
}

impl EmbeddingProvider for EmbeddingEndpoint {
    fn vectors(&self, samples: &[CorpusSample]) -> Result<Vec<Option<Vec<f64>>>, CorpusError> {
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let token = self
            .api_key_env
            .as_deref()
            .and_then(|k| std::env::var(k).ok());
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.batch_size.max(1)) {
            let input: Vec<String> = chunk.iter().map(CorpusSample::embedding_text).collect();
            let body = json!({ "model": self.model, "input": input });
            let reply = post_json(&url, token.as_deref(), &body, self.timeout)
                .map_err(|e| CorpusError::Endpoint(e.to_string()))?;
            let data = reply
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| CorpusError::Endpoint("reply has no `data` array".into()))?;
            let mut batch: Vec<Option<Vec<f64>>> = vec![None; chunk.len()];
            for (pos, item) in data.iter().enumerate() {
                let idx = item
                    .get("index")
                    .and_then(Value::as_u64)
                    .map_or(pos, |i| i as usize);
                let vec = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_f64).collect::<Vec<_>>());
                if let (Some(slot), Some(v)) = (batch.get_mut(idx), vec) {
                    *slot = Some(v);
                }
            }
            out.extend(batch);
        }
        Ok(out)
    }
}

/// Pairs every sample with its vector, re-normalized to unit length.
pub fn attach_embeddings(
    samples: &[CorpusSample],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddedSample>, CorpusError> {
    let vectors = provider.vectors(samples)?;
    let missing: Vec<String> = samples
        .iter()
        .zip(&vectors)
        .filter(|(_, v)| v.is_none())
        .map(|(s, _)| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingEmbeddings(missing));
    }
    let mut dim = None;
    samples
        .iter()
        .zip(vectors)
        .map(|(s, v)| {
            let v = v.expect("checked above");
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(CorpusError::DimensionMismatch {
                    id: s.id.clone(),
                    expected,
                    found: v.len(),
                });
            }
            let embedding =
                normalized(&v).ok_or_else(|| CorpusError::DegenerateEmbedding(s.id.clone()))?;
            Ok(EmbeddedSample {
                sample_id: s.id.clone(),
                embedding,
                raw_score: None,
                corrected_score: None,
            })
        })
        .collect()
}
