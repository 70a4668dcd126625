use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::marker::format_marker;
use super::{CorpusError, CorpusSample};

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads one JSONL corpus file.
///
/// Accepted fields: `instruction`, `input` (optional), `response` or
/// `output`, optional `id` and `source`. Multi-turn records may instead carry
/// `messages` / `conversations`: a list of `{role|from, content|value}` turns,
/// which is flattened into the marker format with the final assistant turn as
/// the response. Missing ids become `{source}:{line}` (1-based line number);
/// a missing source tag defaults to the file stem.
pub fn load_jsonl(path: &Path) -> Result<Vec<CorpusSample>, CorpusError> {
    let mut seen = HashSet::new();
    load_into(path, &mut seen)
}

/// Loads several corpus files; ids must be unique across all of them.
pub fn load_jsonl_files(paths: &[PathBuf]) -> Result<Vec<CorpusSample>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_into(p, &mut seen)?);
    }
    Ok(out)
}

fn load_into(path: &Path, seen: &mut HashSet<String>) -> Result<Vec<CorpusSample>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let default_source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let value: Value =
            serde_json::from_str(&line).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        let source = match obj.get("source") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            _ => default_source.clone(),
        };
        let (id, explicit) = match obj.get("id") {
            Some(Value::String(s)) if !s.is_empty() => (s.clone(), true),
            Some(Value::Number(n)) => (n.to_string(), true),
            _ => (format!("{source}:{lineno}"), false),
        };

        let sample = if let Some(turns) = obj.get("messages").or_else(|| obj.get("conversations")) {
            flatten_turns(turns, id.clone(), source).map_err(malformed)?
        } else {
            let text = |key: &str| obj.get(key).and_then(Value::as_str).map(str::to_string);
            let instruction = text("instruction")
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| malformed("missing or empty `instruction`".into()))?;
            let response = text("response")
                .or_else(|| text("output"))
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| malformed("missing or empty `response`/`output`".into()))?;
            CorpusSample {
                id: id.clone(),
                instruction,
                input: text("input").unwrap_or_default(),
                response,
                source,
                flattened_turns: None,
            }
        };

        if !seen.insert(id.clone()) {
            if explicit {
                return Err(CorpusError::DuplicateId {
                    path: path.to_path_buf(),
                    line: lineno,
                    id,
                });
            }
            return Err(malformed(format!("synthesized id `{id}` collides with an existing id")));
        }
        out.push(sample);
    }
    Ok(out)
}

fn flatten_turns(turns: &Value, id: String, source: String) -> Result<CorpusSample, String> {
    let turns = turns.as_array().ok_or("`messages` must be an array")?;
    let mut parsed = Vec::with_capacity(turns.len());
    for t in turns {
        let role = t
            .get("role")
            .or_else(|| t.get("from"))
            .and_then(Value::as_str)
            .ok_or("turn without `role`")?;
        let content = t
            .get("content")
            .or_else(|| t.get("value"))
            .and_then(Value::as_str)
            .ok_or("turn without `content`")?;
        let is_user = matches!(role, "user" | "human" | "prompter");
        parsed.push((is_user, content.to_string()));
    }
    let last_assistant = parsed
        .iter()
        .rposition(|(is_user, _)| !is_user)
        .ok_or("conversation has no assistant turn")?;
    let response = parsed[last_assistant].1.clone();
    let history = &parsed[..last_assistant];
    if history.is_empty() || response.trim().is_empty() {
        return Err("conversation needs a user turn before the final assistant turn".into());
    }
    let instruction = if history.len() == 1 {
        history[0].1.clone()
    } else {
        // earlier exchanges rendered as marker blocks, the last user turn trails
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < history.len() {
            let (is_user, text) = &history[i];
            if *is_user && i + 1 < history.len() && !history[i + 1].0 {
                blocks.push(format_marker(text, &history[i + 1].1));
                i += 2;
            } else {
                let tag = if *is_user { "### User" } else { "### Assistant" };
                blocks.push(format!("{tag}\n{text}"));
                i += 1;
            }
        }
        blocks.join("\n")
    };
    Ok(CorpusSample {
        id,
        instruction,
        input: String::new(),
        response,
        source,
        flattened_turns: Some(last_assistant + 1),
    })
}

/// Reads a JSONL file of `T`, reporting the offending line on failure.
/// A truncated final line (no trailing newline and unparsable) is ignored,
/// which is what an interrupted append leaves behind.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let complete = raw.ends_with('\n');
    let lines: Vec<&str> = raw.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if !complete && idx + 1 == lines.len() => break,
            Err(e) => {
                return Err(CorpusError::Malformed {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        w.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    w.get_ref().sync_all().map_err(|e| io_err(path, e))
}

/// Writes to `<path>.tmp` then renames over `path`, so readers never observe
/// a partially written file.
pub fn write_jsonl_atomic<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let tmp = tmp_path(path);
    write_jsonl(&tmp, items)?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub(crate) fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
