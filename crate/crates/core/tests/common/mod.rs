//! Fixtures shared by the integration suites: synthetic embeddings with
//! planted structure, a deterministic stand-in for the chat model, and a
//! small on-disk corpus for pipeline runs.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use purgemix_core::corpus::{format_marker, CorpusSample, EmbeddedSample};
use purgemix_core::gateway::{ChatRequest, TransportError};
use purgemix_core::vector::normalized;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use sha2::{Digest, Sha256};

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// `n` unit vectors drawn around `blobs` random centers; returns the vectors
/// and each point's blob label.
pub fn blobs(blobs: usize, dim: usize, n: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..blobs).map(|_| gaussian(&mut rng, dim, 1.0)).collect();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let b = i % blobs;
        let noise = gaussian(&mut rng, dim, spread);
        let v: Vec<f64> = centers[b].iter().zip(&noise).map(|(c, e)| c + e).collect();
        points.push(normalized(&v).unwrap());
        labels.push(b);
    }
    (points, labels)
}

pub fn embedded(points: &[Vec<f64>], scores: &[u8]) -> Vec<EmbeddedSample> {
    points
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (p, &s))| EmbeddedSample {
            sample_id: format!("p{i:05}"),
            embedding: p.clone(),
            raw_score: Some(s),
            corrected_score: None,
        })
        .collect()
}

/// Draws an observed score for each true score through the rows of `t`.
pub fn flip_through(t: &[Vec<f64>], truth: &[u8], seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    truth
        .iter()
        .map(|&y| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (j, &pj) in t[y as usize].iter().enumerate() {
                acc += pj;
                if u < acc {
                    return j as u8;
                }
            }
            (t.len() - 1) as u8
        })
        .collect()
}

fn digest(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn all_satisfied_icd() -> serde_json::Value {
    json!({
        "key_term_coverage": {"satisfied": true, "retained_terms": ["alpha"], "missing_terms": []},
        "question_well_formed": {"satisfied": true, "feedback": ""},
        "question_type": {"satisfied": true, "value": "open"},
        "external_knowledge": {"satisfied": true, "required": false, "knowledge": []},
        "context_contain": {"satisfied": true, "items": []},
        "context_missing": {"satisfied": true, "items": []},
        "direct_answer": {"satisfied": true, "answer": "yes", "feedback": ""},
        "regeneration": {"satisfied": true, "justification": "fine"}
    })
}

/// Schema-valid ICD reply whose unsatisfied roots are exactly `unsat`.
pub fn icd_reply(unsat: &[&str]) -> String {
    let mut v = all_satisfied_icd();
    for &root in unsat {
        let node = v[root].as_object_mut().unwrap();
        node.insert("satisfied".into(), json!(false));
        match root {
            "key_term_coverage" => {
                node.insert("missing_terms".into(), json!(["beta"]));
            }
            "question_type" => {
                node.insert("value".into(), json!("closed"));
            }
            "external_knowledge" => {
                node.insert("required".into(), json!(true));
                node.insert("knowledge".into(), json!(["background fact"]));
            }
            "context_contain" | "context_missing" => {
                node.insert("items".into(), json!(["a detail"]));
            }
            "regeneration" => {
                node.insert("justification".into(), json!("start over"));
            }
            _ => {
                node.insert("feedback".into(), json!("needs work"));
            }
        }
    }
    v.to_string()
}

pub fn fac_reply(direct_answer: bool, irrelevant: bool) -> String {
    json!({
        "direct_answer": {"satisfied": direct_answer, "answer": "", "feedback": if direct_answer { "" } else { "answer first" }},
        "irrelevant_content": {"satisfied": irrelevant, "items": if irrelevant { json!([]) } else { json!(["an aside"]) }}
    })
    .to_string()
}

pub const ICD_ROOTS: [&str; 8] = [
    "key_term_coverage",
    "question_well_formed",
    "question_type",
    "external_knowledge",
    "context_contain",
    "context_missing",
    "direct_answer",
    "regeneration",
];

/// The user section of the first marker-formatted corpus in a prompt.
pub fn user_section_in(prompt: &str) -> Option<&str> {
    let start = prompt.find("### User\n")? + "### User\n".len();
    let end = start + prompt[start..].find("\n### Assistant\n")?;
    Some(&prompt[start..end])
}

/// A deterministic stand-in for the chat model: every reply is a pure
/// function of the operator and the prompt text.
pub fn synthetic_reply(req: &ChatRequest) -> Result<String, TransportError> {
    let h = digest(&req.prompt);
    Ok(match req.operator.as_str() {
        "rate" => {
            let overall = 2 + h % 5;
            json!({"rarity": 1 + h % 10, "complexity": 1 + (h >> 8) % 10, "informativeness": 1 + (h >> 16) % 10, "overall": overall})
                .to_string()
        }
        "da" => {
            let relation = ["same", "related", "unrelated"][(h % 3) as usize];
            json!({
                "relation": relation,
                "domain_a": "area a",
                "domain_b": "area b",
                "key_terms_a": [format!("term{}", h % 97)],
                "key_terms_b": [format!("term{}", (h >> 7) % 97)],
                "matching_pattern": "shared method"
            })
            .to_string()
        }
        "mcg" => format_marker(
            &format!("Combined question {h:016x}: explain how the two ideas interact."),
            &format!("Combined answer {h:016x}."),
        ),
        "icd" => {
            let mut unsat = Vec::new();
            for (i, root) in ICD_ROOTS.iter().enumerate() {
                if (h >> (i * 3)).is_multiple_of(7) {
                    unsat.push(*root);
                }
            }
            icd_reply(&unsat)
        }
        "fac" => fac_reply(!h.is_multiple_of(3), !(h >> 5).is_multiple_of(4)),
        "fau" => {
            let user = user_section_in(&req.prompt)
                .ok_or_else(|| TransportError::Protocol("fau prompt without a corpus".into()))?;
            format_marker(user, &format!("Revised answer {h:016x}."))
        }
        other => return Err(TransportError::Protocol(format!("unexpected operator {other}"))),
    })
}

/// Writes a 100-sample corpus with embeddings and a config into `dir`.
/// Eight tight groups of ten samples and twenty isolated samples.
pub fn write_pipeline_fixture(dir: &Path, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 32;
    let mut corpus = String::new();
    let mut embeddings = String::new();
    let mut n = 0;
    let mut push = |v: Vec<f64>, topic: &str, corpus: &mut String, embeddings: &mut String| {
        let s = CorpusSample {
            id: format!("lq:{n}"),
            instruction: format!("Question {n} about {topic}?"),
            input: String::new(),
            response: format!("A short reply on {topic}."),
            source: "synthetic".into(),
            flattened_turns: None,
        };
        writeln!(corpus, "{}", serde_json::to_string(&s).unwrap()).unwrap();
        writeln!(embeddings, "{}", json!({"id": s.id, "vector": v})).unwrap();
        n += 1;
    };
    for g in 0..8 {
        let center = gaussian(&mut rng, dim, 1.0);
        for _ in 0..10 {
            let noise = gaussian(&mut rng, dim, 0.02);
            let v = center.iter().zip(&noise).map(|(c, e)| c + e).collect();
            push(v, &format!("topic {g}"), &mut corpus, &mut embeddings);
        }
    }
    for i in 0..20 {
        let v = gaussian(&mut rng, dim, 1.0);
        push(v, &format!("stray subject {i}"), &mut corpus, &mut embeddings);
    }
    std::fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    std::fs::write(dir.join("embeddings.jsonl"), embeddings).unwrap();
    let config = dir.join("purgemix.toml");
    std::fs::write(
        &config,
        "inputs = [\"corpus.jsonl\"]\nembeddings = \"embeddings.jsonl\"\noutput_dir = \"out\"\nseed = 7\nconcurrency = 4\n",
    )
    .unwrap();
    config
}
