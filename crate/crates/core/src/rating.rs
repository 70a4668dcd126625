//! LLM quality rating and the 1..=10 → 0..=5 score map.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{CorpusSample, DatasetSplit, EmbeddedSample};
use crate::gateway::{Expect, Gateway, GatewayError, GatewayRequest};
use crate::prompt::{Operator, PromptError, PromptPack, SlotValues};
use crate::K;

/// Schema key under which rating replies are validated by the gateway.
pub const RATING_SCHEMA: &str = "rating";

#[derive(Debug, Error)]
pub enum RatingError {
    #[error("cannot parse rating: {reason}; raw reply: {raw:?}")]
    Parse { reason: String, raw: String },
    #[error("raw score {0} is outside 1..=10")]
    OutOfRange(i64),
    #[error("sample `{0}` has no corrected score")]
    Unscored(String),
    #[error("sample `{id}` has score {score}, outside 0..={max}", max = K - 1)]
    BadScore { id: String, score: u8 },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// The four rating dimensions, each in 1..=10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingReport {
    pub rarity: u8,
    pub complexity: u8,
    pub informativeness: u8,
    pub overall: u8,
}

/// One line of the `rate` stage output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedRecord {
    pub id: String,
    pub rarity: u8,
    pub complexity: u8,
    pub informativeness: u8,
    pub overall_raw: u8,
    pub overall_mapped: u8,
}

impl RatedRecord {
    pub fn new(id: impl Into<String>, report: RatingReport) -> Result<Self, RatingError> {
        Ok(RatedRecord {
            id: id.into(),
            rarity: report.rarity,
            complexity: report.complexity,
            informativeness: report.informativeness,
            overall_raw: report.overall,
            overall_mapped: map_overall_score(report.overall)?,
        })
    }
}

pub fn render_rating_prompt(pack: &PromptPack, sample: &CorpusSample) -> Result<String, RatingError> {
    let input_block = if sample.input.trim().is_empty() {
        String::new()
    } else {
        format!("#### Input\n{}\n", sample.input)
    };
    let slots = SlotValues::new()
        .with("instruction", sample.instruction.as_str())
        .with("input_block", input_block)
        .with("response", sample.response.as_str());
    Ok(pack.template(Operator::Rate, "default")?.render(&slots)?)
}

const DIMENSIONS: [(&str, &[&str]); 4] = [
    ("rarity", &["rarity"]),
    ("complexity", &["complexity"]),
    ("informativeness", &["informativeness"]),
    ("overall", &["overall", "overall rating", "overall_rating", "overallrating"]),
];

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace(['-', '\''], "")
}

fn score_of(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Extracts the report from an already-parsed JSON object. Keys are matched
/// case-insensitively; "Overall Rating" and friends alias `overall`.
pub fn rating_from_value(value: &Value) -> Result<RatingReport, String> {
    let obj = value.as_object().ok_or("rating reply is not a JSON object")?;
    let mut scores = [0u8; 4];
    for (slot, (name, aliases)) in scores.iter_mut().zip(DIMENSIONS) {
        let raw = obj
            .iter()
            .find(|(k, _)| aliases.contains(&normalize_key(k).as_str()))
            .map(|(_, v)| v)
            .ok_or_else(|| format!("missing `{name}`"))?;
        let n = score_of(raw).ok_or_else(|| format!("`{name}` is not an integer"))?;
        if !(1..=10).contains(&n) {
            return Err(format!("`{name}` = {n} is outside 1..=10"));
        }
        *slot = n as u8;
    }
    Ok(RatingReport {
        rarity: scores[0],
        complexity: scores[1],
        informativeness: scores[2],
        overall: scores[3],
    })
}

/// Gateway schema validator for rating replies.
pub fn validate_rating(value: &Value) -> Result<(), String> {
    rating_from_value(value).map(|_| ())
}

/// Parses a raw model reply (JSON, possibly fenced or surrounded by prose).
pub fn parse_rating(response_text: &str) -> Result<RatingReport, RatingError> {
    let fail = |reason: String| RatingError::Parse {
        reason,
        raw: response_text.to_string(),
    };
    let value = crate::gateway::extract_json(response_text).map_err(fail)?;
    rating_from_value(&value).map_err(fail)
}

/// Maps a raw 1..=10 score into 0..=5: clamp to 4..=9, then subtract 4.
pub fn map_overall_score(raw: u8) -> Result<u8, RatingError> {
    if !(1..=10).contains(&raw) {
        return Err(RatingError::OutOfRange(raw as i64));
    }
    Ok(raw.clamp(4, 9) - 4)
}

/// Scores 0..=2 go to the low-quality set, 3..=5 to the high-quality set.
pub fn split_by_score(samples: &[EmbeddedSample]) -> Result<DatasetSplit, RatingError> {
    let mut split = DatasetSplit::default();
    for s in samples {
        let score = s
            .corrected_score
            .ok_or_else(|| RatingError::Unscored(s.sample_id.clone()))?;
        match score {
            0..=2 => split.lq_ids.push(s.sample_id.clone()),
            3..=5 => split.hq_ids.push(s.sample_id.clone()),
            _ => {
                return Err(RatingError::BadScore {
                    id: s.sample_id.clone(),
                    score,
                })
            }
        }
    }
    Ok(split)
}

/// Rates one sample through the gateway.
pub fn rate_sample(
    gateway: &Gateway,
    pack: &PromptPack,
    sample: &CorpusSample,
    temperature: f64,
) -> Result<RatingReport, RatingError> {
    let prompt = render_rating_prompt(pack, sample)?;
    let request = GatewayRequest::new(Operator::Rate.name(), prompt, Expect::Json(RATING_SCHEMA))
        .temperature(temperature)
        .fingerprint_slots(&[("id", sample.id.as_str())]);
    let response = gateway.invoke(&request)?;
    let value = response.parsed.expect("json expectation yields a payload");
    rating_from_value(&value).map_err(|reason| RatingError::Parse {
        reason,
        raw: response.raw_text,
    })
}
