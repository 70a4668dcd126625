use std::path::{Path, PathBuf};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::plan::RunMode;
use super::{PipelineError, StageName};
use crate::denoise::Correction;
use crate::fusion::PairingPolicy;
use crate::gateway::{GatewayConfig, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, DEFAULT_MODEL};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Openai,
    Mock,
}

/// Flat TOML run configuration. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input corpora (JSONL).
    pub inputs: Vec<PathBuf>,
    /// Embedding file (`.jsonl` or binary). When absent, `embedding_url`
    /// is queried once and the vectors are cached in the output directory.
    pub embeddings: Option<PathBuf>,
    pub embedding_url: Option<String>,
    pub embedding_model: Option<String>,
    /// Prompt-pack directory; the built-in pack when absent.
    pub prompt_pack: Option<PathBuf>,
    pub output_dir: PathBuf,

    pub transport: TransportKind,
    /// Reply script for `transport = "mock"`.
    pub mock_script: Option<PathBuf>,
    pub model: String,
    pub base_url: String,
    /// Name of the environment variable holding the API token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub min_interval_ms: u64,
    pub retry_budget: u32,
    pub transport_retries: u32,

    pub seed: u64,
    pub k: usize,
    pub rounds: usize,
    pub sample_fraction: f64,
    pub correction: Correction,
    pub threshold: f64,
    pub alpha: f64,
    pub reps_per_subcluster: usize,
    /// Regexes; low-quality samples matching any of them never reach fusion.
    pub filter_patterns: Vec<String>,
    pub mode: RunMode,
    pub pairing: PairingPolicy,
    pub budget: u32,
    pub rating_temperature: f64,
    pub da_temperature: f64,
    pub temperature: f64,
    /// Export every strategy output instead of only the lowest-loss one.
    pub keep_all_strategies: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            embeddings: None,
            embedding_url: None,
            embedding_model: None,
            prompt_pack: None,
            output_dir: PathBuf::from("purgemix-out"),
            transport: TransportKind::default(),
            mock_script: None,
            model: DEFAULT_MODEL.into(),
            base_url: DEFAULT_BASE_URL.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 120,
            concurrency: 8,
            min_interval_ms: 0,
            retry_budget: 3,
            transport_retries: 4,
            seed: 0,
            k: crate::K,
            rounds: 3,
            sample_fraction: 0.9,
            correction: Correction::default(),
            threshold: crate::select::DEFAULT_THRESHOLD,
            alpha: crate::select::DEFAULT_ALPHA,
            reps_per_subcluster: 2,
            filter_patterns: Vec::new(),
            mode: RunMode::default(),
            pairing: PairingPolicy::default(),
            budget: crate::fusion::DEFAULT_BUDGET,
            rating_temperature: crate::fusion::DEFAULT_TEMPERATURE,
            da_temperature: crate::fusion::DA_TEMPERATURE,
            temperature: crate::fusion::DEFAULT_TEMPERATURE,
            keep_all_strategies: false,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in &mut self.inputs {
            resolve(base, p);
        }
        for p in [&mut self.embeddings, &mut self.prompt_pack, &mut self.mock_script]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(format!("threshold {} outside (0, 1]", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.budget < 1 {
            return bad("budget must be at least 1".into());
        }
        if self.k < 2 {
            return bad(format!("k = {} must be at least 2", self.k));
        }
        if self.k > crate::K {
            return bad(format!("k = {} exceeds the {} mapped score levels", self.k, crate::K));
        }
        if self.rounds < 1 {
            return bad("rounds must be at least 1".into());
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad(format!("sample_fraction {} outside (0, 1]", self.sample_fraction));
        }
        if self.reps_per_subcluster < 1 {
            return bad("reps_per_subcluster must be at least 1".into());
        }
        if self.concurrency < 1 {
            return bad("concurrency must be at least 1".into());
        }
        for t in [self.rating_temperature, self.da_temperature, self.temperature] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("temperature {t} outside [0, 2]"));
            }
        }
        if self.transport == TransportKind::Mock && self.mock_script.is_none() {
            return bad("transport = \"mock\" needs mock_script".into());
        }
        self.filters()?;
        Ok(())
    }

    pub fn filters(&self) -> Result<Vec<Regex>, PipelineError> {
        self.filter_patterns
            .iter()
            .map(|p| Regex::new(p).map_err(|e| PipelineError::Config(format!("filter pattern `{p}`: {e}"))))
            .collect()
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            retry_budget: self.retry_budget,
            transport_retries: self.transport_retries,
            max_in_flight: self.concurrency,
            min_interval: Duration::from_millis(self.min_interval_ms),
            ..GatewayConfig::default()
        }
    }

    /// Settings that change what `stage` itself computes. Concurrency, rate
    /// limits, the token variable and the output directory are left out.
    fn stage_keys(&self, stage: StageName) -> Value {
        match stage {
            StageName::Rate => json!({
                "inputs": self.inputs,
                "prompt_pack": self.prompt_pack,
                "transport": self.transport,
                "mock_script": self.mock_script,
                "model": self.model,
                "base_url": self.base_url,
                "retry_budget": self.retry_budget,
                "rating_temperature": self.rating_temperature,
            }),
            StageName::Correct => json!({
                "embeddings": self.embeddings,
                "embedding_url": self.embedding_url,
                "embedding_model": self.embedding_model,
                "seed": self.seed,
                "k": self.k,
                "rounds": self.rounds,
                "sample_fraction": self.sample_fraction,
                "correction": self.correction,
            }),
            StageName::Split | StageName::Export => json!({}),
            StageName::Select => json!({
                "seed": self.seed,
                "threshold": self.threshold,
                "alpha": self.alpha,
                "reps_per_subcluster": self.reps_per_subcluster,
                "filter_patterns": self.filter_patterns,
            }),
            StageName::Fuse => json!({
                "seed": self.seed,
                "mode": self.mode,
                "pairing": self.pairing,
                "budget": self.budget,
                "da_temperature": self.da_temperature,
                "temperature": self.temperature,
                "keep_all_strategies": self.keep_all_strategies,
            }),
        }
    }

    /// Hash of the settings of `stage` and every stage upstream of it.
    pub fn stage_hash(&self, stage: StageName) -> String {
        let keys: Vec<Value> = StageName::ALL
            .iter()
            .take_while(|s| **s <= stage)
            .map(|s| self.stage_keys(*s))
            .collect();
        short_hash(&Value::Array(keys))
    }

    /// Hash of every result-affecting setting.
    pub fn config_hash(&self) -> String {
        self.stage_hash(StageName::Export)
    }
}

fn short_hash(v: &Value) -> String {
    let digest = Sha256::digest(v.to_string().as_bytes());
    hex::encode(&digest[..8])
}
