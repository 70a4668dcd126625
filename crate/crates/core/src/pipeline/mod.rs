//! Stage orchestration: `rate → correct → split → select → fuse → export`.
//!
//! Every stage reads the artifacts of the stages before it from the output
//! directory and writes its own with temp-file-and-rename. `manifest.json`
//! records, per stage, the hash of the settings it ran with; a stage refuses
//! to run on top of upstream artifacts produced under different settings.
//! `rate` and `fuse` log each finished job to an append-only file so a killed
//! run resumes with only the pending jobs.

mod config;
mod plan;
mod stages;
mod state;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{PipelineConfig, TransportKind};
pub use plan::{plan_fusion, FusionJob, RunMode};
pub use stages::{FuseRecord, RateRecord, ScoredRecord, SftRecord};
pub use state::{write_atomic, JobLog, JobRecord, JobStatus, RunState, StageMark};

use crate::corpus::CorpusError;
use crate::denoise::DenoiseError;
use crate::fusion::FusionError;
use crate::gateway::{Gateway, MockScript, MockTransport, OnExhausted, OpenAiTransport, Transport};
use crate::prompt::{PromptError, PromptPack};
use crate::rating::RatingError;
use crate::select::SelectError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("run {0} first")]
    RunFirst(StageName),
    #[error("settings changed since `{0}` last ran (config hash differs); rerun it with --force")]
    ConfigChanged(StageName),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fusion plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Rating(#[from] RatingError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Rate,
    Correct,
    Split,
    Select,
    Fuse,
    Export,
}

impl StageName {
    pub const ALL: [StageName; 6] = [
        StageName::Rate,
        StageName::Correct,
        StageName::Split,
        StageName::Select,
        StageName::Fuse,
        StageName::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageName::Rate => "rate",
            StageName::Correct => "correct",
            StageName::Split => "split",
            StageName::Select => "select",
            StageName::Fuse => "fuse",
            StageName::Export => "export",
        }
    }

    pub fn upstream(self) -> impl Iterator<Item = StageName> {
        StageName::ALL.into_iter().take_while(move |s| *s < self)
    }

    pub fn downstream(self) -> impl Iterator<Item = StageName> {
        StageName::ALL.into_iter().filter(move |s| *s > self)
    }

    /// Files the stage owns in the output directory.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            StageName::Rate => &[stages::RATE_LOG, stages::RATINGS],
            StageName::Correct => &[stages::CORRECTED, stages::DIAGNOSTICS],
            StageName::Split => &[stages::SPLIT],
            StageName::Select => &[stages::CLUSTERS, stages::REPRESENTATIVES],
            StageName::Fuse => &[stages::FUSE_LOG, stages::MERGED],
            StageName::Export => &[stages::EXPORT, stages::EXPORT_SFT],
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageName::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Ran,
    /// Already complete under the same settings; nothing was done.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageName,
    pub status: ReportStatus,
    pub seed: u64,
    pub config_hash: String,
    pub counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl StageReport {
    fn new(stage: StageName, status: ReportStatus, config: &PipelineConfig) -> Self {
        StageReport {
            stage,
            status,
            seed: config.seed,
            config_hash: config.stage_hash(stage),
            counts: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub(crate) fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n as u64);
    }
}

impl fmt::Display for StageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            ReportStatus::Ran => "done",
            ReportStatus::Skipped => "already complete, skipped",
        };
        write!(f, "{}: {status} (seed {}, config {})", self.stage, self.seed, self.config_hash)?;
        for (k, v) in &self.counts {
            write!(f, "\n  {k}: {v}")?;
        }
        for n in &self.notes {
            write!(f, "\n  note: {n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Rerun the stage even when complete, discarding its outputs and
    /// invalidating every downstream stage.
    pub force: bool,
    /// Rerun jobs that failed in an earlier `rate` or `fuse` run.
    pub retry_failed: bool,
}

/// A configured run over one output directory.
pub struct Pipeline {
    config: PipelineConfig,
    pack: PromptPack,
    transport: Option<Arc<dyn Transport>>,
    gateway: OnceLock<Gateway>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let pack = match &config.prompt_pack {
            Some(dir) => PromptPack::load(dir)?,
            None => PromptPack::builtin().clone(),
        };
        Ok(Pipeline {
            config,
            pack,
            transport: None,
            gateway: OnceLock::new(),
        })
    }

    /// Uses `transport` instead of the one named in the config.
    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn state(&self) -> Result<RunState, PipelineError> {
        RunState::load(&self.config.output_dir)
    }

    pub(crate) fn pack(&self) -> &PromptPack {
        &self.pack
    }

    pub(crate) fn gateway(&self) -> Result<&Gateway, PipelineError> {
        if let Some(g) = self.gateway.get() {
            return Ok(g);
        }
        let transport: Arc<dyn Transport> = match &self.transport {
            Some(t) => t.clone(),
            None => match self.config.transport {
                TransportKind::Openai => Arc::new(OpenAiTransport {
                    base_url: self.config.base_url.clone(),
                    model: self.config.model.clone(),
                    api_key_env: self.config.api_key_env.clone(),
                    timeout: Duration::from_secs(self.config.timeout_secs),
                }),
                TransportKind::Mock => {
                    let path = self.config.mock_script.as_ref().expect("validated");
                    let script = MockScript::load(path).map_err(PipelineError::Config)?;
                    Arc::new(MockTransport::new(script).on_exhausted(OnExhausted::Error))
                }
            },
        };
        Ok(self
            .gateway
            .get_or_init(|| Gateway::new(transport, self.config.gateway_config())))
    }

    /// Runs one stage after checking its upstream artifacts and settings.
    pub fn run_stage(&self, stage: StageName, opts: RunOptions) -> Result<StageReport, PipelineError> {
        let dir = &self.config.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let mut state = RunState::load(dir)?;
        for up in stage.upstream() {
            match state.stages.get(&up) {
                Some(m) if m.completed && m.hash == self.config.stage_hash(up) => {}
                Some(m) if m.completed => return Err(PipelineError::ConfigChanged(up)),
                _ => return Err(PipelineError::RunFirst(up)),
            }
        }
        let hash = self.config.stage_hash(stage);
        let resumable = matches!(stage, StageName::Rate | StageName::Fuse);
        match state.stages.get(&stage) {
            Some(m) if m.hash != hash && !opts.force => return Err(PipelineError::ConfigChanged(stage)),
            Some(m) if m.completed && !opts.force => {
                let has_failures = m
                    .report
                    .as_ref()
                    .and_then(|r| r.counts.get("failed"))
                    .is_some_and(|&n| n > 0);
                if !(opts.retry_failed && resumable && has_failures) {
                    let mut report = StageReport::new(stage, ReportStatus::Skipped, &self.config);
                    if let Some(prev) = &m.report {
                        report.counts = prev.counts.clone();
                    }
                    return Ok(report);
                }
            }
            _ => {}
        }
        let fresh = opts.force || state.stages.get(&stage).is_none_or(|m| m.hash != hash);
        if fresh {
            for s in std::iter::once(stage).chain(stage.downstream()) {
                for f in s.artifacts() {
                    let p = dir.join(f);
                    if p.exists() {
                        std::fs::remove_file(&p).map_err(|e| PipelineError::io(&p, e))?;
                    }
                }
            }
        }
        for s in std::iter::once(stage).chain(stage.downstream()) {
            state.stages.remove(&s);
        }
        if stage <= StageName::Fuse {
            state.fusion.clear();
        }
        state.config_hash = self.config.config_hash();
        state.seed = self.config.seed;
        state.stages.insert(
            stage,
            StageMark {
                hash: hash.clone(),
                completed: false,
                report: None,
            },
        );
        state.save(dir)?;

        info!("running stage {stage}");
        let mut report = StageReport::new(stage, ReportStatus::Ran, &self.config);
        let fusion = match stage {
            StageName::Rate => stages::rate(self, &mut report, opts)?,
            StageName::Correct => stages::correct(self, &mut report)?,
            StageName::Split => stages::split(self, &mut report)?,
            StageName::Select => stages::select(self, &mut report)?,
            StageName::Fuse => stages::fuse(self, &mut report, opts)?,
            StageName::Export => stages::export(self, &mut report)?,
        };
        if let Some(f) = fusion {
            state.fusion = f;
        }
        state.stages.insert(
            stage,
            StageMark {
                hash,
                completed: true,
                report: Some(report.clone()),
            },
        );
        state.save(dir)?;
        Ok(report)
    }

    /// Runs every stage in order.
    pub fn run_all(&self, opts: RunOptions) -> Result<Vec<StageReport>, PipelineError> {
        StageName::ALL.into_iter().map(|s| self.run_stage(s, opts)).collect()
    }
}

/// Runs `work` over `items` on up to `workers` threads; `done` receives each
/// result as it finishes. Calls to `done` are serialized.
pub(crate) fn run_pool<T, R, W, D>(items: &[T], workers: usize, work: W, done: D)
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> R + Sync,
    D: FnMut(usize, R) + Send,
{
    let next = AtomicUsize::new(0);
    let done = std::sync::Mutex::new(done);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = work(&items[i]);
                (done.lock().unwrap())(i, r);
            });
        }
    });
}
