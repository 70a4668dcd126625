use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::plan::{plan_fusion, FusionJob};
use super::state::{write_atomic, JobLog, JobRecord, JobStatus};
use super::{run_pool, Pipeline, PipelineError, RunOptions, StageReport};
use crate::corpus::{
    attach_embeddings, export_marker_format, load_jsonl_files, read_embeddings, read_jsonl,
    write_embeddings_binary, write_jsonl_atomic, CorpusSample, DatasetSplit, EmbeddedSample,
    EmbeddingEndpoint, EmbeddingProvider, EmbeddingTable, FusionMode, MergedCorpus,
};
use crate::denoise::{denoise, DenoiseConfig, SolverConfig};
use crate::fusion::{
    best_output, fuse_pair, intra_cluster_fuse, FusionContext, FusionError, Operand, Stage,
};
use crate::rating::{rate_sample, split_by_score, RatedRecord};
use crate::select::{
    one_hop_cluster, select_representatives, ClusterRepresentatives, OneHopCluster, RepresentativeSet,
    SelectConfig,
};

pub(crate) const RATE_LOG: &str = "rate_log.jsonl";
pub(crate) const RATINGS: &str = "ratings.jsonl";
pub(crate) const CORRECTED: &str = "corrected.jsonl";
pub(crate) const DIAGNOSTICS: &str = "diagnostics.json";
pub(crate) const SPLIT: &str = "split.json";
pub(crate) const CLUSTERS: &str = "clusters.jsonl";
pub(crate) const REPRESENTATIVES: &str = "representatives.jsonl";
pub(crate) const FUSE_LOG: &str = "fuse_log.jsonl";
pub(crate) const MERGED: &str = "merged.jsonl";
pub(crate) const EXPORT: &str = "export.jsonl";
pub(crate) const EXPORT_SFT: &str = "export_sft.jsonl";
const EMBEDDING_CACHE: &str = "embeddings.cache.bin";
const DEFAULT_EMBEDDING_MODEL: &str = "BAAI/bge-large-en-v1.5";

type FusionSummary = Option<BTreeMap<String, JobStatus>>;

/// One line of `rate_log.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRecord {
    pub id: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<RatedRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JobRecord for RateRecord {
    fn job_id(&self) -> &str {
        &self.id
    }
    fn status(&self) -> JobStatus {
        self.status
    }
}

/// One line of `corrected.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: String,
    pub raw_score: u8,
    pub corrected_score: u8,
}

/// One line of `fuse_log.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuseRecord {
    pub job_id: String,
    pub mode: FusionMode,
    pub status: JobStatus,
    /// Representative ids the job consumed.
    pub sources: Vec<String>,
    /// Outputs, lowest final loss first.
    #[serde(default)]
    pub merged: Vec<MergedCorpus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FusionError>,
}

impl JobRecord for FuseRecord {
    fn job_id(&self) -> &str {
        &self.job_id
    }
    fn status(&self) -> JobStatus {
        self.status
    }
}

/// One line of `export_sft.jsonl`: the marker text of a merged corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub text: String,
    pub mode: FusionMode,
    pub sources: Vec<String>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Unit-norm embeddings for `samples`, from the configured file or, failing
/// that, from the endpoint (fetched once, then cached in the output dir).
fn embed(p: &Pipeline, samples: &[CorpusSample]) -> Result<Vec<EmbeddedSample>, PipelineError> {
    let cfg = p.config();
    if let Some(path) = &cfg.embeddings {
        return Ok(attach_embeddings(samples, &read_embeddings(path)?)?);
    }
    let cache = p.output_dir().join(EMBEDDING_CACHE);
    let mut table = if cache.exists() {
        read_embeddings(&cache)?
    } else {
        EmbeddingTable::new()
    };
    let missing: Vec<CorpusSample> = samples
        .iter()
        .filter(|s| table.get(&s.id).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        let url = cfg.embedding_url.as_ref().ok_or_else(|| {
            PipelineError::Config("set `embeddings` (a file) or `embedding_url`".into())
        })?;
        let mut endpoint = EmbeddingEndpoint::new(
            url.as_str(),
            cfg.embedding_model.as_deref().unwrap_or(DEFAULT_EMBEDDING_MODEL),
        );
        endpoint.api_key_env = Some(cfg.api_key_env.clone());
        info!("fetching {} embeddings from {url}", missing.len());
        for (s, v) in missing.iter().zip(endpoint.vectors(&missing)?) {
            if let Some(v) = v {
                table.insert(s.id.clone(), v);
            }
        }
        write_embeddings_binary(&cache, &table)?;
    }
    Ok(attach_embeddings(samples, &table)?)
}

pub(super) fn rate(p: &Pipeline, report: &mut StageReport, opts: RunOptions) -> Result<FusionSummary, PipelineError> {
    let cfg = p.config();
    let dir = p.output_dir();
    let samples = load_jsonl_files(&cfg.inputs)?;
    let log: JobLog<RateRecord> = JobLog::open(&dir.join(RATE_LOG))?;
    let todo: Vec<&CorpusSample> = samples
        .iter()
        .filter(|s| log.needs_run(&s.id, opts.retry_failed))
        .collect();
    info!("rating {} of {} samples", todo.len(), samples.len());
    if !todo.is_empty() {
        let gateway = p.gateway()?;
        let mut append_error = None;
        run_pool(
            &todo,
            cfg.concurrency,
            |s| {
                rate_sample(gateway, p.pack(), s, cfg.rating_temperature)
                    .and_then(|r| RatedRecord::new(s.id.clone(), r))
            },
            |i, result| {
                let id = todo[i].id.clone();
                let record = match result {
                    Ok(rating) => RateRecord {
                        id,
                        status: JobStatus::Done,
                        rating: Some(rating),
                        error: None,
                    },
                    Err(e) => {
                        warn!("rating {id} failed: {e}");
                        RateRecord {
                            id,
                            status: JobStatus::Failed,
                            rating: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                if let Err(e) = log.append(&record) {
                    append_error.get_or_insert(e);
                }
            },
        );
        if let Some(e) = append_error {
            return Err(e);
        }
    }
    let latest = log.reload()?;
    let mut ratings = Vec::new();
    let mut failed = 0;
    for s in &samples {
        match latest.get(&s.id) {
            Some(RateRecord { rating: Some(r), status: JobStatus::Done, .. }) => ratings.push(r.clone()),
            Some(r) => {
                failed += 1;
                report.notes.push(format!("{}: {}", s.id, r.error.as_deref().unwrap_or("failed")));
            }
            None => failed += 1,
        }
    }
    write_jsonl_atomic(&dir.join(RATINGS), &ratings)?;
    report.count("samples", samples.len());
    report.count("attempted", todo.len());
    report.count("rated", ratings.len());
    report.count("failed", failed);
    Ok(None)
}

pub(super) fn correct(p: &Pipeline, report: &mut StageReport) -> Result<FusionSummary, PipelineError> {
    let cfg = p.config();
    let dir = p.output_dir();
    let ratings: Vec<RatedRecord> = read_jsonl(&dir.join(RATINGS))?;
    let scores: HashMap<&str, u8> = ratings.iter().map(|r| (r.id.as_str(), r.overall_mapped)).collect();
    let rated: Vec<CorpusSample> = load_jsonl_files(&cfg.inputs)?
        .into_iter()
        .filter(|s| scores.contains_key(s.id.as_str()))
        .collect();
    let mut embedded = embed(p, &rated)?;
    for e in &mut embedded {
        e.raw_score = Some(scores[e.sample_id.as_str()]);
    }
    let outcome = denoise(
        &embedded,
        &DenoiseConfig {
            k: cfg.k,
            rounds: cfg.rounds,
            sample_fraction: cfg.sample_fraction,
            seed: cfg.seed,
            correction: cfg.correction,
            solver: SolverConfig::default(),
        },
    )?;
    let records: Vec<ScoredRecord> = embedded
        .iter()
        .zip(&outcome.corrected)
        .map(|(e, &c)| ScoredRecord {
            id: e.sample_id.clone(),
            raw_score: e.raw_score.expect("set above"),
            corrected_score: c,
        })
        .collect();
    let changed = records.iter().filter(|r| r.raw_score != r.corrected_score).count();
    write_jsonl_atomic(&dir.join(CORRECTED), &records)?;
    write_json(
        &dir.join(DIAGNOSTICS),
        &json!({
            "transition": outcome.fit.t.rows(),
            "prior": outcome.fit.p.as_slice(),
            "residual": outcome.fit.residual,
            "converged": outcome.fit.converged,
            "iterations": outcome.fit.iterations,
            "triples": outcome.triples,
            "correction": cfg.correction,
            "changed": changed,
        }),
    )?;
    report.count("samples", records.len());
    report.count("triples", outcome.triples);
    report.count("changed", changed);
    report.count("solver_iterations", outcome.fit.iterations);
    if !outcome.fit.converged {
        report.notes.push("transition solver hit its iteration cap".into());
    }
    Ok(None)
}

pub(super) fn split(p: &Pipeline, report: &mut StageReport) -> Result<FusionSummary, PipelineError> {
    let dir = p.output_dir();
    let scored: Vec<ScoredRecord> = read_jsonl(&dir.join(CORRECTED))?;
    let samples: Vec<EmbeddedSample> = scored
        .into_iter()
        .map(|r| EmbeddedSample {
            sample_id: r.id,
            embedding: Vec::new(),
            raw_score: Some(r.raw_score),
            corrected_score: Some(r.corrected_score),
        })
        .collect();
    let split = split_by_score(&samples)?;
    write_json(&dir.join(SPLIT), &split)?;
    report.count("lq", split.lq_ids.len());
    report.count("hq", split.hq_ids.len());
    Ok(None)
}

fn matches_filter(s: &CorpusSample, filters: &[regex::Regex]) -> bool {
    filters
        .iter()
        .any(|f| f.is_match(&s.instruction) || f.is_match(&s.input) || f.is_match(&s.response))
}

pub(super) fn select(p: &Pipeline, report: &mut StageReport) -> Result<FusionSummary, PipelineError> {
    let cfg = p.config();
    let dir = p.output_dir();
    let split: DatasetSplit = read_json(&dir.join(SPLIT))?;
    let scored: Vec<ScoredRecord> = read_jsonl(&dir.join(CORRECTED))?;
    let corrected: HashMap<&str, u8> = scored.iter().map(|r| (r.id.as_str(), r.corrected_score)).collect();
    let lq: HashSet<&str> = split.lq_ids.iter().map(String::as_str).collect();
    let filters = cfg.filters()?;
    let (kept, filtered): (Vec<CorpusSample>, Vec<CorpusSample>) = load_jsonl_files(&cfg.inputs)?
        .into_iter()
        .filter(|s| lq.contains(s.id.as_str()))
        .partition(|s| !matches_filter(s, &filters));
    let mut embedded = embed(p, &kept)?;
    for e in &mut embedded {
        e.corrected_score = corrected.get(e.sample_id.as_str()).copied();
    }
    let clusters: Vec<OneHopCluster> = one_hop_cluster(&embedded, cfg.threshold, cfg.seed);
    let reps = select_representatives(
        &embedded,
        &clusters,
        &SelectConfig {
            alpha: cfg.alpha,
            reps_per_subcluster: cfg.reps_per_subcluster,
            seed: cfg.seed,
        },
    )?;
    write_jsonl_atomic(&dir.join(CLUSTERS), &clusters)?;
    write_jsonl_atomic(&dir.join(REPRESENTATIVES), &reps.clusters)?;
    report.count("lq", lq.len());
    report.count("filtered", filtered.len());
    report.count("clusters", clusters.len());
    report.count("representatives", reps.total());
    report.count(
        "subclustered",
        reps.clusters
            .iter()
            .filter(|c| c.representatives.iter().any(|r| r.role == crate::select::Role::SubclusterCenter))
            .count(),
    );
    Ok(None)
}

fn run_job(ctx: &FusionContext<'_>, job: &FusionJob, samples: &HashMap<&str, &CorpusSample>) -> FuseRecord {
    let record = |status, merged, error| FuseRecord {
        job_id: job.job_id.clone(),
        mode: job.mode,
        status,
        sources: job.ids.clone(),
        merged,
        error,
    };
    let operands: Result<Vec<Operand>, FusionError> = job
        .ids
        .iter()
        .map(|id| {
            samples
                .get(id.as_str())
                .map(|s| Operand::from_sample(s))
                .ok_or_else(|| FusionError::new(Stage::Driver, id.as_str(), "unknown sample id"))
        })
        .collect();
    let result = operands.and_then(|ops| match job.mode {
        FusionMode::Intra => intra_cluster_fuse(ctx, &ops, job.seed).map(|m| vec![m]),
        FusionMode::Inter => {
            let outcome = fuse_pair(ctx, &ops[0], &ops[1], FusionMode::Inter, job.seed)?;
            let mut best = best_output(&outcome).merged.clone();
            best.provenance
                .notes
                .extend(outcome.errors.iter().map(|e| format!("dropped strategy: {e}")));
            let mut merged = vec![best];
            let best_index = merged[0].provenance.strategy.as_ref().map(|s| s.index);
            merged.extend(
                outcome
                    .outputs
                    .iter()
                    .filter(|c| Some(c.run.strategy.index) != best_index)
                    .map(|c| c.merged.clone()),
            );
            Ok(merged)
        }
    });
    match result {
        Ok(merged) => record(JobStatus::Done, merged, None),
        Err(e) => {
            warn!("fusion job {} failed: {e}", job.job_id);
            record(JobStatus::Failed, Vec::new(), Some(e))
        }
    }
}

pub(super) fn fuse(p: &Pipeline, report: &mut StageReport, opts: RunOptions) -> Result<FusionSummary, PipelineError> {
    let cfg = p.config();
    let dir = p.output_dir();
    let clusters: Vec<ClusterRepresentatives> = read_jsonl(&dir.join(REPRESENTATIVES))?;
    let reps = RepresentativeSet { clusters };
    let jobs = plan_fusion(&reps, cfg.mode, cfg.pairing, cfg.seed)?;
    let corpus = load_jsonl_files(&cfg.inputs)?;
    let samples: HashMap<&str, &CorpusSample> = corpus.iter().map(|s| (s.id.as_str(), s)).collect();
    let log: JobLog<FuseRecord> = JobLog::open(&dir.join(FUSE_LOG))?;
    let todo: Vec<&FusionJob> = jobs
        .iter()
        .filter(|j| log.needs_run(&j.job_id, opts.retry_failed))
        .collect();
    info!("fusing {} of {} jobs", todo.len(), jobs.len());
    if !todo.is_empty() {
        let mut ctx = FusionContext::new(p.gateway()?, p.pack());
        ctx.budget = cfg.budget;
        ctx.da_temperature = cfg.da_temperature;
        ctx.temperature = cfg.temperature;
        let mut append_error = None;
        run_pool(
            &todo,
            cfg.concurrency,
            |job| run_job(&ctx, job, &samples),
            |_, record| {
                if let Err(e) = log.append(&record) {
                    append_error.get_or_insert(e);
                }
            },
        );
        if let Some(e) = append_error {
            return Err(e);
        }
    }
    let latest = log.reload()?;
    let mut summary = BTreeMap::new();
    let mut merged = Vec::new();
    for job in &jobs {
        let status = match latest.get(&job.job_id) {
            Some(r) if r.status == JobStatus::Done => {
                if cfg.keep_all_strategies {
                    merged.extend(r.merged.iter().cloned());
                } else {
                    merged.extend(r.merged.first().cloned());
                }
                JobStatus::Done
            }
            Some(r) => {
                if let Some(e) = &r.error {
                    report.notes.push(format!("{}: {e}", job.job_id));
                }
                r.status
            }
            None => JobStatus::Pending,
        };
        summary.insert(job.job_id.clone(), status);
    }
    write_jsonl_atomic(&dir.join(MERGED), &merged)?;
    let count = |m: FusionMode| jobs.iter().filter(|j| j.mode == m).count();
    let with = |s: JobStatus| summary.values().filter(|v| **v == s).count();
    report.count("jobs", jobs.len());
    report.count("intra_jobs", count(FusionMode::Intra));
    report.count("inter_jobs", count(FusionMode::Inter));
    report.count("attempted", todo.len());
    report.count("done", with(JobStatus::Done));
    report.count("failed", with(JobStatus::Failed));
    report.count("merged", merged.len());
    Ok(Some(summary))
}

pub(super) fn export(p: &Pipeline, report: &mut StageReport) -> Result<FusionSummary, PipelineError> {
    let dir = p.output_dir();
    let merged: Vec<MergedCorpus> = read_jsonl(&dir.join(MERGED))?;
    let mut kept = Vec::new();
    let mut sft = Vec::new();
    for m in merged {
        match export_marker_format(&m) {
            Ok(text) => {
                sft.push(SftRecord {
                    text,
                    mode: m.provenance.mode,
                    sources: m.provenance.sources.clone(),
                });
                kept.push(m);
            }
            Err(e) => report
                .notes
                .push(format!("skipped corpus from {}: {e}", m.provenance.sources.join("+"))),
        }
    }
    write_jsonl_atomic(&dir.join(EXPORT), &kept)?;
    write_jsonl_atomic(&dir.join(EXPORT_SFT), &sft)?;
    report.count("exported", kept.len());
    report.count("skipped", report.notes.len());
    Ok(None)
}
