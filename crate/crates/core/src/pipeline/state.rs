use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{PipelineError, StageName, StageReport};
use crate::corpus::{read_jsonl, write_jsonl_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Done,
    Failed,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMark {
    /// Hash of the settings the stage ran with.
    pub hash: String,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<StageReport>,
}

/// `manifest.json` in the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<StageName, StageMark>,
    /// Outcome of every planned fusion job as of the last `fuse` run.
    #[serde(default)]
    pub fusion: BTreeMap<String, JobStatus>,
}

impl RunState {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<RunState, PipelineError> {
        let path = dir.join(Self::FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RunState::default()),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(Self::FILE), text.as_bytes())
    }

    pub fn is_complete(&self, stage: StageName, hash: &str) -> bool {
        self.stages
            .get(&stage)
            .is_some_and(|m| m.completed && m.hash == hash)
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = crate::corpus::tmp_path(path);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        PipelineError::io(path, e)
    })
}

/// A record of one job attempt in an append-only log.
pub trait JobRecord: Serialize + DeserializeOwned {
    fn job_id(&self) -> &str;
    fn status(&self) -> JobStatus;
}

/// Append-only JSONL log of job outcomes, one line per finished attempt; the
/// last line for a job wins. A partially written final line (from a killed
/// run) is discarded when the log is reopened.
pub struct JobLog<R> {
    path: PathBuf,
    file: Mutex<File>,
    latest: HashMap<String, R>,
}

impl<R: JobRecord + Clone> JobLog<R> {
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        let records: Vec<R> = if path.exists() {
            read_jsonl(path)?
        } else {
            Vec::new()
        };
        // rewrite so appends never follow a torn line
        write_jsonl_atomic(path, &records)?;
        let mut latest = HashMap::new();
        for r in records {
            latest.insert(r.job_id().to_string(), r);
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| PipelineError::io(path, e))?;
        Ok(JobLog {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            latest,
        })
    }

    pub fn latest(&self, job_id: &str) -> Option<&R> {
        self.latest.get(job_id)
    }

    /// Whether a job still has to run.
    pub fn needs_run(&self, job_id: &str, retry_failed: bool) -> bool {
        match self.latest(job_id).map(JobRecord::status) {
            None | Some(JobStatus::Pending) => true,
            Some(JobStatus::Failed) => retry_failed,
            Some(JobStatus::Done) => false,
        }
    }

    /// Appends one record; safe to call from several workers.
    pub fn append(&self, record: &R) -> Result<(), PipelineError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| PipelineError::io(&self.path, e))
    }

    /// Re-reads the log after appends and returns the latest record per job.
    pub fn reload(self) -> Result<HashMap<String, R>, PipelineError> {
        drop(self.file);
        let records: Vec<R> = read_jsonl(&self.path)?;
        Ok(records
            .into_iter()
            .map(|r| (r.job_id().to_string(), r))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, Serialize, Deserialize)]
    struct Rec {
        id: String,
        status: JobStatus,
    }

    impl JobRecord for Rec {
        fn job_id(&self) -> &str {
            &self.id
        }
        fn status(&self) -> JobStatus {
            self.status
        }
    }

    fn rec(id: &str, status: JobStatus) -> Rec {
        Rec { id: id.into(), status }
    }

    #[test]
    fn torn_tail_is_dropped_and_latest_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"status\":\"failed\"}\n{\"id\":\"b\",\"status\":\"done\"}\n{\"id\":\"c\",\"sta",
        )
        .unwrap();
        let log: JobLog<Rec> = JobLog::open(&path).unwrap();
        assert!(!log.needs_run("b", false));
        assert!(!log.needs_run("a", false));
        assert!(log.needs_run("a", true));
        assert!(log.needs_run("c", false));
        log.append(&rec("a", JobStatus::Done)).unwrap();
        log.append(&rec("c", JobStatus::Done)).unwrap();
        let latest = log.reload().unwrap();
        assert_eq!(latest.len(), 3);
        assert!(latest.values().all(|r| r.status == JobStatus::Done));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(RunState::load(dir.path()).unwrap(), RunState::default());
        let mut s = RunState {
            config_hash: "abc".into(),
            seed: 4,
            ..RunState::default()
        };
        s.stages.insert(
            StageName::Rate,
            StageMark {
                hash: "h".into(),
                completed: true,
                report: None,
            },
        );
        s.save(dir.path()).unwrap();
        let back = RunState::load(dir.path()).unwrap();
        assert_eq!(back, s);
        assert!(back.is_complete(StageName::Rate, "h"));
        assert!(!back.is_complete(StageName::Rate, "other"));
    }
}
