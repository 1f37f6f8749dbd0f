//! On-disk run store.
//!
//! ```text
//! <root>/<run_id>/config.json
//!                 transactions.csv
//!                 points/<granularity>.csv
//!                 clusters/<granularity>.json
//!                 models/<granularity>.json
//!                 cases.ndjson
//!                 knowledge.ndjson
//! ```
//!
//! The two `.ndjson` logs are append-only. Each record is written with a
//! single `write_all` of one newline-terminated line, and readers ignore a
//! trailing line without its newline, so a concurrent reader never observes
//! a torn record. JSON documents are replaced via write-then-rename.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BatchProfile, Disposition, PipelineError, ScoredCase, Stage};
use crate::calendar::{Day, Granularity};
use crate::classifier::TrainedModel;
use crate::clustering::ClusteringSummary;
use crate::features::{read_points_csv, FeatureRow};
use crate::ingest::{parse_transactions, RawTransactionRecord};
use crate::screening::ScreeningThresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub profile: BatchProfile,
    /// SHA-256 of the canonical transactions file.
    pub input_fingerprint: String,
    pub record_count: usize,
    /// Logical clock of the run: the profile's `as_of` or the latest transaction date.
    pub as_of: Day,
    pub started_at: String,
}

/// Clustering of one granularity's screened points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub granularity: Granularity,
    pub summary: ClusteringSummary,
    /// Row positions in `points/<granularity>.csv` of the clustered points.
    pub members: Vec<usize>,
    /// Cluster of each member, aligned with `members`.
    pub assignments: Vec<usize>,
    /// Cluster(s) used as positives by the initial training.
    pub suspicious_clusters: Vec<usize>,
}

impl ClusterArtifact {
    pub fn members_of(&self, cluster: usize) -> Vec<usize> {
        self.members
            .iter()
            .zip(&self.assignments)
            .filter(|(_, &a)| a == cluster)
            .map(|(&m, _)| m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLabel {
    Suspicious,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum KnowledgeEvent {
    RunStarted {
        profile: BatchProfile,
        input_fingerprint: String,
        records: usize,
    },
    Screened {
        granularity: Granularity,
        thresholds: ScreeningThresholds,
        points: usize,
        screened: usize,
    },
    Clustered {
        granularity: Granularity,
        summary: ClusteringSummary,
    },
    ClusterLabeled {
        granularity: Granularity,
        cluster: usize,
        label: ClusterLabel,
    },
    ModelTrained {
        granularity: Granularity,
        model_fingerprint: String,
        training_set_fingerprint: String,
        positives: usize,
        negatives: usize,
        excluded_positives: usize,
        final_loss: f64,
    },
    RunCompleted {
        model_fingerprints: BTreeMap<Granularity, String>,
    },
    StageFailed {
        stage: Stage,
        granularity: Option<Granularity>,
        message: String,
    },
    CaseScored {
        case_id: String,
        case: ScoredCase,
    },
    DispositionRecorded {
        case_id: String,
        disposition: Disposition,
        note: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub seq: u64,
    pub run_id: String,
    pub timestamp: String,
    #[serde(flatten)]
    pub event: KnowledgeEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

/// Immutable per-run inputs, cached after the first load.
#[derive(Debug)]
pub struct RunData {
    pub config: RunConfig,
    pub records: Vec<RawTransactionRecord>,
    points: Mutex<HashMap<Granularity, Arc<Vec<FeatureRow>>>>,
}

#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    writer: Mutex<()>,
    cache: Mutex<HashMap<String, Arc<RunData>>>,
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn io_err(path: &Path, e: io::Error) -> PipelineError {
    PipelineError::Io { path: path.to_path_buf(), source: e }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut line = serde_json::to_vec(value).map_err(|e| PipelineError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    f.write_all(&line).map_err(|e| io_err(path, e))
}

/// Complete lines only; a trailing fragment is still being written.
fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path, e)),
    };
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(end) => &bytes[..=end],
        None => return Ok(Vec::new()),
    };
    complete
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_slice(l).map_err(|e| PipelineError::Corrupt {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(RunStore {
            root,
            writer: Mutex::new(()),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Serialises mutations against this store.
    pub fn lock_writer(&self) -> MutexGuard<'_, ()> {
        self.writer.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    fn checked_run_dir(&self, run_id: &str) -> Result<PathBuf, PipelineError> {
        let valid = !run_id.is_empty()
            && run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            && run_id != "."
            && run_id != "..";
        let dir = self.run_dir(run_id);
        if valid && dir.join("config.json").is_file() {
            Ok(dir)
        } else {
            Err(PipelineError::NotFound(format!("run {run_id}")))
        }
    }

    pub fn list_runs(&self) -> Result<Vec<String>, PipelineError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| io_err(&self.root, e))? {
            let entry = entry.map_err(|e| io_err(&self.root, e))?;
            if entry.path().join("config.json").is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Reserves a fresh run directory named after `stem`.
    pub(crate) fn create_run_dir(&self, stem: &str) -> Result<(String, PathBuf), PipelineError> {
        for n in 0.. {
            let id = if n == 0 { stem.to_string() } else { format!("{stem}-{n}") };
            let dir = self.run_dir(&id);
            match fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&dir, e)),
            }
        }
        unreachable!()
    }

    pub fn config(&self, run_id: &str) -> Result<RunConfig, PipelineError> {
        let dir = self.checked_run_dir(run_id)?;
        read_json(&dir.join("config.json"))
    }

    pub(crate) fn write_config(&self, dir: &Path, config: &RunConfig) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(config).expect("config serialises");
        bytes.push(b'\n');
        write_atomic(&dir.join("config.json"), &bytes)
    }

    pub fn run_data(&self, run_id: &str) -> Result<Arc<RunData>, PipelineError> {
        if let Some(d) = self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(run_id) {
            return Ok(d.clone());
        }
        let config = self.config(run_id)?;
        let path = self.run_dir(run_id).join("transactions.csv");
        let file = File::open(&path).map_err(|e| io_err(&path, e))?;
        let parsed = parse_transactions(file)?;
        let data = Arc::new(RunData {
            config,
            records: parsed.records,
            points: Mutex::new(HashMap::new()),
        });
        self.cache
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(run_id.to_string(), data.clone());
        Ok(data)
    }

    pub fn points(&self, run_id: &str, g: Granularity) -> Result<Arc<Vec<FeatureRow>>, PipelineError> {
        let data = self.run_data(run_id)?;
        let mut cached = data.points.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(rows) = cached.get(&g) {
            return Ok(rows.clone());
        }
        let path = self.run_dir(run_id).join("points").join(format!("{g}.csv"));
        let file = File::open(&path).map_err(|_| PipelineError::NotFound(format!("{g} points of run {run_id}")))?;
        let rows = Arc::new(read_points_csv(file)?);
        cached.insert(g, rows.clone());
        Ok(rows)
    }

    pub fn clusters(&self, run_id: &str, g: Granularity) -> Result<ClusterArtifact, PipelineError> {
        let path = self.checked_run_dir(run_id)?.join("clusters").join(format!("{g}.json"));
        if !path.is_file() {
            return Err(PipelineError::NotFound(format!("{g} clustering of run {run_id}")));
        }
        read_json(&path)
    }

    pub(crate) fn write_clusters(&self, dir: &Path, artifact: &ClusterArtifact) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(artifact).expect("artifact serialises");
        bytes.push(b'\n');
        write_atomic(&dir.join("clusters").join(format!("{}.json", artifact.granularity)), &bytes)
    }

    pub fn model(&self, run_id: &str, g: Granularity) -> Result<TrainedModel, PipelineError> {
        let path = self.checked_run_dir(run_id)?.join("models").join(format!("{g}.json"));
        let text = fs::read_to_string(&path)
            .map_err(|_| PipelineError::NotFound(format!("{g} model of run {run_id}")))?;
        Ok(TrainedModel::from_json(&text)?)
    }

    pub fn model_path(&self, run_id: &str, g: Granularity) -> PathBuf {
        self.run_dir(run_id).join("models").join(format!("{g}.json"))
    }

    pub(crate) fn write_model(&self, dir: &Path, model: &TrainedModel) -> Result<(), PipelineError> {
        write_atomic(
            &dir.join("models").join(format!("{}.json", model.granularity)),
            model.to_json().as_bytes(),
        )
    }

    pub fn knowledge(&self, run_id: &str) -> Result<Vec<KnowledgeRecord>, PipelineError> {
        let dir = self.checked_run_dir(run_id)?;
        read_lines(&dir.join("knowledge.ndjson"))
    }

    /// Appends one knowledge record. Callers hold the writer lock.
    pub(crate) fn append_knowledge(&self, run_id: &str, event: KnowledgeEvent) -> Result<KnowledgeRecord, PipelineError> {
        let path = self.run_dir(run_id).join("knowledge.ndjson");
        let seq = read_lines::<KnowledgeRecord>(&path)?.last().map_or(0, |r| r.seq + 1);
        let record = KnowledgeRecord {
            seq,
            run_id: run_id.to_string(),
            timestamp: now_rfc3339(),
            event,
        };
        append_line(&path, &record)?;
        Ok(record)
    }

    pub fn status(&self, run_id: &str) -> Result<RunStatus, PipelineError> {
        let mut status = RunStatus::Running;
        for r in self.knowledge(run_id)? {
            match r.event {
                KnowledgeEvent::RunCompleted { .. } => status = RunStatus::Completed,
                KnowledgeEvent::StageFailed { .. } => status = RunStatus::Failed,
                _ => {}
            }
        }
        Ok(status)
    }

    /// Latest expert label per cluster at `g`.
    pub fn cluster_labels(&self, run_id: &str, g: Granularity) -> Result<BTreeMap<usize, ClusterLabel>, PipelineError> {
        let mut labels = BTreeMap::new();
        for r in self.knowledge(run_id)? {
            if let KnowledgeEvent::ClusterLabeled { granularity, cluster, label } = r.event {
                if granularity == g {
                    labels.insert(cluster, label);
                }
            }
        }
        Ok(labels)
    }

    /// Every case at its latest version, in order of creation.
    pub fn cases(&self, run_id: &str) -> Result<Vec<ScoredCase>, PipelineError> {
        let dir = self.checked_run_dir(run_id)?;
        let versions: Vec<ScoredCase> = read_lines(&dir.join("cases.ndjson"))?;
        let mut order: Vec<String> = Vec::new();
        let mut latest: HashMap<String, ScoredCase> = HashMap::new();
        for c in versions {
            if !latest.contains_key(&c.case_id) {
                order.push(c.case_id.clone());
            }
            latest.insert(c.case_id.clone(), c);
        }
        Ok(order.into_iter().filter_map(|id| latest.remove(&id)).collect())
    }

    pub fn case(&self, run_id: &str, case_id: &str) -> Result<ScoredCase, PipelineError> {
        self.cases(run_id)?
            .into_iter()
            .find(|c| c.case_id == case_id)
            .ok_or_else(|| PipelineError::NotFound(format!("case {case_id} in run {run_id}")))
    }

    pub(crate) fn append_case(&self, run_id: &str, case: &ScoredCase) -> Result<(), PipelineError> {
        append_line(&self.run_dir(run_id).join("cases.ndjson"), case)
    }

    pub(crate) fn next_case_id(&self, run_id: &str) -> Result<String, PipelineError> {
        Ok(format!("case-{:06}", self.cases(run_id)?.len() + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_trailing_line_is_invisible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.ndjson");
        append_line(&path, &serde_json::json!({"a": 1})).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"a\": 2").unwrap();
        let lines: Vec<serde_json::Value> = read_lines(&path).unwrap();
        assert_eq!(lines, vec![serde_json::json!({"a": 1})]);
        f.write_all(b"}\n").unwrap();
        assert_eq!(read_lines::<serde_json::Value>(&path).unwrap().len(), 2);
    }

    #[test]
    fn run_ids_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        assert!(matches!(store.config("../etc"), Err(PipelineError::NotFound(_))));
        assert!(matches!(store.config("missing"), Err(PipelineError::NotFound(_))));
        let (a, _) = store.create_run_dir("run-x").unwrap();
        let (b, _) = store.create_run_dir("run-x").unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("run-x", "run-x-1"));
    }
}
