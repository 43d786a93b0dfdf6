//! Run-directory persistence.
//!
//! Layout: `manifest.json` (config hash, spec and entity copies,
//! timestamps), `results/<entity>.json` per completed entity,
//! `results/<entity>.failed.json` per given-up entity, and
//! `telemetry.jsonl` with one usage line per provider call. Every write
//! goes through an atomic rename, so a killed run leaves either a whole
//! file or nothing, and resume can trust whatever it finds.
//!
//! Timestamps live only in the manifest; result files and telemetry are
//! byte-deterministic so replayed runs can be diffed.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EntityResult;
use crate::provider::Usage;
use crate::task::{EntitySet, TaskSpec};
use crate::util::{atomic_write_json, fs_safe_stem, sha256_hex};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt run file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error(
        "run dir belongs to a different configuration \
         (manifest hash {found}, current config {expected})"
    )]
    ConfigHashMismatch { expected: String, found: String },
    #[error(
        "entity ids {a:?} and {b:?} map to the same result file name {stem:?}"
    )]
    StemCollision { a: String, b: String, stem: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

/// Identity of a run: hash over the canonical JSON of the task and the
/// entity set. Any change to either makes a new identity.
pub fn config_hash(task: &TaskSpec, entities: &EntitySet) -> String {
    let canonical = serde_json::json!({ "task": task, "entities": entities });
    sha256_hex(canonical.to_string().as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub task: TaskSpec,
    pub entities: EntitySet,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// One usage line per provider call. Deliberately carries no wall-clock
/// time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryLine {
    pub entity_id: String,
    pub attempt: u32,
    pub model_id: String,
    pub usage: Usage,
}

/// Terminal failure marker for one entity, distinct from any curated
/// outcome: the engine gave up, the model did not report not_found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedRecord {
    pub entity_id: String,
    pub error: String,
    pub attempts: u32,
    pub usage: Usage,
}

/// Where each entity of a run stands. Failed entities are terminal:
/// resume never re-attempts them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunState {
    pub done: BTreeSet<String>,
    pub failed: BTreeSet<String>,
    pub pending: Vec<String>,
}

impl RunState {
    pub fn completed(&self) -> usize {
        self.done.len() + self.failed.len()
    }

    pub fn is_complete(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Append-only JSONL sink, safe to share across jobs.
pub struct TelemetrySink {
    path: PathBuf,
    file: std::sync::Mutex<std::fs::File>,
}

impl TelemetrySink {
    pub fn append_to(path: impl Into<PathBuf>) -> Result<Self, CheckpointError> {
        let path = path.into();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(TelemetrySink { path, file: std::sync::Mutex::new(file) })
    }

    pub fn log(&self, line: &TelemetryLine) -> Result<(), CheckpointError> {
        let mut encoded = serde_json::to_vec(line).expect("telemetry line serializes");
        encoded.push(b'\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(&encoded).map_err(io_err(&self.path))?;
        file.flush().map_err(io_err(&self.path))
    }
}

/// Read back a telemetry log. A missing file is an empty log.
pub fn read_telemetry(path: &Path) -> Result<Vec<TelemetryLine>, CheckpointError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| CheckpointError::Corrupt {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn telemetry_path(&self) -> PathBuf {
        self.root.join("telemetry.jsonl")
    }

    pub fn curated_csv_path(&self) -> PathBuf {
        self.root.join("curated.csv")
    }

    pub fn curated_jsonl_path(&self) -> PathBuf {
        self.root.join("curated.jsonl")
    }

    pub fn overrides_path(&self) -> PathBuf {
        self.root.join("overrides.csv")
    }

    pub fn result_path(&self, entity_id: &str) -> PathBuf {
        self.results_dir().join(format!("{}.json", fs_safe_stem(entity_id)))
    }

    pub fn failed_path(&self, entity_id: &str) -> PathBuf {
        self.results_dir()
            .join(format!("{}.failed.json", fs_safe_stem(entity_id)))
    }

    /// Create a fresh run dir, or validate that an existing one belongs
    /// to this exact configuration.
    pub fn init_or_resume(
        &self,
        task: &TaskSpec,
        entities: &EntitySet,
        now: DateTime<Utc>,
    ) -> Result<Manifest, CheckpointError> {
        check_stems(entities)?;
        let expected = config_hash(task, entities);
        let path = self.manifest_path();
        if path.exists() {
            let mut manifest = self.load_manifest()?;
            if manifest.config_hash != expected {
                return Err(CheckpointError::ConfigHashMismatch {
                    expected,
                    found: manifest.config_hash,
                });
            }
            manifest.updated_at = now;
            atomic_write_json(&path, &manifest).map_err(io_err(&path))?;
            Ok(manifest)
        } else {
            std::fs::create_dir_all(self.results_dir())
                .map_err(io_err(&self.results_dir()))?;
            let manifest = Manifest {
                config_hash: expected,
                task: task.clone(),
                entities: entities.clone(),
                created_at: now,
                updated_at: now,
            };
            atomic_write_json(&path, &manifest).map_err(io_err(&path))?;
            Ok(manifest)
        }
    }

    pub fn load_manifest(&self) -> Result<Manifest, CheckpointError> {
        let path = self.manifest_path();
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| CheckpointError::Corrupt {
            path,
            detail: e.to_string(),
        })
    }

    pub fn write_result(&self, result: &EntityResult) -> Result<(), CheckpointError> {
        let path = self.result_path(&result.entity_id);
        atomic_write_json(&path, result).map_err(io_err(&path))
    }

    pub fn load_result(&self, entity_id: &str) -> Result<EntityResult, CheckpointError> {
        let path = self.result_path(entity_id);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let result: EntityResult =
            serde_json::from_slice(&bytes).map_err(|e| CheckpointError::Corrupt {
                path: path.clone(),
                detail: e.to_string(),
            })?;
        if result.entity_id != entity_id {
            return Err(CheckpointError::Corrupt {
                path,
                detail: format!(
                    "file claims entity {:?}, expected {:?}",
                    result.entity_id, entity_id
                ),
            });
        }
        Ok(result)
    }

    pub fn write_failed(&self, record: &FailedRecord) -> Result<(), CheckpointError> {
        let path = self.failed_path(&record.entity_id);
        atomic_write_json(&path, record).map_err(io_err(&path))
    }

    pub fn load_failed(&self, entity_id: &str) -> Result<FailedRecord, CheckpointError> {
        let path = self.failed_path(entity_id);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| CheckpointError::Corrupt {
            path,
            detail: e.to_string(),
        })
    }

    /// Classify every entity as done, failed, or pending. Existing files
    /// are parsed so corruption surfaces here rather than mid-run.
    pub fn scan(&self, entities: &EntitySet) -> Result<RunState, CheckpointError> {
        let mut state = RunState::default();
        for row in &entities.rows {
            if self.result_path(&row.entity_id).exists() {
                self.load_result(&row.entity_id)?;
                state.done.insert(row.entity_id.clone());
            } else if self.failed_path(&row.entity_id).exists() {
                self.load_failed(&row.entity_id)?;
                state.failed.insert(row.entity_id.clone());
            } else {
                state.pending.push(row.entity_id.clone());
            }
        }
        Ok(state)
    }
}

/// Reject entity sets whose ids sanitize to the same file stem.
fn check_stems(entities: &EntitySet) -> Result<(), CheckpointError> {
    let mut by_stem: std::collections::HashMap<String, &str> = Default::default();
    for row in &entities.rows {
        let stem = fs_safe_stem(&row.entity_id);
        if let Some(existing) = by_stem.insert(stem.clone(), &row.entity_id) {
            return Err(CheckpointError::StemCollision {
                a: existing.to_string(),
                b: row.entity_id.clone(),
                stem,
            });
        }
    }
    Ok(())
}
