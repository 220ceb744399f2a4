//! Workdir state: run lock, per-run metadata, and tolerant checkpoint
//! reading for resume.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::jsonl::JsonlError;
use crate::pipeline::PipelineError;

/// Persistent per-workdir run record: which config produced it and
/// which stages have fully completed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config_hash: String,
    pub completed: Vec<String>,
}

impl RunState {
    pub fn path(workdir: &Path) -> PathBuf {
        workdir.join("run-state.json")
    }

    pub fn load(workdir: &Path) -> Result<Option<RunState>, PipelineError> {
        let path = Self::path(workdir);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Workdir {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let state = serde_json::from_str(&text).map_err(|e| PipelineError::Workdir {
            path: path.display().to_string(),
            message: format!("corrupt run state: {e}"),
        })?;
        Ok(Some(state))
    }

    pub fn save(&self, workdir: &Path) -> Result<(), PipelineError> {
        let path = Self::path(workdir);
        let body = serde_json::to_string_pretty(self).expect("state serializes");
        std::fs::write(&path, format!("{body}\n")).map_err(|e| PipelineError::Workdir {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn is_complete(&self, stage: &str) -> bool {
        self.completed.iter().any(|s| s == stage)
    }

    pub fn mark_complete(&mut self, stage: &str, workdir: &Path) -> Result<(), PipelineError> {
        if !self.is_complete(stage) {
            self.completed.push(stage.to_string());
        }
        self.save(workdir)
    }
}

/// Exclusive ownership of a workdir for the duration of a run. The
/// lock file is removed on drop.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(workdir: &Path) -> Result<LockGuard, PipelineError> {
        let path = workdir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked {
                    path: path.display().to_string(),
                })
            }
            Err(e) => Err(PipelineError::Workdir {
                path: path.display().to_string(),
                message: e.to_string(),
            }),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        if let Err(e) = std::fs::remove_file(&self.path) {
            tracing::warn!(path = %self.path.display(), error = %e, "failed to remove lock file");
        }
    }
}

/// Read a stage checkpoint, tolerating one malformed final line (a torn
/// write from a crash). Malformed lines anywhere else are real errors.
pub fn read_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| JsonlError::io(path, e))?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut out = Vec::with_capacity(lines.len());
    for (position, (line_no, line)) in lines.iter().enumerate() {
        match serde_json::from_str::<T>(line) {
            Ok(item) => out.push(item),
            Err(e) if position + 1 == lines.len() => {
                tracing::warn!(
                    path = %path.display(),
                    line = line_no,
                    error = %e,
                    "dropping torn final checkpoint line"
                );
            }
            Err(e) => return Err(JsonlError::line(path, *line_no, e.to_string())),
        }
    }
    Ok(out)
}
