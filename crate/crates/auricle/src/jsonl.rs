//! Line-delimited JSON files: the interchange format for manifests,
//! seed pools, stage checkpoints, and exports.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
}

impl JsonlError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        JsonlError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn line(path: &Path, line: usize, message: impl Into<String>) -> Self {
        JsonlError::Line {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}

/// Read a whole JSONL file. Blank lines are skipped; any malformed line
/// fails with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let item = serde_json::from_str(&line)
            .map_err(|e| JsonlError::line(path, line_no, e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

/// Like [`read_jsonl`] but keeps the 1-based line number of each item,
/// for callers that report their own validation errors.
pub fn read_jsonl_numbered<T: DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(usize, T)>, JsonlError> {
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let item = serde_json::from_str(&line)
            .map_err(|e| JsonlError::line(path, line_no, e.to_string()))?;
        out.push((line_no, item));
    }
    Ok(out)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, JsonlError> {
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((idx + 1, line));
    }
    Ok(out)
}

/// Write items as one JSON object per line. Rewrites are byte-identical
/// for identical input.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let file = File::create(path).map_err(|e| JsonlError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| JsonlError::line(path, 0, e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| JsonlError::io(path, e))?;
    }
    writer.flush().map_err(|e| JsonlError::io(path, e))
}

/// Append-mode JSONL writer used for stage checkpoints. Each append is
/// flushed so a crash loses at most the line being written.
pub struct JsonlAppender {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl JsonlAppender {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| JsonlError::io(path, e))?;
        Ok(JsonlAppender {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
        })
    }

    pub fn append<T: Serialize>(&mut self, item: &T) -> Result<(), JsonlError> {
        let line = serde_json::to_string(item)
            .map_err(|e| JsonlError::line(&self.path, 0, e.to_string()))?;
        writeln!(self.writer, "{line}").map_err(|e| JsonlError::io(&self.path, e))?;
        self.writer.flush().map_err(|e| JsonlError::io(&self.path, e))
    }
}
