//! Assemble accepted samples into the SFT dataset: dedup, statistics,
//! and training-target serialization with a recoverable C/R boundary.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ratio_percent, AudioRecord};
use crate::cot::{unwrap_reasoning, wrap_reasoning, SplitError, ThinkDelims};
use crate::jsonl::JsonlError;
use crate::qa::{normalize_text, render_question_block};
use crate::verify::VerifiedSample;

/// Provenance chain from manifest record to exported target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftProvenance {
    pub audio_id: String,
    pub source_dataset: String,
    pub ordinal: usize,
    pub exemplar_ids: Vec<String>,
    pub qa_prompt_hash: String,
    pub cot_prompt_hash: String,
    pub annotator_model: String,
    pub thinker_model: String,
    pub cot_request_seed: u64,
}

/// One training sample: prompt string, target text, and the character
/// offset where the final response begins inside the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub audio_uri: String,
    pub question_rendered: String,
    pub target_text: String,
    pub cr_boundary_offset: usize,
    pub provenance: SftProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub key: String,
    pub count: usize,
    pub ratio_percent: f64,
}

/// Sidecar statistics: totals plus per-source and per-domain-combination
/// breakdowns (count and ratio each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub sources: Vec<StatRow>,
    pub domains: Vec<StatRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupDrop {
    pub audio_id: String,
    pub ordinal: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub enabled: bool,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig { enabled: true }
    }
}

#[derive(Debug, Error)]
pub enum SftError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sample references unknown audio id {0:?}")]
    UnknownAudioId(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Serialize (C, R) into a training target. Returns the target text and
/// the character offset of R's first character.
pub fn render_target(
    cot_text: &str,
    final_response: &str,
    delims: &ThinkDelims,
) -> Result<(String, usize), SftError> {
    if cot_text.is_empty() {
        return Err(SftError::InvalidInput("cot_text is empty".into()));
    }
    if final_response.is_empty() {
        return Err(SftError::InvalidInput("final_response is empty".into()));
    }
    let target = wrap_reasoning(cot_text, final_response, delims);
    let response_chars = final_response.chars().count();
    let offset = target.chars().count() - response_chars;
    Ok((target, offset))
}

/// Exact inverse of [`render_target`].
pub fn parse_target(target: &str, delims: &ThinkDelims) -> Result<(String, String), SplitError> {
    unwrap_reasoning(target, delims)
}

/// Deduplicate accepted samples and build export records plus stats.
/// Dedup key is (audio id, normalized question text); first occurrence
/// wins and drops are returned for logging.
pub fn assemble_dataset(
    accepted: &[VerifiedSample],
    records_by_id: &IndexMap<&str, &AudioRecord>,
    dedup: &DedupConfig,
    delims: &ThinkDelims,
) -> Result<(Vec<SftRecord>, DatasetStats, Vec<DedupDrop>), SftError> {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut out = Vec::with_capacity(accepted.len());
    let mut drops = Vec::new();
    let mut source_counts: IndexMap<String, usize> = IndexMap::new();
    let mut domain_counts: IndexMap<String, usize> = IndexMap::new();

    for sample in accepted {
        if !sample.accepted {
            return Err(SftError::InvalidInput(format!(
                "sample {}#{} is not accepted",
                sample.audio_id, sample.ordinal
            )));
        }
        let record = records_by_id
            .get(sample.audio_id.as_str())
            .ok_or_else(|| SftError::UnknownAudioId(sample.audio_id.clone()))?;
        if dedup.enabled {
            let key = (sample.audio_id.clone(), normalize_text(&sample.qa.question));
            if !seen.insert(key) {
                drops.push(DedupDrop {
                    audio_id: sample.audio_id.clone(),
                    ordinal: sample.ordinal,
                    reason: "duplicate_key".into(),
                });
                continue;
            }
        }
        let (target_text, cr_boundary_offset) =
            render_target(&sample.trace.cot_text, &sample.trace.final_response, delims)?;
        out.push(SftRecord {
            audio_uri: record.audio_uri.clone(),
            question_rendered: render_question_block(&sample.qa.question, &sample.qa.options),
            target_text,
            cr_boundary_offset,
            provenance: SftProvenance {
                audio_id: sample.audio_id.clone(),
                source_dataset: record.source_dataset.clone(),
                ordinal: sample.ordinal,
                exemplar_ids: sample.qa.provenance.exemplar_ids.clone(),
                qa_prompt_hash: sample.qa.provenance.prompt_hash.clone(),
                cot_prompt_hash: sample.trace.provenance.prompt_hash.clone(),
                annotator_model: sample.qa.provenance.model.clone(),
                thinker_model: sample.trace.provenance.model.clone(),
                cot_request_seed: sample.trace.provenance.request_seed,
            },
        });
        *source_counts
            .entry(record.source_dataset.clone())
            .or_insert(0) += 1;
        let domain_key = record
            .domains
            .iter()
            .map(|d| d.as_str())
            .collect::<Vec<_>>()
            .join("+");
        *domain_counts.entry(domain_key).or_insert(0) += 1;
    }

    let total = out.len();
    let stats = DatasetStats {
        total,
        sources: stat_rows(source_counts, total),
        domains: stat_rows(domain_counts, total),
    };
    Ok((out, stats, drops))
}

fn stat_rows(counts: IndexMap<String, usize>, total: usize) -> Vec<StatRow> {
    let mut rows: Vec<StatRow> = counts
        .into_iter()
        .map(|(key, count)| StatRow {
            key,
            count,
            ratio_percent: if total == 0 {
                0.0
            } else {
                ratio_percent(count, total)
            },
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
    rows
}

/// Sidecar path: `out.jsonl` -> `out.stats.json`.
pub fn stats_path(export_path: &Path) -> PathBuf {
    export_path.with_extension("stats.json")
}

/// Write the dataset (one record per line, fields in declaration order)
/// and the stats sidecar. Re-export of equal input is byte-identical.
pub fn export_jsonl(
    records: &[SftRecord],
    stats: &DatasetStats,
    path: &Path,
) -> Result<(), SftError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| SftError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    crate::jsonl::write_jsonl(path, records)?;
    let sidecar = stats_path(path);
    let body = serde_json::to_string_pretty(stats).expect("stats serialize");
    std::fs::write(&sidecar, format!("{body}\n")).map_err(|e| SftError::Io {
        path: sidecar.display().to_string(),
        source: e,
    })?;
    Ok(())
}
