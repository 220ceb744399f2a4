//! Corpus ingestion: audio metadata manifests and the seed question
//! pool, with deterministic sampling and per-source statistics.

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ChatBackend, ChatMessage, ChatRequest, ModelRole};
use crate::extract::first_json_array;
use crate::jsonl::JsonlError;

/// Audio domain tags. Every record and seed question carries a
/// non-empty set of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Sound,
    Speech,
    Music,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Sound => "sound",
            Domain::Speech => "speech",
            Domain::Music => "music",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sound" => Ok(Domain::Sound),
            "speech" => Ok(Domain::Speech),
            "music" => Ok(Domain::Music),
            other => Err(format!("unknown domain tag: {other:?}")),
        }
    }
}

/// One audio clip reference with its descriptive metadata.
///
/// `metadata` is an ordered map so prompt rendering is deterministic;
/// unknown manifest fields are folded into it on load.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AudioRecord {
    pub id: String,
    pub audio_uri: String,
    pub source_dataset: String,
    pub domains: Vec<Domain>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub metadata: IndexMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct RawAudioRecord {
    id: String,
    audio_uri: String,
    source_dataset: String,
    domains: Vec<String>,
    #[serde(default)]
    duration_seconds: Option<f64>,
    #[serde(default)]
    metadata: IndexMap<String, String>,
    #[serde(flatten)]
    extra: IndexMap<String, serde_json::Value>,
}

impl<'de> Deserialize<'de> for AudioRecord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawAudioRecord::deserialize(deserializer)?;
        let domains = parse_domains(&raw.domains).map_err(serde::de::Error::custom)?;
        let mut metadata = raw.metadata;
        for (key, value) in raw.extra {
            let rendered = match value {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            metadata.insert(key, rendered);
        }
        let record = AudioRecord {
            id: raw.id,
            audio_uri: raw.audio_uri,
            source_dataset: raw.source_dataset,
            domains,
            duration_seconds: raw.duration_seconds,
            metadata,
        };
        record.validate().map_err(serde::de::Error::custom)?;
        Ok(record)
    }
}

impl AudioRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id is empty".into());
        }
        if self.domains.is_empty() {
            return Err("domains is empty".into());
        }
        if let Some(d) = self.duration_seconds {
            if !(d > 0.0) {
                return Err(format!("duration_seconds must be positive, got {d}"));
            }
        }
        Ok(())
    }
}

fn parse_domains(tags: &[String]) -> Result<Vec<Domain>, String> {
    let mut out = Vec::with_capacity(tags.len());
    for tag in tags {
        let domain: Domain = tag.parse()?;
        if out.contains(&domain) {
            return Err(format!("duplicate domain tag: {tag:?}"));
        }
        out.push(domain);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Low,
    Medium,
    High,
}

/// One curated exemplar question from the seed pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedQuestion {
    pub id: String,
    pub text: String,
    pub domains: Vec<Domain>,
    pub reasoning_type: String,
    pub difficulty: Difficulty,
}

#[derive(Debug, Deserialize)]
struct RawSeedQuestion {
    id: String,
    text: String,
    domains: Vec<String>,
    reasoning_type: String,
    difficulty: Difficulty,
}

impl<'de> Deserialize<'de> for SeedQuestion {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawSeedQuestion::deserialize(deserializer)?;
        let domains = parse_domains(&raw.domains).map_err(serde::de::Error::custom)?;
        let question = SeedQuestion {
            id: raw.id,
            text: raw.text,
            domains,
            reasoning_type: raw.reasoning_type,
            difficulty: raw.difficulty,
        };
        question.validate().map_err(serde::de::Error::custom)?;
        Ok(question)
    }
}

impl SeedQuestion {
    pub fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("text is empty".into());
        }
        if self.domains.is_empty() {
            return Err("domains is empty".into());
        }
        Ok(())
    }
}

/// Loaded manifest: records plus per-source counts recomputed on load.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<AudioRecord>,
    pub source_counts: BTreeMap<String, usize>,
}

impl CorpusManifest {
    pub fn from_records(records: Vec<AudioRecord>) -> Self {
        let mut source_counts = BTreeMap::new();
        for record in &records {
            *source_counts.entry(record.source_dataset.clone()).or_insert(0) += 1;
        }
        CorpusManifest {
            records,
            source_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Map from record id to record, in manifest order.
    pub fn by_id(&self) -> IndexMap<&str, &AudioRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path} line {line}: {message}")]
    InvalidRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path} line {line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
        first_line: usize,
    },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("seed pool too small: need {need}, have {have} after filtering")]
    PoolTooSmall { need: usize, have: usize },
    #[error("sample count must be at least 1")]
    ZeroSampleCount,
    #[error("no parseable seed candidates in backend output")]
    NoCandidates,
    #[error("backend error: {0}")]
    Backend(#[from] crate::backend::BackendError),
}

/// Load a line-delimited manifest. Every non-blank line must be one
/// valid record; ids must be unique within the file.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let records = load_validated::<AudioRecord>(path, |r| r.id.clone())?;
    Ok(CorpusManifest::from_records(records))
}

/// Write a manifest back out, one record per line. `load_manifest` of
/// the result reproduces the manifest exactly.
pub fn serialize_manifest(manifest: &CorpusManifest, path: &Path) -> Result<(), CorpusError> {
    crate::jsonl::write_jsonl(path, &manifest.records)?;
    Ok(())
}

/// Load the seed question pool (same line-delimited convention).
pub fn load_seed_pool(path: &Path) -> Result<Vec<SeedQuestion>, CorpusError> {
    load_validated::<SeedQuestion>(path, |q| q.id.clone())
}

fn load_validated<T: serde::de::DeserializeOwned>(
    path: &Path,
    id_of: impl Fn(&T) -> String,
) -> Result<Vec<T>, CorpusError> {
    let numbered = crate::jsonl::read_jsonl_numbered::<T>(path)?;
    let mut seen: IndexMap<String, usize> = IndexMap::new();
    let mut out = Vec::with_capacity(numbered.len());
    for (line, item) in numbered {
        let id = id_of(&item);
        if let Some(first_line) = seen.get(&id) {
            return Err(CorpusError::DuplicateId {
                path: path.display().to_string(),
                line,
                id,
                first_line: *first_line,
            });
        }
        seen.insert(id, line);
        out.push(item);
    }
    Ok(out)
}

/// Per-source share of the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStat {
    pub source: String,
    pub count: usize,
    pub ratio_percent: f64,
}

/// Round a percentage to two decimal places.
pub fn ratio_percent(count: usize, total: usize) -> f64 {
    let raw = 100.0 * count as f64 / total as f64;
    (raw * 100.0).round() / 100.0
}

/// Per-source counts and ratios, largest source first. Ratios are
/// rounded to two decimals and sum to 100.00 up to rounding residue.
pub fn compute_domain_stats(manifest: &CorpusManifest) -> Result<Vec<SourceStat>, CorpusError> {
    if manifest.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    let total = manifest.len();
    let mut stats: Vec<SourceStat> = manifest
        .source_counts
        .iter()
        .map(|(source, &count)| SourceStat {
            source: source.clone(),
            count,
            ratio_percent: ratio_percent(count, total),
        })
        .collect();
    stats.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.source.cmp(&b.source)));
    Ok(stats)
}

/// Sample `k` distinct questions uniformly without replacement, using a
/// seeded ChaCha8 stream so results are identical across runs and
/// platforms. `domain_filter` keeps questions sharing at least one of
/// the given domains.
pub fn sample_seed_questions(
    pool: &[SeedQuestion],
    k: usize,
    seed: u64,
    domain_filter: Option<&[Domain]>,
) -> Result<Vec<SeedQuestion>, CorpusError> {
    if k == 0 {
        return Err(CorpusError::ZeroSampleCount);
    }
    let mut indices: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, q)| match domain_filter {
            Some(filter) => q.domains.iter().any(|d| filter.contains(d)),
            None => true,
        })
        .map(|(i, _)| i)
        .collect();
    if indices.len() < k {
        return Err(CorpusError::PoolTooSmall {
            need: k,
            have: indices.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = indices.len();
    for i in 0..k {
        // Index arithmetic in u64 keeps the stream platform-independent.
        let j = i + rng.random_range(0..(n - i) as u64) as usize;
        indices.swap(i, j);
    }
    Ok(indices[..k].iter().map(|&i| pool[i].clone()).collect())
}

/// Candidate seed question as emitted by the generator backend, before
/// expert review.
#[derive(Debug, Deserialize)]
struct SeedCandidate {
    text: String,
    domains: Vec<String>,
    #[serde(default)]
    reasoning_type: Option<String>,
    #[serde(default)]
    difficulty: Option<Difficulty>,
}

/// Ask a text backend for up to `n` candidate seed questions. Items
/// that fail validation are dropped with a logged reason; the curated
/// pool is produced later by expert review of the output file.
pub fn generate_seed_candidates(
    backend: &dyn ChatBackend,
    domains: &[Domain],
    n: usize,
) -> Result<Vec<SeedQuestion>, CorpusError> {
    let domain_list = domains
        .iter()
        .map(Domain::as_str)
        .collect::<Vec<_>>()
        .join(", ");
    let system = "You curate seed questions for an audio reasoning dataset. \
                  Write challenging questions that require step-by-step reasoning \
                  about audio content, not surface recall. Output a fenced json \
                  code block containing an array of objects with fields \"text\" \
                  (string), \"domains\" (array drawn from [\"sound\", \"speech\", \
                  \"music\"]), \"reasoning_type\" (short tag), and \"difficulty\" \
                  (one of \"low\", \"medium\", \"high\")."
        .to_string();
    let user = format!(
        "Write up to {n} candidate questions spanning these domains: {domain_list}. \
         Vary reasoning type and difficulty."
    );
    let request = ChatRequest {
        role: ModelRole::Annotator,
        messages: vec![ChatMessage::system(system), ChatMessage::user_text(user)],
        temperature: 0.8,
        max_tokens: 2048,
        request_seed: None,
    };
    let response = backend.complete(&request)?;
    let array = first_json_array(&response.text, |a| {
        !a.is_empty() && a.iter().all(|v| v.is_object())
    })
    .ok_or(CorpusError::NoCandidates)?;

    let mut out = Vec::new();
    for (idx, value) in array.into_iter().enumerate() {
        if out.len() == n {
            break;
        }
        let candidate: SeedCandidate = match serde_json::from_value(value) {
            Ok(c) => c,
            Err(e) => {
                tracing::warn!(index = idx, error = %e, "dropping unparseable seed candidate");
                continue;
            }
        };
        let domains = match parse_domains(&candidate.domains) {
            Ok(d) => d,
            Err(e) => {
                tracing::warn!(index = idx, error = %e, "dropping seed candidate");
                continue;
            }
        };
        let question = SeedQuestion {
            id: format!("cand-{:04}", out.len() + 1),
            text: candidate.text,
            domains,
            reasoning_type: candidate.reasoning_type.unwrap_or_else(|| "general".into()),
            difficulty: candidate.difficulty.unwrap_or(Difficulty::Medium),
        };
        if let Err(e) = question.validate() {
            tracing::warn!(index = idx, error = %e, "dropping invalid seed candidate");
            continue;
        }
        out.push(question);
    }
    if out.is_empty() {
        return Err(CorpusError::NoCandidates);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    fn write_file(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    fn record_line(id: &str, source: &str, domain: &str) -> String {
        format!(
            "{{\"id\":\"{id}\",\"audio_uri\":\"audio/{id}.wav\",\"source_dataset\":\"{source}\",\"domains\":[\"{domain}\"]}}"
        )
    }

    #[test]
    fn empty_file_loads_empty_manifest() {
        let (_dir, path) = write_file("");
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.len(), 0);
        assert!(manifest.source_counts.is_empty());
    }

    #[test]
    fn three_valid_lines_one_per_domain() {
        let content = format!(
            "{}\n{}\n{}\n",
            record_line("a", "SetA", "sound"),
            record_line("b", "SetB", "speech"),
            record_line("c", "SetA", "music"),
        );
        let (_dir, path) = write_file(&content);
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.len(), 3);
        assert_eq!(manifest.records[0].id, "a");
        assert_eq!(manifest.records[0].audio_uri, "audio/a.wav");
        assert_eq!(manifest.records[0].source_dataset, "SetA");
        assert_eq!(manifest.records[0].domains, vec![Domain::Sound]);
        assert_eq!(manifest.records[1].domains, vec![Domain::Speech]);
        assert_eq!(manifest.records[2].domains, vec![Domain::Music]);
        assert_eq!(manifest.source_counts["SetA"], 2);
        assert_eq!(manifest.source_counts["SetB"], 1);
    }

    #[test]
    fn empty_domains_error_names_line() {
        let content = format!(
            "{}\n{{\"id\":\"b\",\"audio_uri\":\"u\",\"source_dataset\":\"S\",\"domains\":[]}}\n",
            record_line("a", "S", "sound")
        );
        let (_dir, path) = write_file(&content);
        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("domains"), "{msg}");
    }

    #[test]
    fn unknown_domain_tag_rejected() {
        let content =
            "{\"id\":\"a\",\"audio_uri\":\"u\",\"source_dataset\":\"S\",\"domains\":[\"noise\"]}\n";
        let (_dir, path) = write_file(content);
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("unknown domain tag"), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let content = format!(
            "{}\n{}\n",
            record_line("a", "S", "sound"),
            record_line("a", "S", "music")
        );
        let (_dir, path) = write_file(&content);
        let err = load_manifest(&path).unwrap_err();
        match err {
            CorpusError::DuplicateId { id, line, first_line, .. } => {
                assert_eq!(id, "a");
                assert_eq!(line, 2);
                assert_eq!(first_line, 1);
            }
            other => panic!("expected DuplicateId, got {other}"),
        }
    }

    #[test]
    fn unknown_fields_fold_into_metadata() {
        let content = "{\"id\":\"a\",\"audio_uri\":\"u\",\"source_dataset\":\"S\",\"domains\":[\"music\"],\"metadata\":{\"caption\":\"piano\"},\"genre\":\"jazz\",\"bpm\":120}\n";
        let (_dir, path) = write_file(content);
        let manifest = load_manifest(&path).unwrap();
        let metadata = &manifest.records[0].metadata;
        assert_eq!(metadata["caption"], "piano");
        assert_eq!(metadata["genre"], "jazz");
        assert_eq!(metadata["bpm"], "120");
    }

    #[test]
    fn manifest_round_trip_is_identity() {
        let content = format!(
            "{}\n{}\n",
            record_line("a", "SetA", "sound"),
            record_line("b", "SetB", "speech"),
        );
        let (dir, path) = write_file(&content);
        let manifest = load_manifest(&path).unwrap();
        let out = dir.path().join("copy.jsonl");
        serialize_manifest(&manifest, &out).unwrap();
        let back = load_manifest(&out).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn nonpositive_duration_rejected() {
        let content = "{\"id\":\"a\",\"audio_uri\":\"u\",\"source_dataset\":\"S\",\"domains\":[\"sound\"],\"duration_seconds\":0.0}\n";
        let (_dir, path) = write_file(content);
        assert!(load_manifest(&path).is_err());
    }

    fn manifest_with_counts(counts: &[(&str, usize)]) -> CorpusManifest {
        let mut records = Vec::new();
        for (source, count) in counts {
            for i in 0..*count {
                records.push(AudioRecord {
                    id: format!("{source}-{i}"),
                    audio_uri: format!("audio/{source}-{i}.wav"),
                    source_dataset: source.to_string(),
                    domains: vec![Domain::Sound],
                    duration_seconds: None,
                    metadata: IndexMap::new(),
                });
            }
        }
        CorpusManifest::from_records(records)
    }

    #[test]
    fn stats_single_source_is_100() {
        let manifest = manifest_with_counts(&[("Only", 7)]);
        let stats = compute_domain_stats(&manifest).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].count, 7);
        assert_eq!(stats[0].ratio_percent, 100.00);
    }

    #[test]
    fn stats_empty_manifest_errors() {
        let manifest = CorpusManifest::from_records(Vec::new());
        assert!(matches!(
            compute_domain_stats(&manifest),
            Err(CorpusError::EmptyManifest)
        ));
    }

    #[test]
    fn stats_ratios_sum_to_100() {
        let manifest = manifest_with_counts(&[("A", 3), ("B", 5), ("C", 9)]);
        let stats = compute_domain_stats(&manifest).unwrap();
        let sum: f64 = stats.iter().map(|s| s.ratio_percent).sum();
        assert!((sum - 100.0).abs() <= 0.05, "sum = {sum}");
        // Largest source first.
        assert_eq!(stats[0].source, "C");
    }

    fn pool(n: usize) -> Vec<SeedQuestion> {
        (0..n)
            .map(|i| SeedQuestion {
                id: format!("q{i}"),
                text: format!("question {i}"),
                domains: vec![match i % 3 {
                    0 => Domain::Sound,
                    1 => Domain::Speech,
                    _ => Domain::Music,
                }],
                reasoning_type: "test".into(),
                difficulty: Difficulty::Medium,
            })
            .collect()
    }

    #[test]
    fn sample_exhaustive_returns_whole_pool() {
        let pool = pool(20);
        let sampled = sample_seed_questions(&pool, 20, 1, None).unwrap();
        assert_eq!(sampled.len(), 20);
        let mut ids: Vec<&str> = sampled.iter().map(|q| q.id.as_str()).collect();
        ids.sort_unstable();
        let mut expected: Vec<&str> = pool.iter().map(|q| q.id.as_str()).collect();
        expected.sort_unstable();
        assert_eq!(ids, expected);
    }

    #[test]
    fn sample_is_deterministic() {
        let pool = pool(500);
        let a = sample_seed_questions(&pool, 20, 7, None).unwrap();
        let b = sample_seed_questions(&pool, 20, 7, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_respects_domain_filter() {
        let pool = pool(30);
        let filter = [Domain::Music];
        let sampled = sample_seed_questions(&pool, 5, 3, Some(&filter)).unwrap();
        assert!(sampled.iter().all(|q| q.domains.contains(&Domain::Music)));
    }

    #[test]
    fn sample_pool_too_small_after_filter() {
        let pool = pool(6); // two questions per domain
        let filter = [Domain::Sound];
        let err = sample_seed_questions(&pool, 5, 3, Some(&filter)).unwrap_err();
        assert!(matches!(err, CorpusError::PoolTooSmall { need: 5, have: 2 }));
    }

    #[test]
    fn sample_outputs_are_distinct_pool_members() {
        let pool = pool(50);
        for seed in 0..20 {
            let sampled = sample_seed_questions(&pool, 10, seed, None).unwrap();
            let ids: HashSet<&str> = sampled.iter().map(|q| q.id.as_str()).collect();
            assert_eq!(ids.len(), 10, "duplicates under seed {seed}");
        }
    }
}
