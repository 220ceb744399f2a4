//! QA construction: synthesize 1-3 multiple-choice QA pairs per audio
//! clip from few-shot seed exemplars and the clip's metadata.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    media_type_for_uri, AudioAttachment, ChatBackend, ChatMessage, ChatRequest, ContentPart,
    ModelRole,
};
use crate::corpus::{sample_seed_questions, AudioRecord, SeedQuestion};
use crate::extract::first_json_array;
use crate::hash::derive_seed;
use crate::stage::{StageError, StageOutcome};

/// Stage parameters. Ablation flags mirror the pipeline-level variants:
/// exemplars off, metadata off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    pub use_seed_questions: bool,
    pub use_metadata: bool,
    /// Number of few-shot exemplars sampled per record.
    pub exemplar_count: usize,
    /// Restrict exemplar sampling to the record's domains.
    pub domain_filter: bool,
    pub min_options: usize,
    pub max_options: usize,
    pub max_pairs: usize,
    pub max_gen_retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig {
            use_seed_questions: true,
            use_metadata: true,
            exemplar_count: 20,
            domain_filter: false,
            min_options: 2,
            max_options: 6,
            max_pairs: 3,
            max_gen_retries: 2,
            temperature: 0.8,
            max_tokens: 1024,
        }
    }
}

/// A parsed QA item as the annotator emits it, before it is tied to a
/// record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaDraft {
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaProvenance {
    pub exemplar_ids: Vec<String>,
    pub prompt_hash: String,
    pub model: String,
    pub timestamp: String,
}

/// A validated multiple-choice QA pair bound to an audio record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub options: Vec<String>,
    pub answer_key: usize,
    pub audio_id: String,
    pub provenance: QaProvenance,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QaParseError {
    #[error("no structured QA array in output")]
    NoStructuredBlock,
    #[error("invalid pair at index {index}: {reason}")]
    InvalidPair { index: usize, reason: String },
    #[error("too many pairs: {count} (limit {limit})")]
    TooManyPairs { count: usize, limit: usize },
}

/// Whitespace-collapsed, lowercased form used for option distinctness
/// and dedup keys.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Option label for position `i`: A, B, C, ...
pub fn option_label(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Question plus enumerated options, as shown to the thinker and kept
/// in the exported prompt string.
pub fn render_question_block(question: &str, options: &[String]) -> String {
    let mut out = format!("Question: {question}\nOptions:\n");
    for (i, option) in options.iter().enumerate() {
        out.push_str(&format!("{}. {option}\n", option_label(i)));
    }
    out
}

fn validate_draft(draft: &QaDraft, config: &QaConfig) -> Result<(), String> {
    if draft.question.trim().is_empty() {
        return Err("question is empty".into());
    }
    let n = draft.options.len();
    if n < config.min_options || n > config.max_options {
        return Err(format!(
            "option count {n} outside [{}, {}]",
            config.min_options, config.max_options
        ));
    }
    let mut normalized: Vec<String> = Vec::with_capacity(n);
    for option in &draft.options {
        if option.trim().is_empty() {
            return Err("option text is empty".into());
        }
        let norm = normalize_text(option);
        if normalized.contains(&norm) {
            return Err(format!("duplicate option after normalization: {option:?}"));
        }
        normalized.push(norm);
    }
    if draft.answer_index >= n {
        return Err(format!(
            "answer_index {} out of range for {n} options",
            draft.answer_index
        ));
    }
    Ok(())
}

/// Extract the first structured QA array from raw model output. Prose
/// and code fences around the array are tolerated; an output with more
/// than `max_pairs` valid pairs is rejected whole.
pub fn parse_qa_output(text: &str, config: &QaConfig) -> Result<Vec<QaDraft>, QaParseError> {
    let array = first_json_array(text, |a| !a.is_empty() && a.iter().all(|v| v.is_object()))
        .ok_or(QaParseError::NoStructuredBlock)?;
    let mut drafts = Vec::with_capacity(array.len());
    for (index, value) in array.into_iter().enumerate() {
        let draft: QaDraft =
            serde_json::from_value(value).map_err(|e| QaParseError::InvalidPair {
                index,
                reason: e.to_string(),
            })?;
        validate_draft(&draft, config)
            .map_err(|reason| QaParseError::InvalidPair { index, reason })?;
        drafts.push(draft);
    }
    if drafts.len() > config.max_pairs {
        return Err(QaParseError::TooManyPairs {
            count: drafts.len(),
            limit: config.max_pairs,
        });
    }
    Ok(drafts)
}

/// Serialize drafts in the grammar the annotator is instructed to emit.
/// `parse_qa_output` of the result is the identity.
pub fn serialize_qa_drafts(drafts: &[QaDraft]) -> String {
    let body = serde_json::to_string_pretty(drafts).expect("drafts serialize");
    format!("```json\n{body}\n```")
}

fn audio_part(record: &AudioRecord) -> ContentPart {
    ContentPart::Audio {
        audio: AudioAttachment::from_uri(&record.audio_uri, media_type_for_uri(&record.audio_uri)),
    }
}

/// Build the annotator prompt for one record. Rendering is
/// deterministic: exemplars in sampled order, metadata in key order.
pub fn build_qa_prompt(
    record: &AudioRecord,
    exemplars: &[SeedQuestion],
    config: &QaConfig,
) -> ChatRequest {
    let system = format!(
        "You are an audio analysis annotator. Listen to the audio clip and write \
         1 to {max_pairs} multiple-choice questions about it.\n\
         Requirements:\n\
         - Each question must be answerable from the audio alone.\n\
         - Give between {min} and {max} options per question; exactly one is correct.\n\
         - Make the incorrect options confusing hard negatives: plausible, close to \
         the audio content, but verifiably wrong.\n\
         - Vary the angle across questions: events, sources, ordering, counts, \
         emotions, genre, instruments, speech content, or cross-domain relations.\n\
         Output format: a fenced json code block containing an array of 1 to \
         {max_pairs} objects, each with fields \"question\" (string), \"options\" \
         (array of strings), \"answer_index\" (0-based integer), and \
         \"distractor_note\" (string).",
        max_pairs = config.max_pairs,
        min = config.min_options,
        max = config.max_options,
    );

    let mut user = String::new();
    if config.use_seed_questions && !exemplars.is_empty() {
        user.push_str("Example questions for style and depth:\n");
        for (i, exemplar) in exemplars.iter().enumerate() {
            user.push_str(&format!("{}. {}\n", i + 1, exemplar.text));
        }
        user.push('\n');
    }
    if config.use_metadata && !record.metadata.is_empty() {
        user.push_str("Audio metadata:\n");
        for (key, value) in &record.metadata {
            user.push_str(&format!("- {key}: {value}\n"));
        }
        user.push('\n');
    }
    user.push_str("Write the QA pairs for this audio clip.");

    ChatRequest {
        role: ModelRole::Annotator,
        messages: vec![
            ChatMessage::system(system),
            ChatMessage::user(vec![ContentPart::text(user), audio_part(record)]),
        ],
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        request_seed: None,
    }
}

/// Run the full QA stage for one record: sample exemplars, prompt the
/// annotator, parse. Parse failures retry with a fresh request seed up
/// to `max_gen_retries`, then the record is skipped with a reason.
/// Backend failures abort the stage.
pub fn construct_qa(
    backend: &dyn ChatBackend,
    record: &AudioRecord,
    pool: &[SeedQuestion],
    config: &QaConfig,
    global_seed: u64,
) -> Result<StageOutcome<Vec<QAPair>>, StageError> {
    let exemplars = if config.use_seed_questions {
        let sample_seed = derive_seed(global_seed, &["qa-exemplars", &record.id]);
        let filter = config.domain_filter.then(|| record.domains.clone());
        sample_seed_questions(pool, config.exemplar_count, sample_seed, filter.as_deref())?
    } else {
        Vec::new()
    };
    let request = build_qa_prompt(record, &exemplars, config);
    let prompt_hash = request.prompt_hash();

    let attempts = config.max_gen_retries + 1;
    let mut last_error = QaParseError::NoStructuredBlock;
    for attempt in 0..attempts {
        let mut attempt_request = request.clone();
        attempt_request.request_seed = Some(derive_seed(
            global_seed,
            &["qa", &record.id, &attempt.to_string()],
        ));
        let response = backend.complete(&attempt_request)?;
        match parse_qa_output(&response.text, config) {
            Ok(drafts) => {
                let timestamp = chrono::Utc::now().to_rfc3339();
                let pairs = drafts
                    .into_iter()
                    .map(|draft| QAPair {
                        question: draft.question,
                        options: draft.options,
                        answer_key: draft.answer_index,
                        audio_id: record.id.clone(),
                        provenance: QaProvenance {
                            exemplar_ids: exemplars.iter().map(|e| e.id.clone()).collect(),
                            prompt_hash: prompt_hash.clone(),
                            model: backend.model_name().to_string(),
                            timestamp: timestamp.clone(),
                        },
                    })
                    .collect();
                return Ok(StageOutcome::Emitted(pairs));
            }
            Err(e) => {
                tracing::warn!(
                    audio_id = %record.id,
                    attempt = attempt + 1,
                    error = %e,
                    "QA output parse failed"
                );
                last_error = e;
            }
        }
    }
    Ok(StageOutcome::Skipped {
        reason: format!("qa_parse_exhausted: {last_error}"),
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptedBackend};
    use crate::corpus::{Difficulty, Domain};
    use indexmap::IndexMap;

    fn record() -> AudioRecord {
        let mut metadata = IndexMap::new();
        metadata.insert("caption".to_string(), "rain on a tin roof".to_string());
        metadata.insert("labels".to_string(), "rain, metal".to_string());
        AudioRecord {
            id: "rec-0001".into(),
            audio_uri: "audio/rec-0001.wav".into(),
            source_dataset: "SetA".into(),
            domains: vec![Domain::Sound],
            duration_seconds: Some(10.0),
            metadata,
        }
    }

    fn pool(n: usize) -> Vec<SeedQuestion> {
        (0..n)
            .map(|i| SeedQuestion {
                id: format!("seed-{i}"),
                text: format!("What can be inferred from exemplar sound {i}?"),
                domains: vec![Domain::Sound],
                reasoning_type: "inference".into(),
                difficulty: Difficulty::Medium,
            })
            .collect()
    }

    fn drafts(n: usize) -> Vec<QaDraft> {
        (0..n)
            .map(|i| QaDraft {
                question: format!("Question {i}?"),
                options: vec![
                    format!("option {i} a"),
                    format!("option {i} b"),
                    format!("option {i} c"),
                ],
                answer_index: i % 3,
                distractor_note: Some("close but wrong".into()),
            })
            .collect()
    }

    #[test]
    fn parse_fenced_array_with_prose() {
        let config = QaConfig::default();
        let ds = drafts(2);
        let text = format!("Here you go!\n{}\nHope this helps.", serialize_qa_drafts(&ds));
        assert_eq!(parse_qa_output(&text, &config).unwrap(), ds);
    }

    #[test]
    fn parse_rejects_four_pairs() {
        let config = QaConfig::default();
        let text = serialize_qa_drafts(&drafts(4));
        assert_eq!(
            parse_qa_output(&text, &config),
            Err(QaParseError::TooManyPairs { count: 4, limit: 3 })
        );
    }

    #[test]
    fn parse_rejects_prose_only() {
        let config = QaConfig::default();
        assert_eq!(
            parse_qa_output("I could not find any questions.", &config),
            Err(QaParseError::NoStructuredBlock)
        );
    }

    #[test]
    fn parse_names_violated_invariant() {
        let config = QaConfig::default();
        let text = r#"```json
[{"question": "Q?", "options": ["same", "Same "], "answer_index": 0}]
```"#;
        match parse_qa_output(text, &config) {
            Err(QaParseError::InvalidPair { index: 0, reason }) => {
                assert!(reason.contains("duplicate option"), "{reason}");
            }
            other => panic!("expected InvalidPair, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_out_of_range_answer() {
        let config = QaConfig::default();
        let text = r#"[{"question": "Q?", "options": ["a", "b"], "answer_index": 2}]"#;
        match parse_qa_output(text, &config) {
            Err(QaParseError::InvalidPair { reason, .. }) => {
                assert!(reason.contains("out of range"), "{reason}");
            }
            other => panic!("expected InvalidPair, got {other:?}"),
        }
    }

    #[test]
    fn prompt_without_exemplars_has_no_exemplar_text() {
        let config = QaConfig {
            use_seed_questions: false,
            ..QaConfig::default()
        };
        let prompt = build_qa_prompt(&record(), &[], &config);
        let text = prompt.text_content();
        assert!(!text.contains("Example questions"));
        assert!(!text.contains("exemplar sound"));
    }

    #[test]
    fn prompt_without_metadata_has_no_metadata_block() {
        let config = QaConfig {
            use_metadata: false,
            ..QaConfig::default()
        };
        let exemplars = pool(20);
        let prompt = build_qa_prompt(&record(), &exemplars, &config);
        let text = prompt.text_content();
        assert!(!text.contains("Audio metadata"));
        assert!(!text.contains("rain on a tin roof"));
    }

    #[test]
    fn prompt_is_deterministic() {
        let config = QaConfig::default();
        let exemplars = pool(20);
        let a = build_qa_prompt(&record(), &exemplars, &config);
        let b = build_qa_prompt(&record(), &exemplars, &config);
        assert_eq!(a.prompt_hash(), b.prompt_hash());
    }

    #[test]
    fn prompt_contains_metadata_in_key_order() {
        let config = QaConfig::default();
        let prompt = build_qa_prompt(&record(), &pool(20), &config);
        let text = prompt.text_content();
        let caption_pos = text.find("caption: rain on a tin roof").unwrap();
        let labels_pos = text.find("labels: rain, metal").unwrap();
        assert!(caption_pos < labels_pos);
    }

    #[test]
    fn construct_qa_happy_path() {
        let config = QaConfig::default();
        let ds = drafts(2);
        let mut script = Script::new();
        script.on(
            ModelRole::Annotator,
            &["rec-0001"],
            serialize_qa_drafts(&ds),
        );
        let backend = ScriptedBackend::new(script).with_model_name("annotator-mock");
        let outcome = construct_qa(&backend, &record(), &pool(20), &config, 42).unwrap();
        let pairs = outcome.emitted().unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].audio_id, "rec-0001");
        assert_eq!(pairs[0].answer_key, 0);
        assert_eq!(pairs[0].provenance.exemplar_ids.len(), 20);
        assert_eq!(pairs[0].provenance.model, "annotator-mock");
    }

    #[test]
    fn construct_qa_skips_after_retries() {
        let config = QaConfig {
            max_gen_retries: 2,
            ..QaConfig::default()
        };
        let mut script = Script::new();
        script.set_default("just prose, no structure");
        let backend = ScriptedBackend::new(script);
        let outcome = construct_qa(&backend, &record(), &pool(20), &config, 42).unwrap();
        match outcome {
            StageOutcome::Skipped { reason, attempts } => {
                assert_eq!(attempts, 3);
                assert!(reason.contains("qa_parse_exhausted"), "{reason}");
            }
            other => panic!("expected skip, got {other:?}"),
        }
        assert_eq!(backend.call_count(), 3);
    }

    #[test]
    fn construct_qa_retry_uses_fresh_seed() {
        // First attempt returns prose; a rule keyed on the second
        // attempt's seed returns a valid array.
        let config = QaConfig {
            max_gen_retries: 2,
            ..QaConfig::default()
        };
        let retry_seed = derive_seed(42, &["qa", "rec-0001", "1"]);
        let mut script = Script::new();
        script.add_match(
            crate::backend::MatchFields {
                request_seed: Some(retry_seed),
                ..Default::default()
            },
            serialize_qa_drafts(&drafts(1)),
        );
        script.set_default("prose");
        let backend = ScriptedBackend::new(script);
        let outcome = construct_qa(&backend, &record(), &pool(20), &config, 42).unwrap();
        assert_eq!(outcome.emitted().unwrap().len(), 1);
        assert_eq!(backend.call_count(), 2);
    }

    #[test]
    fn serialize_parse_round_trip() {
        let config = QaConfig::default();
        for n in 1..=3 {
            let ds = drafts(n);
            let parsed = parse_qa_output(&serialize_qa_drafts(&ds), &config).unwrap();
            assert_eq!(parsed, ds);
        }
    }
}
