//! Reasoning-trace generation: free-form CoT for each QA pair with the
//! answer key withheld, plus the conventions for splitting a raw
//! response into reasoning (C) and final response (R).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    media_type_for_uri, AudioAttachment, ChatBackend, ChatMessage, ChatRequest, ChatResponse,
    ContentPart, ModelRole,
};
use crate::corpus::AudioRecord;
use crate::hash::derive_seed;
use crate::qa::{render_question_block, QAPair};
use crate::stage::{StageError, StageOutcome};

/// Delimiters bounding the reasoning block in raw thinker output and in
/// rendered training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThinkDelims {
    pub open: String,
    pub close: String,
}

impl Default for ThinkDelims {
    fn default() -> Self {
        ThinkDelims {
            open: "<think>".into(),
            close: "</think>".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CotConfig {
    pub delims: ThinkDelims,
    pub max_gen_retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for CotConfig {
    fn default() -> Self {
        CotConfig {
            delims: ThinkDelims::default(),
            max_gen_retries: 2,
            temperature: 0.7,
            max_tokens: 2048,
        }
    }
}

/// Which convention separated C from R in a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    ReasoningChannel,
    ThinkDelimiters,
    AnswerMarker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceProvenance {
    pub prompt_hash: String,
    pub model: String,
    pub request_seed: u64,
    pub timestamp: String,
}

/// A reasoning chain C plus final response R, with enough context to
/// re-derive the split from `raw_output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub cot_text: String,
    pub final_response: String,
    pub raw_output: String,
    pub split_method: SplitMethod,
    pub provenance: TraceProvenance,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("response matched no split convention")]
    Unsplittable,
    #[error("malformed wrapped reasoning: {0}")]
    Malformed(String),
}

/// Phrases that would mark an option as correct. Prompts built here
/// must never contain any of them; the check runs over entire stage
/// outputs in tests.
pub const ANSWER_LEAK_PATTERNS: [&str; 6] = [
    "correct answer",
    "answer is",
    "right answer",
    "answer key",
    "correct option",
    "correct choice",
];

/// Scan rendered prompt text for answer-designating content. Returns
/// the offending pattern if one occurs.
pub fn find_answer_leak(prompt_text: &str) -> Option<&'static str> {
    let lower = prompt_text.to_lowercase();
    ANSWER_LEAK_PATTERNS
        .iter()
        .find(|p| lower.contains(*p))
        .copied()
}

/// Build the thinker prompt: audio, question, all options in original
/// order, and free-form reasoning instructions. The answer key is
/// deliberately absent.
pub fn build_cot_prompt(record: &AudioRecord, qa: &QAPair, config: &CotConfig) -> ChatRequest {
    let system = "You are listening to an audio clip and answering a multiple-choice \
                  question about it. Think through what you hear step by step, in \
                  your own words. When you are done, give your final answer on a new \
                  line starting with \"Final answer:\", naming the option letter."
        .to_string();
    let user = render_question_block(&qa.question, &qa.options);
    ChatRequest {
        role: ModelRole::Thinker,
        messages: vec![
            ChatMessage::system(system),
            ChatMessage::user(vec![
                ContentPart::text(user),
                ContentPart::Audio {
                    audio: AudioAttachment::from_uri(
                        &record.audio_uri,
                        media_type_for_uri(&record.audio_uri),
                    ),
                },
            ]),
        ],
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        request_seed: None,
    }
}

/// Wrap (C, R) into a single string: open + escaped C + close + newline
/// + R. A literal close delimiter or backslash inside C is escaped so
/// `unwrap_reasoning` is an exact inverse.
pub fn wrap_reasoning(cot_text: &str, final_response: &str, delims: &ThinkDelims) -> String {
    let escaped = cot_text
        .replace('\\', "\\\\")
        .replace(&delims.close, &format!("\\{}", delims.close));
    format!("{}{}{}\n{}", delims.open, escaped, delims.close, final_response)
}

/// Exact inverse of [`wrap_reasoning`].
pub fn unwrap_reasoning(raw: &str, delims: &ThinkDelims) -> Result<(String, String), SplitError> {
    let body = raw
        .strip_prefix(delims.open.as_str())
        .ok_or_else(|| SplitError::Malformed("missing open delimiter".into()))?;
    let mut cot = String::new();
    let mut rest = body;
    loop {
        if let Some(stripped) = rest.strip_prefix("\\\\") {
            cot.push('\\');
            rest = stripped;
        } else if let Some(stripped) = rest.strip_prefix('\\') {
            if let Some(stripped) = stripped.strip_prefix(delims.close.as_str()) {
                cot.push_str(&delims.close);
                rest = stripped;
            } else {
                return Err(SplitError::Malformed("dangling escape".into()));
            }
        } else if let Some(stripped) = rest.strip_prefix(delims.close.as_str()) {
            let response = stripped
                .strip_prefix('\n')
                .ok_or_else(|| SplitError::Malformed("missing newline after close".into()))?;
            return Ok((cot, response.to_string()));
        } else {
            let mut chars = rest.chars();
            match chars.next() {
                Some(c) => {
                    cot.push(c);
                    rest = chars.as_str();
                }
                None => {
                    return Err(SplitError::Malformed("unterminated reasoning block".into()))
                }
            }
        }
    }
}

/// Naive delimiter split as live thinking models emit it: first open,
/// first close after it, no escaping. Used for raw model output.
fn naive_split_think(text: &str, delims: &ThinkDelims) -> Option<(String, String)> {
    let open_at = text.find(delims.open.as_str())?;
    let after_open = &text[open_at + delims.open.len()..];
    let close_at = after_open.find(delims.close.as_str())?;
    let cot = after_open[..close_at].trim();
    let response = after_open[close_at + delims.close.len()..].trim();
    if cot.is_empty() || response.is_empty() {
        return None;
    }
    Some((cot.to_string(), response.to_string()))
}

/// Last case-insensitive occurrence of an ASCII pattern.
fn find_last_ascii_ci(haystack: &str, pattern: &str) -> Option<usize> {
    let hay = haystack.as_bytes();
    let pat = pattern.as_bytes();
    if pat.is_empty() || hay.len() < pat.len() {
        return None;
    }
    (0..=hay.len() - pat.len()).rev().find(|&start| {
        hay[start..start + pat.len()]
            .iter()
            .zip(pat)
            .all(|(a, b)| a.eq_ignore_ascii_case(b))
    })
}

/// Split on the last "Final answer:" marker; C is everything before it,
/// R runs from the marker to the end.
fn split_answer_marker(text: &str) -> Option<(String, String)> {
    let at = find_last_ascii_ci(text, "final answer:")?;
    let cot = text[..at].trim();
    let response = text[at..].trim();
    if cot.is_empty() || response.is_empty() {
        return None;
    }
    Some((cot.to_string(), response.to_string()))
}

/// Split a response into (C, R). Precedence: dedicated reasoning
/// channel, think-delimited block, final-answer marker. Exactly one
/// branch fires; otherwise the response is unsplittable.
pub fn split_cot_response(
    response: &ChatResponse,
    config: &CotConfig,
) -> Result<(String, String, SplitMethod), SplitError> {
    if let Some(reasoning) = &response.reasoning_trace {
        let cot = reasoning.trim();
        let text = response.text.trim();
        if !cot.is_empty() && !text.is_empty() {
            return Ok((cot.to_string(), text.to_string(), SplitMethod::ReasoningChannel));
        }
    }
    if let Some((cot, text)) = naive_split_think(&response.text, &config.delims) {
        return Ok((cot, text, SplitMethod::ThinkDelimiters));
    }
    if let Some((cot, text)) = split_answer_marker(&response.text) {
        return Ok((cot, text, SplitMethod::AnswerMarker));
    }
    Err(SplitError::Unsplittable)
}

/// Re-derive (C, R) from a trace's `raw_output` under its recorded
/// split method. Every emitted trace satisfies
/// `reconstruct_split(trace) == (cot_text, final_response)`.
pub fn reconstruct_split(
    raw: &str,
    method: SplitMethod,
    config: &CotConfig,
) -> Result<(String, String), SplitError> {
    match method {
        SplitMethod::ReasoningChannel => unwrap_reasoning(raw, &config.delims),
        SplitMethod::ThinkDelimiters => {
            naive_split_think(raw, &config.delims).ok_or(SplitError::Unsplittable)
        }
        SplitMethod::AnswerMarker => split_answer_marker(raw).ok_or(SplitError::Unsplittable),
    }
}

/// Generate a reasoning trace for one QA pair. Unsplittable responses
/// retry with a fresh request seed, then the pair is skipped.
pub fn generate_cot(
    backend: &dyn ChatBackend,
    record: &AudioRecord,
    qa: &QAPair,
    config: &CotConfig,
    global_seed: u64,
) -> Result<StageOutcome<ReasoningTrace>, StageError> {
    let request = build_cot_prompt(record, qa, config);
    let prompt_hash = request.prompt_hash();
    let attempts = config.max_gen_retries + 1;
    for attempt in 0..attempts {
        let seed = derive_seed(
            global_seed,
            &["cot", &record.id, &qa.question, &attempt.to_string()],
        );
        let mut attempt_request = request.clone();
        attempt_request.request_seed = Some(seed);
        let response = backend.complete(&attempt_request)?;
        match split_cot_response(&response, config) {
            Ok((cot_text, final_response, split_method)) => {
                let raw_output = match split_method {
                    SplitMethod::ReasoningChannel => {
                        wrap_reasoning(&cot_text, &final_response, &config.delims)
                    }
                    _ => response.text.clone(),
                };
                return Ok(StageOutcome::Emitted(ReasoningTrace {
                    cot_text,
                    final_response,
                    raw_output,
                    split_method,
                    provenance: TraceProvenance {
                        prompt_hash,
                        model: backend.model_name().to_string(),
                        request_seed: seed,
                        timestamp: chrono::Utc::now().to_rfc3339(),
                    },
                }));
            }
            Err(e) => {
                tracing::warn!(
                    audio_id = %record.id,
                    attempt = attempt + 1,
                    error = %e,
                    "CoT response unsplittable"
                );
            }
        }
    }
    Ok(StageOutcome::Skipped {
        reason: "cot_unsplittable".into(),
        attempts,
    })
}
