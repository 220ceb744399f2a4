//! Two-stage quality gate: a deterministic QA consistency check, then
//! LLM-as-judge screening for hallucination and logical inconsistency.
//! Consistency failures short-circuit the judge.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, ModelRole};
use crate::cot::ReasoningTrace;
use crate::extract::first_json_object;
use crate::hash::derive_seed;
use crate::qa::{render_question_block, QAPair};

/// How an answer was recovered from a final response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractMethod {
    LetterPrefix,
    ExactText,
    NormalizedContainment,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub extracted_answer: Option<usize>,
    pub matched: bool,
    pub method: ExtractMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeFlag {
    Hallucination,
    LogicalInconsistency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub passed: bool,
    pub flags: Vec<JudgeFlag>,
    pub rationale: String,
    pub raw_judge_output: String,
}

/// A (record, QA, trace) triple awaiting verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSample {
    pub audio_id: String,
    pub ordinal: usize,
    pub qa: QAPair,
    pub trace: ReasoningTrace,
}

/// Verification outcome for one candidate. When verification is
/// bypassed (ablation), both verdicts are absent and `bypassed` is set;
/// otherwise `accepted` holds exactly when consistency matched and the
/// judge passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedSample {
    pub audio_id: String,
    pub ordinal: usize,
    pub qa: QAPair,
    pub trace: ReasoningTrace,
    pub consistency: Option<ConsistencyVerdict>,
    pub judge: Option<JudgeVerdict>,
    pub accepted: bool,
    pub bypassed: bool,
    pub rejection_reasons: Vec<String>,
}

/// One line in the rejection log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionEntry {
    pub audio_id: String,
    pub ordinal: usize,
    pub stage: String,
    pub flags: Vec<JudgeFlag>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub use_verification: bool,
    /// Attach the audio clip to judge requests in addition to the text.
    pub attach_audio_to_judge: bool,
    pub judge_temperature: f64,
    pub judge_max_tokens: u32,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            use_verification: true,
            attach_audio_to_judge: false,
            judge_temperature: 0.0,
            judge_max_tokens: 512,
        }
    }
}

fn norm_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase, punctuation stripped, whitespace collapsed.
fn norm_loose(s: &str) -> String {
    let replaced: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    norm_ws(&replaced)
}

/// Candidate text for prefix matching: everything after the last
/// "final answer" marker, else the whole response.
fn prefix_candidate(response: &str) -> &str {
    let lower = response.to_ascii_lowercase();
    match lower.rfind("final answer") {
        Some(at) => {
            let tail = &response[at + "final answer".len()..];
            tail.trim_start_matches([':', ' ', '\t'])
        }
        None => response,
    }
}

/// Letter or number designators: "A", "(b)", "2.", "option C". Strict
/// boundary: the designator must be followed by end-of-text or
/// punctuation, so option texts starting with an article ("A train")
/// fall through to text matching.
fn letter_prefix_match(response: &str, option_count: usize) -> Option<usize> {
    let mut tail = prefix_candidate(response).trim_start();
    if let Some(rest) = strip_prefix_ci(tail, "option") {
        tail = rest.trim_start();
    }
    let tail = tail.trim_start_matches(['*', '#', '(', '[', '"', '\'', '-', '>', ' ', '\t']);
    let mut chars = tail.chars();
    let first = chars.next()?;
    let index = if first.is_ascii_alphabetic() {
        let letter = first.to_ascii_lowercase();
        if !('a'..='f').contains(&letter) {
            return None;
        }
        (letter as u8 - b'a') as usize
    } else if first.is_ascii_digit() && first != '0' {
        (first as u8 - b'1') as usize
    } else {
        return None;
    };
    let boundary = matches!(
        chars.next(),
        None | Some('.') | Some(')') | Some(']') | Some(':') | Some(',') | Some(';') | Some('!')
            | Some('?') | Some('*') | Some('"') | Some('\'') | Some('\n')
    );
    (boundary && index < option_count).then_some(index)
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

/// Recover the chosen option from a final response.
///
/// Precedence: letter/number designator, exact option text (whitespace
/// normalized, present for exactly one option), then normalized
/// containment with longest-match tie-break. Ambiguity yields `None` --
/// a false match would poison the dataset, so precision wins.
pub fn extract_answer(final_response: &str, options: &[String]) -> Option<(usize, ExtractMethod)> {
    if let Some(index) = letter_prefix_match(final_response, options.len()) {
        return Some((index, ExtractMethod::LetterPrefix));
    }

    let response_ws = norm_ws(final_response);
    let exact: Vec<usize> = options
        .iter()
        .enumerate()
        .filter(|(_, opt)| {
            let needle = norm_ws(opt);
            !needle.is_empty() && response_ws.contains(&needle)
        })
        .map(|(i, _)| i)
        .collect();
    if exact.len() == 1 {
        return Some((exact[0], ExtractMethod::ExactText));
    }

    let hay = format!(" {} ", norm_loose(final_response));
    let mut best: Option<(usize, usize)> = None; // (length, index)
    let mut tied = false;
    for (i, option) in options.iter().enumerate() {
        let needle = norm_loose(option);
        if needle.is_empty() || !hay.contains(&format!(" {needle} ")) {
            continue;
        }
        match best {
            Some((len, _)) if needle.len() == len => tied = true,
            Some((len, _)) if needle.len() > len => {
                best = Some((needle.len(), i));
                tied = false;
            }
            None => {
                best = Some((needle.len(), i));
                tied = false;
            }
            _ => {}
        }
    }
    match (best, tied) {
        (Some((_, index)), false) => Some((index, ExtractMethod::NormalizedContainment)),
        _ => None,
    }
}

/// Deterministic half of the gate: does the trace's final response name
/// the constructed answer?
pub fn consistency_check(trace: &ReasoningTrace, qa: &QAPair) -> ConsistencyVerdict {
    match extract_answer(&trace.final_response, &qa.options) {
        Some((index, method)) => ConsistencyVerdict {
            extracted_answer: Some(index),
            matched: index == qa.answer_key,
            method,
        },
        None => ConsistencyVerdict {
            extracted_answer: None,
            matched: false,
            method: ExtractMethod::None,
        },
    }
}

fn build_judge_request(
    sample: &CandidateSample,
    config: &VerifyConfig,
    seed: u64,
) -> ChatRequest {
    let system = "You audit reasoning traces for an audio question-answering dataset. \
                  Check the reasoning for hallucination (claims that cannot be grounded \
                  in the question context) and logical inconsistency (steps that \
                  contradict each other or the final response). Output a fenced json \
                  code block: {\"pass\": bool, \"flags\": [...], \"rationale\": string} \
                  where flags may contain \"hallucination\" and \
                  \"logical_inconsistency\". Pass requires an empty flags list."
        .to_string();
    let mut user = render_question_block(&sample.qa.question, &sample.qa.options);
    user.push_str(&format!(
        "\nReasoning:\n{}\n\nFinal response:\n{}\n",
        sample.trace.cot_text, sample.trace.final_response
    ));
    let mut parts = vec![crate::backend::ContentPart::text(user)];
    if config.attach_audio_to_judge {
        parts.push(crate::backend::ContentPart::Audio {
            audio: crate::backend::AudioAttachment::from_uri(
                format!("audio:{}", sample.audio_id),
                "wav",
            ),
        });
    }
    ChatRequest {
        role: ModelRole::Judge,
        messages: vec![ChatMessage::system(system), ChatMessage::user(parts)],
        temperature: config.judge_temperature,
        max_tokens: config.judge_max_tokens,
        request_seed: Some(seed),
    }
}

fn parse_judge_output(text: &str) -> Option<(bool, Vec<JudgeFlag>, String)> {
    let object = first_json_object(text, |o| o.get("pass").is_some_and(|v| v.is_boolean()))?;
    let passed = object["pass"].as_bool()?;
    let mut flags = Vec::new();
    if let Some(values) = object.get("flags").and_then(|f| f.as_array()) {
        for value in values {
            match value.as_str()? {
                "hallucination" => flags.push(JudgeFlag::Hallucination),
                "logical_inconsistency" => flags.push(JudgeFlag::LogicalInconsistency),
                _ => return None,
            }
        }
    }
    // A passing verdict with flags contradicts itself.
    if passed && !flags.is_empty() {
        return None;
    }
    let rationale = object
        .get("rationale")
        .and_then(|r| r.as_str())
        .unwrap_or_default()
        .to_string();
    Some((passed, flags, rationale))
}

/// Ask the judge to screen one consistency-passing sample. Unparseable
/// output is retried once, then the sample is rejected with reason
/// `judge_unparseable`.
pub fn judge_reasoning(
    backend: &dyn ChatBackend,
    sample: &CandidateSample,
    config: &VerifyConfig,
    global_seed: u64,
) -> Result<JudgeVerdict, BackendError> {
    let mut raw = String::new();
    for attempt in 0..2 {
        let seed = derive_seed(
            global_seed,
            &[
                "judge",
                &sample.audio_id,
                &sample.ordinal.to_string(),
                &attempt.to_string(),
            ],
        );
        let request = build_judge_request(sample, config, seed);
        let response = backend.complete(&request)?;
        raw = response.text.clone();
        if let Some((passed, flags, rationale)) = parse_judge_output(&response.text) {
            return Ok(JudgeVerdict {
                passed,
                flags,
                rationale,
                raw_judge_output: raw,
            });
        }
        tracing::warn!(
            audio_id = %sample.audio_id,
            ordinal = sample.ordinal,
            attempt = attempt + 1,
            "judge output unparseable"
        );
    }
    Ok(JudgeVerdict {
        passed: false,
        flags: vec![JudgeFlag::LogicalInconsistency],
        rationale: "judge_unparseable".into(),
        raw_judge_output: raw,
    })
}

/// Run the two-stage gate on one candidate. Outcomes:
/// consistency-fail rejects without a judge call; judge backend errors
/// reject the sample with a reason instead of aborting the stage; the
/// ablation flag bypasses both checks.
pub fn verify(
    sample: CandidateSample,
    judge_backend: &dyn ChatBackend,
    config: &VerifyConfig,
    global_seed: u64,
) -> (VerifiedSample, Option<RejectionEntry>) {
    if !config.use_verification {
        let verified = VerifiedSample {
            audio_id: sample.audio_id.clone(),
            ordinal: sample.ordinal,
            qa: sample.qa,
            trace: sample.trace,
            consistency: None,
            judge: None,
            accepted: true,
            bypassed: true,
            rejection_reasons: Vec::new(),
        };
        return (verified, None);
    }

    let consistency = consistency_check(&sample.trace, &sample.qa);
    if !consistency.matched {
        let reason = format!(
            "answer_mismatch: extracted {:?} via {:?}, expected {}",
            consistency.extracted_answer, consistency.method, sample.qa.answer_key
        );
        let rejection = RejectionEntry {
            audio_id: sample.audio_id.clone(),
            ordinal: sample.ordinal,
            stage: "consistency".into(),
            flags: Vec::new(),
            reason: reason.clone(),
        };
        let verified = VerifiedSample {
            audio_id: sample.audio_id.clone(),
            ordinal: sample.ordinal,
            qa: sample.qa,
            trace: sample.trace,
            consistency: Some(consistency),
            judge: None,
            accepted: false,
            bypassed: false,
            rejection_reasons: vec![reason],
        };
        return (verified, Some(rejection));
    }

    match judge_reasoning(judge_backend, &sample, config, global_seed) {
        Ok(verdict) => {
            let accepted = verdict.passed;
            let mut rejection_reasons = Vec::new();
            let rejection = if accepted {
                None
            } else {
                let reason = if verdict.rationale.is_empty() {
                    "judge_failed".to_string()
                } else {
                    verdict.rationale.clone()
                };
                rejection_reasons.push(reason.clone());
                Some(RejectionEntry {
                    audio_id: sample.audio_id.clone(),
                    ordinal: sample.ordinal,
                    stage: "judge".into(),
                    flags: verdict.flags.clone(),
                    reason,
                })
            };
            let verified = VerifiedSample {
                audio_id: sample.audio_id.clone(),
                ordinal: sample.ordinal,
                qa: sample.qa,
                trace: sample.trace,
                consistency: Some(consistency),
                judge: Some(verdict),
                accepted,
                bypassed: false,
                rejection_reasons,
            };
            (verified, rejection)
        }
        Err(e) => {
            let reason = format!("judge_backend_error: {e}");
            let rejection = RejectionEntry {
                audio_id: sample.audio_id.clone(),
                ordinal: sample.ordinal,
                stage: "judge".into(),
                flags: Vec::new(),
                reason: reason.clone(),
            };
            let verified = VerifiedSample {
                audio_id: sample.audio_id.clone(),
                ordinal: sample.ordinal,
                qa: sample.qa,
                trace: sample.trace,
                consistency: Some(consistency),
                judge: None,
                accepted: false,
                bypassed: false,
                rejection_reasons: vec![reason],
            };
            (verified, Some(rejection))
        }
    }
}
