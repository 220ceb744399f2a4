//! One evaluation pass: prompt the subject, split its trace, judge
//! correctness, score the rubric, and compute metrics. Per-item
//! failures degrade that item to c=0 rather than aborting the pass.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{ChatBackend, ChatMessage, ChatRequest, ModelRole};
use crate::corpus::AudioRecord;
use crate::cot::{build_cot_prompt, split_cot_response, CotConfig, ReasoningTrace, SplitMethod, TraceProvenance};
use crate::eval::{compute_metrics, EvalError, EvalItem, MetricReport, RunResult, RUBRIC_SIZE};
use crate::extract::{first_json_array, first_json_object};
use crate::hash::derive_seed;
use crate::qa::{render_question_block, QAPair, QaProvenance};
use crate::verify::extract_answer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRunConfig {
    pub workers: usize,
    pub cot: CotConfig,
    pub judge_temperature: f64,
    pub judge_max_tokens: u32,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        EvalRunConfig {
            workers: 4,
            cot: CotConfig::default(),
            judge_temperature: 0.0,
            judge_max_tokens: 512,
        }
    }
}

/// The subject sees each eval item through the same prompt builder as
/// the curation pipeline, so the answer-withholding contract carries
/// over.
fn item_as_record(item: &EvalItem) -> AudioRecord {
    AudioRecord {
        id: item.id.clone(),
        audio_uri: item.audio_uri.clone(),
        source_dataset: "eval".into(),
        domains: item.subcategory.domains(),
        duration_seconds: None,
        metadata: IndexMap::new(),
    }
}

fn item_as_qa(item: &EvalItem) -> QAPair {
    QAPair {
        question: item.question.clone(),
        options: item.options.clone(),
        answer_key: item.answer_key,
        audio_id: item.id.clone(),
        provenance: QaProvenance {
            exemplar_ids: Vec::new(),
            prompt_hash: String::new(),
            model: String::new(),
            timestamp: String::new(),
        },
    }
}

/// Decide c for one response. Primary path is deterministic answer
/// extraction; an evasive response falls back to a judge equivalence
/// query when a judge is configured, else scores 0.
pub fn judge_correctness(
    final_response: &str,
    item: &EvalItem,
    judge: Option<&dyn ChatBackend>,
    seed: u64,
) -> bool {
    if let Some((index, _)) = extract_answer(final_response, &item.options) {
        return index == item.answer_key;
    }
    let Some(judge) = judge else {
        return false;
    };
    let system = "You map a free-form response onto one of the listed options. Output \
                  a fenced json code block: {\"option_index\": <0-based integer or \
                  null if the response commits to none>}."
        .to_string();
    let user = format!(
        "{}\nResponse:\n{final_response}\n",
        render_question_block(&item.question, &item.options)
    );
    let request = ChatRequest {
        role: ModelRole::Judge,
        messages: vec![ChatMessage::system(system), ChatMessage::user_text(user)],
        temperature: 0.0,
        max_tokens: 128,
        request_seed: Some(seed),
    };
    match judge.complete(&request) {
        Ok(response) => {
            let parsed = first_json_object(&response.text, |o| o.contains_key("option_index"));
            match parsed.and_then(|o| o["option_index"].as_u64()) {
                Some(index) => index as usize == item.answer_key,
                None => false,
            }
        }
        Err(e) => {
            tracing::warn!(item_id = %item.id, error = %e, "correctness judge failed, scoring 0");
            false
        }
    }
}

fn parse_rubric_verdicts(text: &str) -> Option<[bool; RUBRIC_SIZE]> {
    let values: Vec<Value> = if let Some(object) =
        first_json_object(text, |o| o.get("verdicts").is_some_and(Value::is_array))
    {
        object["verdicts"].as_array()?.clone()
    } else {
        first_json_array(text, |a| {
            a.len() == RUBRIC_SIZE && a.iter().all(Value::is_boolean)
        })?
    };
    if values.len() != RUBRIC_SIZE {
        return None;
    }
    let mut verdicts = [false; RUBRIC_SIZE];
    for (i, value) in values.iter().enumerate() {
        verdicts[i] = value.as_bool()?;
    }
    Some(verdicts)
}

/// Score all five rubric criteria in one judge request. Never called
/// for incorrect answers: c=0 forces r=0 without a judge round trip.
/// Unparseable judge output is retried once, then degrades to all-false
/// verdicts.
pub fn score_rubric(
    judge: &dyn ChatBackend,
    item: &EvalItem,
    cot_text: &str,
    final_response: &str,
    correct: bool,
    config: &EvalRunConfig,
    seed: u64,
) -> ([bool; RUBRIC_SIZE], f64) {
    if !correct {
        return ([false; RUBRIC_SIZE], 0.0);
    }
    let system = format!(
        "You check whether a reasoning trace satisfies each criterion of a rubric. \
         Judge each criterion independently and strictly. Output a fenced json code \
         block: {{\"verdicts\": [bool, bool, bool, bool, bool]}} with one boolean per \
         criterion, in the order given ({RUBRIC_SIZE} criteria)."
    );
    let mut user = render_question_block(&item.question, &item.options);
    user.push_str("\nRubric criteria:\n");
    for (i, criterion) in item.rubric.iter().enumerate() {
        user.push_str(&format!("{}. {criterion}\n", i + 1));
    }
    user.push_str(&format!(
        "\nReasoning:\n{cot_text}\n\nFinal response:\n{final_response}\n"
    ));
    for attempt in 0..2u32 {
        let request = ChatRequest {
            role: ModelRole::Judge,
            messages: vec![
                ChatMessage::system(system.clone()),
                ChatMessage::user_text(user.clone()),
            ],
            temperature: config.judge_temperature,
            max_tokens: config.judge_max_tokens,
            request_seed: Some(derive_seed(seed, &["rubric", &attempt.to_string()])),
        };
        match judge.complete(&request) {
            Ok(response) => {
                if let Some(verdicts) = parse_rubric_verdicts(&response.text) {
                    let satisfied = verdicts.iter().filter(|&&v| v).count();
                    return (verdicts, satisfied as f64 / RUBRIC_SIZE as f64);
                }
                tracing::warn!(item_id = %item.id, attempt, "rubric judge output unparseable");
            }
            Err(e) => {
                tracing::warn!(item_id = %item.id, attempt, error = %e, "rubric judge failed");
            }
        }
    }
    tracing::warn!(item_id = %item.id, "rubric scoring degraded to all-false verdicts");
    ([false; RUBRIC_SIZE], 0.0)
}

fn evaluate_item(
    subject: &dyn ChatBackend,
    judge: &dyn ChatBackend,
    item: &EvalItem,
    run_seed: u64,
    config: &EvalRunConfig,
) -> RunResult {
    let record = item_as_record(item);
    let qa = item_as_qa(item);
    let mut request = build_cot_prompt(&record, &qa, &config.cot);
    let seed = derive_seed(run_seed, &["eval-item", &item.id]);
    request.request_seed = Some(seed);
    let prompt_hash = request.prompt_hash();

    let response = match subject.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(item_id = %item.id, error = %e, "subject backend failed, scoring 0");
            return RunResult::new(&item.id, item.subcategory, None, false, [false; RUBRIC_SIZE]);
        }
    };
    let (cot_text, final_response, split_method) = match split_cot_response(&response, &config.cot)
    {
        Ok(parts) => parts,
        Err(e) => {
            tracing::warn!(item_id = %item.id, error = %e, "subject response unsplittable, scoring 0");
            return RunResult::new(&item.id, item.subcategory, None, false, [false; RUBRIC_SIZE]);
        }
    };
    let raw_output = match split_method {
        SplitMethod::ReasoningChannel => {
            crate::cot::wrap_reasoning(&cot_text, &final_response, &config.cot.delims)
        }
        _ => response.text.clone(),
    };
    let trace = ReasoningTrace {
        cot_text: cot_text.clone(),
        final_response: final_response.clone(),
        raw_output,
        split_method,
        provenance: TraceProvenance {
            prompt_hash,
            model: subject.model_name().to_string(),
            request_seed: seed,
            timestamp: chrono::Utc::now().to_rfc3339(),
        },
    };

    let correct = judge_correctness(&final_response, item, Some(judge), seed);
    let (verdicts, _) = score_rubric(
        judge,
        item,
        &cot_text,
        &final_response,
        correct,
        config,
        seed,
    );
    RunResult::new(&item.id, item.subcategory, Some(trace), correct, verdicts)
}

/// Evaluate every item once and compute the run's metrics. Items are
/// processed by a bounded worker pool; results keep item order.
pub fn run_eval_pass(
    subject: &dyn ChatBackend,
    judge: &dyn ChatBackend,
    items: &[EvalItem],
    run_id: &str,
    run_seed: u64,
    config: &EvalRunConfig,
) -> Result<MetricReport, EvalError> {
    let results = crate::pipeline::pool::run_ordered(items, config.workers, |_, item| {
        Ok::<RunResult, std::convert::Infallible>(evaluate_item(
            subject, judge, item, run_seed, config,
        ))
    })
    .unwrap_or_else(|e| match e {});
    compute_metrics(run_id, &results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptedBackend};
    use crate::eval::Subcategory;

    fn item(id: &str, answer_key: usize) -> EvalItem {
        EvalItem {
            id: id.into(),
            audio_uri: format!("audio/{id}.wav"),
            question: format!("What dominates clip {id}?"),
            options: vec![
                "Heavy rain".into(),
                "A passing train".into(),
                "Applause".into(),
                "Wind".into(),
            ],
            answer_key,
            subcategory: Subcategory::Sound,
            rubric: (1..=5).map(|i| format!("criterion {i}")).collect(),
        }
    }

    fn judge_with(response: &str) -> ScriptedBackend {
        let mut script = Script::new();
        script.set_default(response);
        ScriptedBackend::new(script)
    }

    #[test]
    fn correctness_letter() {
        let judge = judge_with("unused");
        assert!(judge_correctness("Final answer: A", &item("x", 0), Some(&judge), 1));
        assert!(!judge_correctness("Final answer: B", &item("x", 0), Some(&judge), 1));
        assert_eq!(judge.call_count(), 0);
    }

    #[test]
    fn correctness_distractor_text() {
        let judge = judge_with("unused");
        assert!(!judge_correctness(
            "It is applause.",
            &item("x", 0),
            Some(&judge),
            1
        ));
    }

    #[test]
    fn correctness_evasive_without_judge_is_zero() {
        assert!(!judge_correctness("no idea", &item("x", 0), None, 1));
    }

    #[test]
    fn correctness_evasive_falls_back_to_judge() {
        let judge = judge_with(r#"{"option_index": 0}"#);
        assert!(judge_correctness("hmm, hard", &item("x", 0), Some(&judge), 1));
        assert_eq!(judge.call_count(), 1);
    }

    #[test]
    fn rubric_three_of_five() {
        let judge = judge_with(r#"{"verdicts": [true, true, true, false, false]}"#);
        let config = EvalRunConfig::default();
        let (verdicts, r) =
            score_rubric(&judge, &item("x", 0), "cot", "resp", true, &config, 1);
        assert_eq!(verdicts.iter().filter(|&&v| v).count(), 3);
        assert_eq!(r, 0.6);
    }

    #[test]
    fn rubric_skipped_when_incorrect() {
        let judge = judge_with(r#"{"verdicts": [true, true, true, true, true]}"#);
        let config = EvalRunConfig::default();
        let (verdicts, r) =
            score_rubric(&judge, &item("x", 0), "cot", "resp", false, &config, 1);
        assert_eq!(judge.call_count(), 0);
        assert_eq!(r, 0.0);
        assert_eq!(verdicts, [false; 5]);
    }

    #[test]
    fn rubric_all_satisfied() {
        let judge = judge_with(r#"{"verdicts": [true, true, true, true, true]}"#);
        let config = EvalRunConfig::default();
        let (_, r) = score_rubric(&judge, &item("x", 0), "cot", "resp", true, &config, 1);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn rubric_unparseable_degrades_after_retry() {
        let judge = judge_with("I cannot decide.");
        let config = EvalRunConfig::default();
        let (verdicts, r) =
            score_rubric(&judge, &item("x", 0), "cot", "resp", true, &config, 1);
        assert_eq!(judge.call_count(), 2);
        assert_eq!(r, 0.0);
        assert_eq!(verdicts, [false; 5]);
    }

    #[test]
    fn rubric_accepts_bare_array() {
        assert_eq!(
            parse_rubric_verdicts("sure: [true, false, true, false, true]"),
            Some([true, false, true, false, true])
        );
    }

    #[test]
    fn pass_is_deterministic_and_degrades_failures() {
        let items: Vec<EvalItem> = (0..8).map(|i| item(&format!("e{i}"), 0)).collect();
        let mut subject_script = Script::new();
        // Items e0..e5 answer correctly; e6 answers a distractor; e7 unscripted
        // would abort, so give it prose that cannot split.
        for i in 0..6 {
            subject_script.on(
                ModelRole::Thinker,
                &[&format!("clip e{i}")],
                "<think>rainfall analysis</think>Final answer: A",
            );
        }
        subject_script.on(
            ModelRole::Thinker,
            &["clip e6"],
            "<think>hmm</think>Final answer: C",
        );
        subject_script.on(ModelRole::Thinker, &["clip e7"], "unstructured mumbling");
        let subject = ScriptedBackend::new(subject_script);
        let judge = judge_with(r#"{"verdicts": [true, true, true, true, false]}"#);
        let config = EvalRunConfig {
            workers: 3,
            ..EvalRunConfig::default()
        };
        let a = run_eval_pass(&subject, &judge, &items, "run-1", 9, &config).unwrap();
        let b = run_eval_pass(&subject, &judge, &items, "run-1", 9, &config).unwrap();
        assert_eq!(a.n, 8);
        assert_eq!(a.correct_total, 6);
        assert_eq!(a.avg, 6.0 / 8.0);
        assert_eq!(a.satisfied_total, 24); // 6 correct x 4 satisfied
        assert_eq!(a, b);
    }
}
