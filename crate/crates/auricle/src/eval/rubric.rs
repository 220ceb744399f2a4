//! Rubric generation for new eval items: exactly five verifiable
//! criteria derived from a reference reasoning path. Used only when
//! constructing eval sets, never while scoring existing ones.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{ChatBackend, ChatMessage, ChatRequest, ModelRole};
use crate::eval::{EvalError, EvalItem, Subcategory, RUBRIC_SIZE};
use crate::extract::first_json_array;
use crate::hash::derive_seed;
use crate::qa::render_question_block;

/// An eval item awaiting its rubric, carrying the reference reasoning
/// it will be derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItemDraft {
    pub id: String,
    pub audio_uri: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer_key: usize,
    pub subcategory: Subcategory,
    pub reference_reasoning: String,
}

impl EvalItemDraft {
    pub fn with_rubric(self, rubric: Vec<String>) -> EvalItem {
        EvalItem {
            id: self.id,
            audio_uri: self.audio_uri,
            question: self.question,
            options: self.options,
            answer_key: self.answer_key,
            subcategory: self.subcategory,
            rubric,
        }
    }
}

/// The output grammar rubric generation requests: a fenced array of
/// exactly five strings. `parse_rubric_output` of the result is the
/// identity.
pub fn serialize_rubric(criteria: &[String]) -> String {
    let body = serde_json::to_string_pretty(criteria).expect("criteria serialize");
    format!("```json\n{body}\n```")
}

fn parse_rubric_output(text: &str) -> Option<Vec<String>> {
    let array = first_json_array(text, |a| {
        a.len() == RUBRIC_SIZE && a.iter().all(Value::is_string)
    })?;
    Some(
        array
            .into_iter()
            .map(|v| v.as_str().unwrap_or_default().to_string())
            .collect(),
    )
}

/// Ask a judge-capable backend for the five criteria. A wrong criterion
/// count is retried once, then the item fails generation.
pub fn generate_rubric(
    backend: &dyn ChatBackend,
    draft: &EvalItemDraft,
    global_seed: u64,
) -> Result<Vec<String>, EvalError> {
    if draft.reference_reasoning.trim().is_empty() {
        return Err(EvalError::RubricGeneration(format!(
            "item {}: reference reasoning is empty",
            draft.id
        )));
    }
    let system = format!(
        "You derive grading rubrics from reference reasoning. Write exactly \
         {RUBRIC_SIZE} verifiable criteria that capture the key reasoning steps: \
         each criterion must be independently checkable against a candidate \
         reasoning trace. Output a fenced json code block containing an array of \
         exactly {RUBRIC_SIZE} strings."
    );
    let user = format!(
        "{}\nReference reasoning:\n{}\n",
        render_question_block(&draft.question, &draft.options),
        draft.reference_reasoning
    );
    for attempt in 0..2u32 {
        let request = ChatRequest {
            role: ModelRole::Judge,
            messages: vec![
                ChatMessage::system(system.clone()),
                ChatMessage::user_text(user.clone()),
            ],
            temperature: 0.0,
            max_tokens: 1024,
            request_seed: Some(derive_seed(
                global_seed,
                &["rubric-gen", &draft.id, &attempt.to_string()],
            )),
        };
        let response = backend.complete(&request)?;
        if let Some(criteria) = parse_rubric_output(&response.text) {
            return Ok(criteria);
        }
        tracing::warn!(item_id = %draft.id, attempt, "rubric output did not contain 5 criteria");
    }
    Err(EvalError::RubricGeneration(format!(
        "item {}: no 5-criterion array after retry",
        draft.id
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptedBackend};

    fn draft() -> EvalItemDraft {
        EvalItemDraft {
            id: "d1".into(),
            audio_uri: "audio/d1.wav".into(),
            question: "What happens first?".into(),
            options: vec!["a door closes".into(), "a phone rings".into()],
            answer_key: 1,
            subcategory: Subcategory::Sound,
            reference_reasoning: "The ringtone starts before the thud of the door.".into(),
        }
    }

    fn criteria() -> Vec<String> {
        (1..=5).map(|i| format!("States key step {i}")).collect()
    }

    #[test]
    fn scripted_five_criteria() {
        let mut script = Script::new();
        script.set_default(serialize_rubric(&criteria()));
        let backend = ScriptedBackend::new(script);
        let rubric = generate_rubric(&backend, &draft(), 7).unwrap();
        assert_eq!(rubric, criteria());
        assert_eq!(backend.call_count(), 1);
    }

    #[test]
    fn four_criteria_twice_fails() {
        let four: Vec<String> = criteria().into_iter().take(4).collect();
        let mut script = Script::new();
        script.set_default(serialize_rubric(&four));
        let backend = ScriptedBackend::new(script);
        let err = generate_rubric(&backend, &draft(), 7).unwrap_err();
        assert_eq!(backend.call_count(), 2);
        assert!(matches!(err, EvalError::RubricGeneration(_)));
    }

    #[test]
    fn serialize_parse_round_trip() {
        let c = criteria();
        assert_eq!(parse_rubric_output(&serialize_rubric(&c)).unwrap(), c);
    }

    #[test]
    fn empty_reference_reasoning_rejected() {
        let backend = ScriptedBackend::new(Script::new());
        let mut d = draft();
        d.reference_reasoning = "  ".into();
        assert!(generate_rubric(&backend, &d, 7).is_err());
        assert_eq!(backend.call_count(), 0);
    }
}
