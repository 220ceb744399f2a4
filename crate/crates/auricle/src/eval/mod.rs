//! Evaluation harness: run a subject model over an eval set, judge
//! answer correctness, score five-criterion rubrics, and aggregate five
//! runs by the mean of the middle three.

pub mod metrics;
pub mod report;
pub mod rubric;
pub mod run;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Domain;
use crate::cot::ReasoningTrace;
use crate::jsonl::JsonlError;

pub use metrics::{aggregate_middle_three, compute_metrics, crs_identity};
pub use report::render_table;
pub use rubric::{generate_rubric, serialize_rubric, EvalItemDraft};
pub use run::{judge_correctness, run_eval_pass, score_rubric, EvalRunConfig};

pub const RUBRIC_SIZE: usize = 5;

/// Benchmark subcategories: three single domains and four mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subcategory {
    Sound,
    Music,
    Speech,
    #[serde(rename = "Sound-Music")]
    SoundMusic,
    #[serde(rename = "Sound-Speech")]
    SoundSpeech,
    #[serde(rename = "Music-Speech")]
    MusicSpeech,
    #[serde(rename = "Sound-Music-Speech")]
    SoundMusicSpeech,
}

impl Subcategory {
    pub const ALL: [Subcategory; 7] = [
        Subcategory::Sound,
        Subcategory::Music,
        Subcategory::Speech,
        Subcategory::SoundMusic,
        Subcategory::SoundSpeech,
        Subcategory::MusicSpeech,
        Subcategory::SoundMusicSpeech,
    ];

    /// Column header used in rendered tables.
    pub fn short_label(&self) -> &'static str {
        match self {
            Subcategory::Sound => "Sound",
            Subcategory::Music => "Music",
            Subcategory::Speech => "Speech",
            Subcategory::SoundMusic => "S-M",
            Subcategory::SoundSpeech => "S-S",
            Subcategory::MusicSpeech => "M-S",
            Subcategory::SoundMusicSpeech => "S-M-S",
        }
    }

    pub fn domains(&self) -> Vec<Domain> {
        match self {
            Subcategory::Sound => vec![Domain::Sound],
            Subcategory::Music => vec![Domain::Music],
            Subcategory::Speech => vec![Domain::Speech],
            Subcategory::SoundMusic => vec![Domain::Sound, Domain::Music],
            Subcategory::SoundSpeech => vec![Domain::Sound, Domain::Speech],
            Subcategory::MusicSpeech => vec![Domain::Music, Domain::Speech],
            Subcategory::SoundMusicSpeech => {
                vec![Domain::Sound, Domain::Music, Domain::Speech]
            }
        }
    }
}

/// One benchmark item: a multiple-choice question plus its five-point
/// rubric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub audio_uri: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer_key: usize,
    pub subcategory: Subcategory,
    pub rubric: Vec<String>,
}

impl EvalItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.rubric.len() != RUBRIC_SIZE {
            return Err(format!(
                "rubric must have exactly {RUBRIC_SIZE} criteria, got {}",
                self.rubric.len()
            ));
        }
        if self.options.len() < 2 {
            return Err("need at least 2 options".into());
        }
        if self.answer_key >= self.options.len() {
            return Err(format!(
                "answer_key {} out of range for {} options",
                self.answer_key,
                self.options.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path} line {line}: {message}")]
    InvalidItem {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("middle-three aggregation requires exactly 5 runs, got {0}")]
    WrongRunCount(usize),
    #[error("rubric generation failed: {0}")]
    RubricGeneration(String),
    #[error("backend error: {0}")]
    Backend(#[from] crate::backend::BackendError),
}

/// Load and validate an eval set (line-delimited items).
pub fn load_eval_set(path: &std::path::Path) -> Result<Vec<EvalItem>, EvalError> {
    let numbered = crate::jsonl::read_jsonl_numbered::<EvalItem>(path)?;
    let mut items = Vec::with_capacity(numbered.len());
    for (line, item) in numbered {
        item.validate().map_err(|message| EvalError::InvalidItem {
            path: path.display().to_string(),
            line,
            message,
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Per-item outcome of one run. Invariants are enforced on
/// construction: an incorrect answer zeroes the verdicts and the score;
/// a correct one scores satisfied/5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub item_id: String,
    pub subcategory: Subcategory,
    pub trace: Option<ReasoningTrace>,
    pub correct: bool,
    pub criterion_verdicts: [bool; RUBRIC_SIZE],
    pub r: f64,
}

impl RunResult {
    pub fn new(
        item_id: impl Into<String>,
        subcategory: Subcategory,
        trace: Option<ReasoningTrace>,
        correct: bool,
        criterion_verdicts: [bool; RUBRIC_SIZE],
    ) -> Self {
        let verdicts = if correct {
            criterion_verdicts
        } else {
            [false; RUBRIC_SIZE]
        };
        let satisfied = verdicts.iter().filter(|&&v| v).count();
        RunResult {
            item_id: item_id.into(),
            subcategory,
            trace,
            correct,
            criterion_verdicts: verdicts,
            r: satisfied as f64 / RUBRIC_SIZE as f64,
        }
    }

    pub fn c(&self) -> u64 {
        u64::from(self.correct)
    }

    pub fn satisfied(&self) -> u64 {
        self.criterion_verdicts.iter().filter(|&&v| v).count() as u64
    }
}

/// Metrics for one run. Floats are correctly-rounded quotients of the
/// exact integer totals carried alongside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub n: usize,
    pub correct_total: u64,
    pub satisfied_total: u64,
    pub avg: f64,
    pub rubrics: f64,
    pub crs: Option<f64>,
    pub subcategory_avg: IndexMap<Subcategory, f64>,
}

/// Five runs reduced per metric to the mean of the middle three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: Vec<MetricReport>,
    pub avg: f64,
    pub rubrics: f64,
    pub crs: Option<f64>,
    pub subcategory_avg: IndexMap<Subcategory, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_result_zeroes_on_incorrect() {
        let result = RunResult::new("i", Subcategory::Sound, None, false, [true; 5]);
        assert_eq!(result.r, 0.0);
        assert_eq!(result.criterion_verdicts, [false; 5]);
    }

    #[test]
    fn run_result_scores_fifths() {
        let result = RunResult::new(
            "i",
            Subcategory::Sound,
            None,
            true,
            [true, true, true, false, false],
        );
        assert_eq!(result.r, 0.6);
        assert_eq!(result.satisfied(), 3);
    }

    #[test]
    fn subcategory_serde_names() {
        let json = serde_json::to_string(&Subcategory::SoundMusicSpeech).unwrap();
        assert_eq!(json, "\"Sound-Music-Speech\"");
        let back: Subcategory = serde_json::from_str("\"Music-Speech\"").unwrap();
        assert_eq!(back, Subcategory::MusicSpeech);
    }

    #[test]
    fn eval_item_validation() {
        let mut item = EvalItem {
            id: "e1".into(),
            audio_uri: "audio/e1.wav".into(),
            question: "q".into(),
            options: vec!["a".into(), "b".into()],
            answer_key: 0,
            subcategory: Subcategory::Sound,
            rubric: vec!["c1".into(); 5],
        };
        assert!(item.validate().is_ok());
        item.rubric.pop();
        assert!(item.validate().is_err());
    }
}
