//! Shared fixture builders for integration tests: synthetic corpora,
//! seed pools, deterministic backend scripts, and configs wired to a
//! temp directory.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use auricle::backend::{MatchFields, ModelRole, Script};
use auricle::corpus::{
    serialize_manifest, AudioRecord, CorpusManifest, Difficulty, Domain, SeedQuestion,
};
use auricle::eval::{EvalItem, Subcategory};
use auricle::pipeline::{BackendSpec, Backends, Config, PathsConfig, StageConfig};
use auricle::qa::{serialize_qa_drafts, QaDraft};

pub fn record_id(i: usize) -> String {
    format!("rec-{i:04}")
}

/// Synthetic corpus: domains and sources cycle so stats group nicely.
pub fn corpus_records(n: usize) -> Vec<AudioRecord> {
    (0..n)
        .map(|i| {
            let id = record_id(i);
            let domains = match i % 4 {
                0 => vec![Domain::Sound],
                1 => vec![Domain::Speech],
                2 => vec![Domain::Music],
                _ => vec![Domain::Sound, Domain::Music],
            };
            let mut metadata = IndexMap::new();
            metadata.insert("caption".to_string(), format!("scene in clip {id}"));
            metadata.insert("labels".to_string(), format!("label-{}", i % 5));
            AudioRecord {
                id: id.clone(),
                audio_uri: format!("audio/{id}.wav"),
                source_dataset: format!("Set{}", (b'A' + (i % 3) as u8) as char),
                domains,
                duration_seconds: Some(5.0 + i as f64),
                metadata,
            }
        })
        .collect()
}

pub fn seed_pool(n: usize) -> Vec<SeedQuestion> {
    (0..n)
        .map(|i| SeedQuestion {
            id: format!("seed-{i:03}"),
            text: format!("Exemplar question {i}: which cue is decisive?"),
            domains: vec![match i % 3 {
                0 => Domain::Sound,
                1 => Domain::Speech,
                _ => Domain::Music,
            }],
            reasoning_type: "inference".into(),
            difficulty: Difficulty::Medium,
        })
        .collect()
}

/// QA drafts the scripted annotator returns for one record. Questions
/// embed the record id and ordinal so later stages can key on them.
pub fn qa_drafts_for(id: &str, pairs: usize) -> Vec<QaDraft> {
    (0..pairs)
        .map(|j| QaDraft {
            question: format!("What happens in clip {id} (q{j})?"),
            options: vec![
                format!("alpha {id} q{j}"),
                format!("beta {id} q{j}"),
                format!("gamma {id} q{j}"),
                format!("delta {id} q{j}"),
            ],
            answer_index: 0,
            distractor_note: Some("near misses".into()),
        })
        .collect()
}

pub fn thinker_response(id: &str, ordinal: usize) -> String {
    format!("<think>Listening to clip {id} for question {ordinal}.</think>Final answer: A")
}

pub const JUDGE_PASS: &str =
    "```json\n{\"pass\": true, \"flags\": [], \"rationale\": \"grounded\"}\n```";
pub const JUDGE_FAIL_HALLUCINATION: &str =
    "```json\n{\"pass\": false, \"flags\": [\"hallucination\"], \"rationale\": \"invents a source\"}\n```";

/// One script serving all three roles for a full pipeline run. Every
/// record gets `pairs_for(i)` QA pairs, every pair a splittable trace,
/// and the judge passes everything.
pub fn pipeline_script(records: &[AudioRecord], pairs_for: &dyn Fn(usize) -> usize) -> Script {
    let mut script = Script::new();
    for (i, record) in records.iter().enumerate() {
        let drafts = qa_drafts_for(&record.id, pairs_for(i));
        script.on(
            ModelRole::Annotator,
            &[&record.id],
            serialize_qa_drafts(&drafts),
        );
        for j in 0..pairs_for(i) {
            script.on(
                ModelRole::Thinker,
                &[&format!("clip {} (q{j})", record.id)],
                thinker_response(&record.id, j),
            );
        }
    }
    script.add_match(
        MatchFields {
            role: Some(ModelRole::Judge),
            ..MatchFields::default()
        },
        JUDGE_PASS,
    );
    script
}

pub struct PipelineFixture {
    pub config: Config,
    pub manifest_path: PathBuf,
    pub pool_path: PathBuf,
    pub script_path: PathBuf,
    pub output_path: PathBuf,
}

/// Write corpus, pool, and script files under `dir` and build a config
/// whose workdir is `dir/work-<tag>`.
pub fn pipeline_fixture(
    dir: &Path,
    tag: &str,
    records: &[AudioRecord],
    pool: &[SeedQuestion],
    script: &Script,
) -> PipelineFixture {
    let manifest_path = dir.join("manifest.jsonl");
    let pool_path = dir.join("seed_pool.jsonl");
    let script_path = dir.join("script.jsonl");
    if !manifest_path.exists() {
        let manifest = CorpusManifest::from_records(records.to_vec());
        serialize_manifest(&manifest, &manifest_path).unwrap();
        auricle::jsonl::write_jsonl(&pool_path, pool).unwrap();
        script.save(&script_path).unwrap();
    }
    let output_path = dir.join(format!("out-{tag}/sft.jsonl"));
    let spec = |name: &str| BackendSpec::Scripted {
        script: script_path.clone(),
        model_name: Some(name.to_string()),
    };
    let config = Config {
        seed: 42,
        workdir: dir.join(format!("work-{tag}")),
        paths: Some(PathsConfig {
            manifest: manifest_path.clone(),
            seed_pool: pool_path.clone(),
            output: output_path.clone(),
        }),
        backends: Some(Backends {
            annotator: spec("annotator-mock"),
            thinker: spec("thinker-mock"),
            judge: spec("judge-mock"),
        }),
        stages: StageConfig::default(),
        eval: None,
    };
    PipelineFixture {
        config,
        manifest_path,
        pool_path,
        script_path,
        output_path,
    }
}

/// Synthetic eval set cycling through all seven subcategories.
pub fn eval_items(n: usize) -> Vec<EvalItem> {
    (0..n)
        .map(|i| {
            let id = format!("eval-{i:03}");
            EvalItem {
                id: id.clone(),
                audio_uri: format!("audio/{id}.wav"),
                question: format!("What happens in clip {id} (eval)?"),
                options: vec![
                    format!("alpha {id}"),
                    format!("beta {id}"),
                    format!("gamma {id}"),
                    format!("delta {id}"),
                ],
                answer_key: 0,
                subcategory: Subcategory::ALL[i % 7],
                rubric: (1..=5).map(|k| format!("criterion {k} for {id}")).collect(),
            }
        })
        .collect()
}

pub fn rubric_verdicts_response(satisfied: usize) -> String {
    let verdicts: Vec<&str> = (0..5).map(|k| if k < satisfied { "true" } else { "false" }).collect();
    format!("```json\n{{\"verdicts\": [{}]}}\n```", verdicts.join(", "))
}
