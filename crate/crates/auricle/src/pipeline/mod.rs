//! Pipeline orchestration: stages run in order with line-delimited
//! checkpoints in the workdir, per-sample idempotency keys on resume,
//! and a run manifest of per-stage counts.

pub mod checkpoint;
pub mod config;
pub mod pool;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatBackend;
use crate::corpus::{load_manifest, load_seed_pool, AudioRecord, CorpusError, CorpusManifest};
use crate::cot::{generate_cot, ReasoningTrace};
use crate::eval::{
    aggregate_middle_three, render_table, run_eval_pass, AggregateReport, EvalError,
    EvalRunConfig, MetricReport,
};
use crate::jsonl::{JsonlAppender, JsonlError};
use crate::qa::{construct_qa, QAPair};
use crate::sft::{assemble_dataset, export_jsonl, SftError};
use crate::stage::{StageError, StageOutcome};
use crate::verify::{verify, CandidateSample, RejectionEntry, VerifiedSample};

pub use checkpoint::{read_checkpoint, LockGuard, RunState};
pub use config::{BackendSpec, Backends, Config, EvalSection, PathsConfig, StageConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("workdir {path}: {message}")]
    Workdir { path: String, message: String },
    #[error("workdir is locked by another run ({path}); remove the lock if that run is dead")]
    Locked { path: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: StageError,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// CLI exit code: 1 for validation problems, 2 for stage-fatal
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Locked { .. }
            | PipelineError::Corpus(_) => 1,
            _ => 2,
        }
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Qa,
    Cot,
    Verify,
    Export,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Qa => "qa",
            Stage::Cot => "cot",
            Stage::Verify => "verify",
            Stage::Export => "export",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Stop after this stage completes (used to exercise resume).
    pub stop_after: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: String,
    pub input: usize,
    pub emitted: usize,
    pub skipped: usize,
    pub rejected: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub tool_version: String,
    pub stages: Vec<StageCounts>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QaLine {
    ordinal: usize,
    pair: QAPair,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CotLine {
    audio_id: String,
    ordinal: usize,
    trace: ReasoningTrace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkipLine {
    audio_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ordinal: Option<usize>,
    reason: String,
    attempts: u32,
}

fn stage_error(stage: &'static str) -> impl Fn(StageError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

struct Workdir {
    root: PathBuf,
}

impl Workdir {
    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Pre-built role backends, used to share live handles (and their call
/// counters) across pipeline invocations.
#[derive(Clone)]
pub struct RoleBackends {
    pub annotator: Arc<dyn ChatBackend>,
    pub thinker: Arc<dyn ChatBackend>,
    pub judge: Option<Arc<dyn ChatBackend>>,
}

/// Execute the pipeline: corpus load, QA construction, CoT generation,
/// verification, SFT export. Each stage checkpoints to the workdir;
/// re-invocation with the same config hash resumes without re-querying
/// processed keys.
pub fn run_pipeline(config: &Config, options: &RunOptions) -> Result<RunManifest, PipelineError> {
    run_pipeline_with(config, options, None)
}

/// [`run_pipeline`] with injected backends instead of ones built from
/// the config's backend specs.
pub fn run_pipeline_with(
    config: &Config,
    options: &RunOptions,
    injected: Option<&RoleBackends>,
) -> Result<RunManifest, PipelineError> {
    let (paths, backend_specs) = config.validate_pipeline()?;
    let config_hash = config.config_hash();

    std::fs::create_dir_all(&config.workdir).map_err(|e| PipelineError::Workdir {
        path: config.workdir.display().to_string(),
        message: e.to_string(),
    })?;
    let _lock = LockGuard::acquire(&config.workdir)?;
    let workdir = Workdir {
        root: config.workdir.clone(),
    };

    let mut state = match RunState::load(&config.workdir)? {
        Some(existing) => {
            if existing.config_hash != config_hash {
                return Err(PipelineError::Config(format!(
                    "workdir {} holds a run with config hash {}, current is {}; use a fresh workdir",
                    config.workdir.display(),
                    existing.config_hash,
                    config_hash
                )));
            }
            if !options.resume {
                return Err(PipelineError::Config(format!(
                    "workdir {} already contains a run; pass --resume or use a fresh workdir",
                    config.workdir.display()
                )));
            }
            existing
        }
        None => {
            let state = RunState {
                config_hash: config_hash.clone(),
                completed: Vec::new(),
            };
            state.save(&config.workdir)?;
            state
        }
    };

    let manifest = load_manifest(&paths.manifest)?;
    let pool_questions = load_seed_pool(&paths.seed_pool)?;
    if config.stages.use_seed_questions && !config.stages.domain_filter {
        let available = pool_questions.len();
        if available < config.stages.exemplar_count {
            return Err(PipelineError::Config(format!(
                "seed pool has {available} questions, need {}",
                config.stages.exemplar_count
            )));
        }
    }

    let mut counts: Vec<StageCounts> = Vec::new();
    let order: IndexMap<&str, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();

    // Stage 2: QA construction.
    let qa_lines = {
        let started = Instant::now();
        let stage = Stage::Qa.as_str();
        if !state.is_complete(stage) {
            let annotator = match injected {
                Some(backends) => Arc::clone(&backends.annotator),
                None => backend_specs.annotator.build()?,
            };
            run_qa_stage(
                &workdir,
                &manifest,
                &pool_questions,
                config,
                annotator.as_ref(),
            )?;
            state.mark_complete(stage, &config.workdir)?;
        }
        let mut lines: Vec<QaLine> = read_checkpoint(&workdir.file("qa.jsonl"))?;
        lines.sort_by_key(|l| (order.get(l.pair.audio_id.as_str()).copied(), l.ordinal));
        let skips: Vec<SkipLine> = read_checkpoint(&workdir.file("qa.skips.jsonl"))?;
        let emitted_records: HashSet<&str> =
            lines.iter().map(|l| l.pair.audio_id.as_str()).collect();
        counts.push(StageCounts {
            stage: stage.into(),
            input: manifest.len(),
            emitted: emitted_records.len(),
            skipped: skips.len(),
            rejected: 0,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        lines
    };
    if let Some(manifest_out) = finish_if_stopped(options, Stage::Qa, &config_hash, &counts, &workdir)? {
        return Ok(manifest_out);
    }

    // Stage 3: CoT generation.
    let cot_lines = {
        let started = Instant::now();
        let stage = Stage::Cot.as_str();
        if !state.is_complete(stage) {
            let thinker = match injected {
                Some(backends) => Arc::clone(&backends.thinker),
                None => backend_specs.thinker.build()?,
            };
            run_cot_stage(&workdir, &manifest, &qa_lines, config, thinker.as_ref())?;
            state.mark_complete(stage, &config.workdir)?;
        }
        let mut lines: Vec<CotLine> = read_checkpoint(&workdir.file("cot.jsonl"))?;
        lines.sort_by_key(|l| (order.get(l.audio_id.as_str()).copied(), l.ordinal));
        let skips: Vec<SkipLine> = read_checkpoint(&workdir.file("cot.skips.jsonl"))?;
        counts.push(StageCounts {
            stage: stage.into(),
            input: qa_lines.len(),
            emitted: lines.len(),
            skipped: skips.len(),
            rejected: 0,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        lines
    };
    if let Some(manifest_out) = finish_if_stopped(options, Stage::Cot, &config_hash, &counts, &workdir)? {
        return Ok(manifest_out);
    }

    // Stage 4: verification.
    let accepted = {
        let started = Instant::now();
        let stage = Stage::Verify.as_str();
        if !state.is_complete(stage) {
            let judge: Arc<dyn ChatBackend> = match injected {
                Some(RoleBackends { judge: Some(judge), .. }) => Arc::clone(judge),
                _ if config.stages.use_verification => backend_specs.judge.build()?,
                // Bypass mode never calls the judge.
                _ => Arc::new(crate::backend::ScriptedBackend::new(
                    crate::backend::Script::new(),
                )),
            };
            run_verify_stage(&workdir, &qa_lines, &cot_lines, config, judge.as_ref())?;
            state.mark_complete(stage, &config.workdir)?;
        }
        let mut accepted: Vec<VerifiedSample> = read_checkpoint(&workdir.file("verified.jsonl"))?;
        accepted.sort_by_key(|s| (order.get(s.audio_id.as_str()).copied(), s.ordinal));
        let rejections: Vec<RejectionEntry> =
            read_checkpoint(&workdir.file("rejections.jsonl"))?;
        counts.push(StageCounts {
            stage: stage.into(),
            input: cot_lines.len(),
            emitted: accepted.len(),
            skipped: 0,
            rejected: rejections.len(),
            wall_ms: started.elapsed().as_millis() as u64,
        });
        accepted
    };
    if let Some(manifest_out) = finish_if_stopped(options, Stage::Verify, &config_hash, &counts, &workdir)? {
        return Ok(manifest_out);
    }

    // Stage 5: SFT export.
    {
        let started = Instant::now();
        let stage = Stage::Export.as_str();
        let records_by_id = manifest.by_id();
        let (records, stats, drops) = assemble_dataset(
            &accepted,
            &records_by_id,
            &config.stages.dedup_config(),
            &config.stages.think_delims(),
        )?;
        export_jsonl(&records, &stats, &paths.output)?;
        crate::jsonl::write_jsonl(&workdir.file("dedup.drops.jsonl"), &drops)?;
        if !state.is_complete(stage) {
            state.mark_complete(stage, &config.workdir)?;
        }
        counts.push(StageCounts {
            stage: stage.into(),
            input: accepted.len(),
            emitted: records.len(),
            skipped: drops.len(),
            rejected: 0,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    let run_manifest = build_run_manifest(&config_hash, counts);
    write_run_manifest(&workdir, &run_manifest)?;
    Ok(run_manifest)
}

fn finish_if_stopped(
    options: &RunOptions,
    stage: Stage,
    config_hash: &str,
    counts: &[StageCounts],
    workdir: &Workdir,
) -> Result<Option<RunManifest>, PipelineError> {
    if options.stop_after == Some(stage) {
        let manifest = build_run_manifest(config_hash, counts.to_vec());
        write_run_manifest(workdir, &manifest)?;
        return Ok(Some(manifest));
    }
    Ok(None)
}

fn build_run_manifest(config_hash: &str, stages: Vec<StageCounts>) -> RunManifest {
    RunManifest {
        run_id: format!("run-{config_hash}"),
        config_hash: config_hash.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        stages,
    }
}

fn write_run_manifest(workdir: &Workdir, manifest: &RunManifest) -> Result<(), PipelineError> {
    let path = workdir.file("run-manifest.json");
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, format!("{body}\n")).map_err(|e| PipelineError::Workdir {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn run_qa_stage(
    workdir: &Workdir,
    manifest: &CorpusManifest,
    pool: &[crate::corpus::SeedQuestion],
    config: &Config,
    annotator: &dyn ChatBackend,
) -> Result<(), PipelineError> {
    let qa_path = workdir.file("qa.jsonl");
    let skips_path = workdir.file("qa.skips.jsonl");
    let existing: Vec<QaLine> = read_checkpoint(&qa_path)?;
    let existing_skips: Vec<SkipLine> = read_checkpoint(&skips_path)?;
    let done: HashSet<String> = existing
        .iter()
        .map(|l| l.pair.audio_id.clone())
        .chain(existing_skips.iter().map(|s| s.audio_id.clone()))
        .collect();
    let todo: Vec<&AudioRecord> = manifest
        .records
        .iter()
        .filter(|r| !done.contains(&r.id))
        .collect();
    if !todo.is_empty() {
        tracing::info!(total = manifest.len(), todo = todo.len(), "running QA stage");
    }
    let qa_config = config.stages.qa_config();
    let mut pairs_out = JsonlAppender::open(&qa_path)?;
    let mut skips_out = JsonlAppender::open(&skips_path)?;
    pool::run_ordered_emit(
        &todo,
        config.stages.qa_workers,
        |_, record| {
            construct_qa(annotator, record, pool, &qa_config, config.seed)
                .map(|outcome| (record.id.clone(), outcome))
                .map_err(stage_error("qa"))
        },
        |_, (audio_id, outcome)| {
            match outcome {
                StageOutcome::Emitted(pairs) => {
                    for (ordinal, pair) in pairs.into_iter().enumerate() {
                        pairs_out.append(&QaLine { ordinal, pair })?;
                    }
                }
                StageOutcome::Skipped { reason, attempts } => {
                    skips_out.append(&SkipLine {
                        audio_id,
                        ordinal: None,
                        reason,
                        attempts,
                    })?;
                }
            }
            Ok(())
        },
    )
}

fn run_cot_stage(
    workdir: &Workdir,
    manifest: &CorpusManifest,
    qa_lines: &[QaLine],
    config: &Config,
    thinker: &dyn ChatBackend,
) -> Result<(), PipelineError> {
    let cot_path = workdir.file("cot.jsonl");
    let skips_path = workdir.file("cot.skips.jsonl");
    let existing: Vec<CotLine> = read_checkpoint(&cot_path)?;
    let existing_skips: Vec<SkipLine> = read_checkpoint(&skips_path)?;
    let done: HashSet<(String, usize)> = existing
        .iter()
        .map(|l| (l.audio_id.clone(), l.ordinal))
        .chain(
            existing_skips
                .iter()
                .map(|s| (s.audio_id.clone(), s.ordinal.unwrap_or(0))),
        )
        .collect();
    let records_by_id = manifest.by_id();
    let todo: Vec<(&AudioRecord, &QaLine)> = qa_lines
        .iter()
        .filter(|l| !done.contains(&(l.pair.audio_id.clone(), l.ordinal)))
        .filter_map(|l| {
            records_by_id
                .get(l.pair.audio_id.as_str())
                .map(|&record| (record, l))
        })
        .collect();
    if !todo.is_empty() {
        tracing::info!(total = qa_lines.len(), todo = todo.len(), "running CoT stage");
    }
    let cot_config = config.stages.cot_config();
    let mut traces_out = JsonlAppender::open(&cot_path)?;
    let mut skips_out = JsonlAppender::open(&skips_path)?;
    pool::run_ordered_emit(
        &todo,
        config.stages.cot_workers,
        |_, (record, line)| {
            generate_cot(thinker, record, &line.pair, &cot_config, config.seed)
                .map(|outcome| (line.pair.audio_id.clone(), line.ordinal, outcome))
                .map_err(stage_error("cot"))
        },
        |_, (audio_id, ordinal, outcome)| {
            match outcome {
                StageOutcome::Emitted(trace) => {
                    traces_out.append(&CotLine {
                        audio_id,
                        ordinal,
                        trace,
                    })?;
                }
                StageOutcome::Skipped { reason, attempts } => {
                    skips_out.append(&SkipLine {
                        audio_id,
                        ordinal: Some(ordinal),
                        reason,
                        attempts,
                    })?;
                }
            }
            Ok(())
        },
    )
}

fn run_verify_stage(
    workdir: &Workdir,
    qa_lines: &[QaLine],
    cot_lines: &[CotLine],
    config: &Config,
    judge: &dyn ChatBackend,
) -> Result<(), PipelineError> {
    let verified_path = workdir.file("verified.jsonl");
    let rejections_path = workdir.file("rejections.jsonl");
    let existing: Vec<VerifiedSample> = read_checkpoint(&verified_path)?;
    let existing_rejections: Vec<RejectionEntry> = read_checkpoint(&rejections_path)?;
    let done: HashSet<(String, usize)> = existing
        .iter()
        .map(|s| (s.audio_id.clone(), s.ordinal))
        .chain(
            existing_rejections
                .iter()
                .map(|r| (r.audio_id.clone(), r.ordinal)),
        )
        .collect();
    let qa_by_key: IndexMap<(&str, usize), &QAPair> = qa_lines
        .iter()
        .map(|l| ((l.pair.audio_id.as_str(), l.ordinal), &l.pair))
        .collect();
    let todo: Vec<CandidateSample> = cot_lines
        .iter()
        .filter(|l| !done.contains(&(l.audio_id.clone(), l.ordinal)))
        .filter_map(|l| {
            qa_by_key
                .get(&(l.audio_id.as_str(), l.ordinal))
                .map(|&pair| CandidateSample {
                    audio_id: l.audio_id.clone(),
                    ordinal: l.ordinal,
                    qa: pair.clone(),
                    trace: l.trace.clone(),
                })
        })
        .collect();
    if !todo.is_empty() {
        tracing::info!(total = cot_lines.len(), todo = todo.len(), "running verification stage");
    }
    let verify_config = config.stages.verify_config();
    let mut verified_out = JsonlAppender::open(&verified_path)?;
    let mut rejections_out = JsonlAppender::open(&rejections_path)?;
    pool::run_ordered_emit(
        &todo,
        config.stages.verify_workers,
        |_, sample| {
            Ok::<_, PipelineError>(verify(
                sample.clone(),
                judge,
                &verify_config,
                config.seed,
            ))
        },
        |_, (sample, rejection)| {
            if sample.accepted {
                verified_out.append(&sample)?;
            }
            if let Some(rejection) = rejection {
                rejections_out.append(&rejection)?;
            }
            Ok(())
        },
    )
}

/// Outputs of one eval invocation, all rooted in
/// `<workdir>/eval/<run_id>/`.
#[derive(Debug)]
pub struct EvalArtifacts {
    pub dir: PathBuf,
    pub aggregate: AggregateReport,
}

/// Run five evaluation passes with seeds seed..seed+4 and aggregate by
/// the middle-three mean. Writes per-pass reports, the aggregate, and a
/// rendered table.
pub fn run_eval(config: &Config) -> Result<EvalArtifacts, PipelineError> {
    let eval = config.validate_eval()?;
    let items = crate::eval::load_eval_set(&eval.items)?;
    if items.is_empty() {
        return Err(PipelineError::Config(format!(
            "eval set {} is empty",
            eval.items.display()
        )));
    }
    let subject = eval.subject.build()?;
    let judge = config
        .eval_judge_spec()
        .ok_or_else(|| PipelineError::Config("no judge backend configured".into()))?
        .build()?;
    let run_id = eval
        .run_id
        .clone()
        .unwrap_or_else(|| format!("eval-{}", config.config_hash()));
    let dir = config.workdir.join("eval").join(&run_id);
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Workdir {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;

    let run_config = EvalRunConfig {
        workers: eval.workers,
        cot: config.stages.cot_config(),
        judge_temperature: config.stages.judge_temperature,
        judge_max_tokens: config.stages.judge_max_tokens,
    };
    let pass_ids: Vec<(String, u64)> = (0..5u64)
        .map(|i| (format!("pass-{}", i + 1), config.seed + i))
        .collect();
    let reports: Vec<MetricReport> = if eval.parallel_passes {
        pool::run_ordered(&pass_ids, 5, |_, (pass_id, seed)| {
            run_eval_pass(&subject, &judge, &items, pass_id, *seed, &run_config)
        })?
    } else {
        let mut reports = Vec::with_capacity(5);
        for (pass_id, seed) in &pass_ids {
            tracing::info!(pass = %pass_id, "running eval pass");
            reports.push(run_eval_pass(
                &subject, &judge, &items, pass_id, *seed, &run_config,
            )?);
        }
        reports
    };
    for report in &reports {
        let path = dir.join(format!("{}.json", report.run_id));
        let body = serde_json::to_string_pretty(report).expect("report serializes");
        std::fs::write(&path, format!("{body}\n")).map_err(|e| PipelineError::Workdir {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    let aggregate = aggregate_middle_three(&reports)?;
    let aggregate_path = dir.join("aggregate.json");
    let body = serde_json::to_string_pretty(&aggregate).expect("aggregate serializes");
    std::fs::write(&aggregate_path, format!("{body}\n")).map_err(|e| PipelineError::Workdir {
        path: aggregate_path.display().to_string(),
        message: e.to_string(),
    })?;
    let table = render_table(&aggregate);
    let table_path = dir.join("table.txt");
    std::fs::write(&table_path, &table).map_err(|e| PipelineError::Workdir {
        path: table_path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(EvalArtifacts { dir, aggregate })
}

/// Load a stored aggregate report for `eval report`.
pub fn load_eval_aggregate(config: &Config, run_id: &str) -> Result<AggregateReport, PipelineError> {
    let path = config
        .workdir
        .join("eval")
        .join(run_id)
        .join("aggregate.json");
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Config(format!(
        "cannot read report {}: {e}",
        path.display()
    )))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Workdir {
        path: path.display().to_string(),
        message: format!("corrupt aggregate report: {e}"),
    })
}
