//! Run configuration: one human-editable TOML file describing seeds,
//! paths, backends per role, stage parameters, and the optional eval
//! section. Secrets never live here; auth tokens are named environment
//! variables.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{http_backend, BackendConfig, ChatBackend, Script, ScriptedBackend};
use crate::cot::{CotConfig, ThinkDelims};
use crate::hash::sha256_hex16;
use crate::pipeline::PipelineError;
use crate::qa::QaConfig;
use crate::sft::DedupConfig;
use crate::verify::VerifyConfig;

/// Where a role's completions come from: a deterministic script file or
/// a live OpenAI-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Scripted {
        script: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model_name: Option<String>,
    },
    Http {
        #[serde(flatten)]
        config: BackendConfig,
    },
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, PipelineError> {
        match self {
            BackendSpec::Scripted { script, model_name } => {
                let script = Script::load(script).map_err(|e| {
                    PipelineError::Config(format!("cannot load backend script: {e}"))
                })?;
                let mut backend = ScriptedBackend::new(script);
                if let Some(name) = model_name {
                    backend = backend.with_model_name(name.clone());
                }
                Ok(Arc::new(backend))
            }
            BackendSpec::Http { config } => {
                let backend = http_backend(config)
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                Ok(Arc::new(backend))
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let BackendSpec::Scripted { script, .. } = self {
            *script = resolve(base, script);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backends {
    pub annotator: BackendSpec,
    pub thinker: BackendSpec,
    pub judge: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    pub seed_pool: PathBuf,
    pub output: PathBuf,
}

/// Stage parameters and ablation flags, flattened into one table for
/// easy editing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub use_seed_questions: bool,
    pub use_metadata: bool,
    pub use_verification: bool,
    pub exemplar_count: usize,
    pub domain_filter: bool,
    pub max_gen_retries: u32,
    pub min_options: usize,
    pub max_options: usize,
    pub max_pairs: usize,
    pub annotator_temperature: f64,
    pub thinker_temperature: f64,
    pub judge_temperature: f64,
    pub annotator_max_tokens: u32,
    pub thinker_max_tokens: u32,
    pub judge_max_tokens: u32,
    pub qa_workers: usize,
    pub cot_workers: usize,
    pub verify_workers: usize,
    pub think_open: String,
    pub think_close: String,
    pub dedup: bool,
    pub attach_audio_to_judge: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            use_seed_questions: true,
            use_metadata: true,
            use_verification: true,
            exemplar_count: 20,
            domain_filter: false,
            max_gen_retries: 2,
            min_options: 2,
            max_options: 6,
            max_pairs: 3,
            annotator_temperature: 0.8,
            thinker_temperature: 0.7,
            judge_temperature: 0.0,
            annotator_max_tokens: 1024,
            thinker_max_tokens: 2048,
            judge_max_tokens: 512,
            qa_workers: 4,
            cot_workers: 4,
            verify_workers: 4,
            think_open: "<think>".into(),
            think_close: "</think>".into(),
            dedup: true,
            attach_audio_to_judge: false,
        }
    }
}

impl StageConfig {
    pub fn think_delims(&self) -> ThinkDelims {
        ThinkDelims {
            open: self.think_open.clone(),
            close: self.think_close.clone(),
        }
    }

    pub fn qa_config(&self) -> QaConfig {
        QaConfig {
            use_seed_questions: self.use_seed_questions,
            use_metadata: self.use_metadata,
            exemplar_count: self.exemplar_count,
            domain_filter: self.domain_filter,
            min_options: self.min_options,
            max_options: self.max_options,
            max_pairs: self.max_pairs,
            max_gen_retries: self.max_gen_retries,
            temperature: self.annotator_temperature,
            max_tokens: self.annotator_max_tokens,
        }
    }

    pub fn cot_config(&self) -> CotConfig {
        CotConfig {
            delims: self.think_delims(),
            max_gen_retries: self.max_gen_retries,
            temperature: self.thinker_temperature,
            max_tokens: self.thinker_max_tokens,
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            use_verification: self.use_verification,
            attach_audio_to_judge: self.attach_audio_to_judge,
            judge_temperature: self.judge_temperature,
            judge_max_tokens: self.judge_max_tokens,
        }
    }

    pub fn dedup_config(&self) -> DedupConfig {
        DedupConfig { enabled: self.dedup }
    }

    fn validate(&self) -> Result<(), String> {
        if self.qa_workers == 0 || self.cot_workers == 0 || self.verify_workers == 0 {
            return Err("worker counts must be >= 1".into());
        }
        if self.use_seed_questions && self.exemplar_count == 0 {
            return Err("exemplar_count must be >= 1 when seed questions are enabled".into());
        }
        if self.min_options < 2 {
            return Err("min_options must be >= 2".into());
        }
        if self.max_options > 6 {
            return Err("max_options must be <= 6 (letter designators run A-F)".into());
        }
        if self.min_options > self.max_options {
            return Err("min_options exceeds max_options".into());
        }
        if self.max_pairs == 0 {
            return Err("max_pairs must be >= 1".into());
        }
        if self.think_open.is_empty() || self.think_close.is_empty() {
            return Err("think delimiters must be non-empty".into());
        }
        Ok(())
    }
}

/// Evaluation section: subject model under test, judge, and the eval
/// set location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub items: PathBuf,
    pub subject: BackendSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default = "default_eval_workers")]
    pub workers: usize,
    #[serde(default)]
    pub parallel_passes: bool,
}

fn default_eval_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub seed: u64,
    pub workdir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<PathsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backends: Option<Backends>,
    #[serde(default)]
    pub stages: StageConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl Config {
    /// Parse a TOML config file. Relative paths are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Config, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: Config = toml::from_str(&text).map_err(|e| {
            PipelineError::Config(format!("cannot parse config {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.workdir = resolve(&base, &config.workdir);
        if let Some(paths) = &mut config.paths {
            paths.manifest = resolve(&base, &paths.manifest);
            paths.seed_pool = resolve(&base, &paths.seed_pool);
            paths.output = resolve(&base, &paths.output);
        }
        if let Some(backends) = &mut config.backends {
            backends.annotator.resolve_paths(&base);
            backends.thinker.resolve_paths(&base);
            backends.judge.resolve_paths(&base);
        }
        if let Some(eval) = &mut config.eval {
            eval.items = resolve(&base, &eval.items);
            eval.subject.resolve_paths(&base);
            if let Some(judge) = &mut eval.judge {
                judge.resolve_paths(&base);
            }
        }
        Ok(config)
    }

    /// Covers every field that affects output: two configs with equal
    /// hashes drive identical runs under scripted backends.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        sha256_hex16(&canonical)
    }

    /// Checks that apply to every command.
    pub fn validate_common(&self) -> Result<(), PipelineError> {
        self.stages.validate().map_err(PipelineError::Config)?;
        if let Some(eval) = &self.eval {
            if eval.workers == 0 {
                return Err(PipelineError::Config("eval.workers must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Checks required before a pipeline run.
    pub fn validate_pipeline(&self) -> Result<(&PathsConfig, &Backends), PipelineError> {
        self.validate_common()?;
        let paths = self
            .paths
            .as_ref()
            .ok_or_else(|| PipelineError::Config("missing [paths] section".into()))?;
        let backends = self
            .backends
            .as_ref()
            .ok_or_else(|| PipelineError::Config("missing [backends] section".into()))?;
        let mut distinct = std::collections::HashSet::new();
        for path in [&paths.manifest, &paths.seed_pool, &paths.output] {
            if !distinct.insert(path) {
                return Err(PipelineError::Config(format!(
                    "paths must be distinct: {} appears twice",
                    path.display()
                )));
            }
        }
        if !paths.manifest.exists() {
            return Err(PipelineError::Config(format!(
                "manifest not found: {}",
                paths.manifest.display()
            )));
        }
        if !paths.seed_pool.exists() {
            return Err(PipelineError::Config(format!(
                "seed pool not found: {}",
                paths.seed_pool.display()
            )));
        }
        Ok((paths, backends))
    }

    /// Checks required before an eval run; returns the eval section.
    pub fn validate_eval(&self) -> Result<&EvalSection, PipelineError> {
        self.validate_common()?;
        let eval = self
            .eval
            .as_ref()
            .ok_or_else(|| PipelineError::Config("missing [eval] section".into()))?;
        if !eval.items.exists() {
            return Err(PipelineError::Config(format!(
                "eval set not found: {}",
                eval.items.display()
            )));
        }
        if eval.judge.is_none() && self.backends.is_none() {
            return Err(PipelineError::Config(
                "eval needs [eval.judge] or [backends.judge]".into(),
            ));
        }
        Ok(eval)
    }

    /// The judge used for eval runs: [eval.judge] when present, else
    /// the pipeline judge.
    pub fn eval_judge_spec(&self) -> Option<&BackendSpec> {
        self.eval
            .as_ref()
            .and_then(|e| e.judge.as_ref())
            .or_else(|| self.backends.as_ref().map(|b| &b.judge))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
seed = 42
workdir = "work"

[paths]
manifest = "manifest.jsonl"
seed_pool = "pool.jsonl"
output = "out/sft.jsonl"

[backends.annotator]
kind = "scripted"
script = "script.jsonl"

[backends.thinker]
kind = "http"
endpoint_url = "http://localhost:9000/v1/chat/completions"
model_name = "thinker-model"
requests_per_minute = 120

[backends.judge]
kind = "scripted"
script = "script.jsonl"
model_name = "judge-mock"

[stages]
exemplar_count = 10
use_metadata = false
"#
    }

    #[test]
    fn parse_and_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, minimal_toml()).unwrap();
        let config = Config::load(&path).unwrap();
        assert_eq!(config.seed, 42);
        assert!(config.workdir.is_absolute());
        let paths = config.paths.as_ref().unwrap();
        assert_eq!(paths.manifest, dir.path().join("manifest.jsonl"));
        assert!(!config.stages.use_metadata);
        assert_eq!(config.stages.exemplar_count, 10);
        match &config.backends.as_ref().unwrap().thinker {
            BackendSpec::Http { config } => {
                assert_eq!(config.model_name, "thinker-model");
                assert_eq!(config.requests_per_minute, 120);
                // Defaults fill unspecified fields.
                assert_eq!(config.retry.max_attempts, 3);
            }
            other => panic!("expected http spec, got {other:?}"),
        }
    }

    #[test]
    fn hash_is_stable_and_field_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, minimal_toml()).unwrap();
        let a = Config::load(&path).unwrap();
        let b = Config::load(&path).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.seed = 43;
        assert_ne!(a.config_hash(), c.config_hash());
        let mut d = a.clone();
        d.stages.use_verification = false;
        assert_ne!(a.config_hash(), d.config_hash());
    }

    #[test]
    fn stage_validation_catches_bad_bounds() {
        let mut stages = StageConfig::default();
        stages.min_options = 5;
        stages.max_options = 3;
        assert!(stages.validate().is_err());
        let mut stages = StageConfig::default();
        stages.qa_workers = 0;
        assert!(stages.validate().is_err());
    }

    #[test]
    fn pipeline_validation_requires_existing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, minimal_toml()).unwrap();
        let config = Config::load(&path).unwrap();
        // Manifest file does not exist yet.
        assert!(config.validate_pipeline().is_err());
    }
}
