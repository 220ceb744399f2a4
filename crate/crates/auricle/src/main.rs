//! Command-line entry point: pipeline runs, corpus stats, evaluation
//! runs and reports, seed-question generation, rubric generation.
//! Structured JSON logs go to stderr; data goes to files only.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use auricle::corpus::{compute_domain_stats, generate_seed_candidates, load_manifest, Domain};
use auricle::eval::{generate_rubric, render_table, EvalItem, EvalItemDraft};
use auricle::pipeline::{
    load_eval_aggregate, run_eval, run_pipeline, Config, PipelineError, RunOptions,
};

#[derive(Parser)]
#[command(name = "auricle", version, about = "Audio reasoning dataset curation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the TOML config file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Data curation pipeline.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Evaluation harness.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Seed question pool tooling.
    Seed {
        #[command(subcommand)]
        command: SeedCommand,
    },
    /// Rubric tooling for eval sets.
    Rubric {
        #[command(subcommand)]
        command: RubricCommand,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Run all stages, checkpointing into the workdir.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Continue a previous run in the same workdir.
        #[arg(long)]
        resume: bool,
    },
    /// Print per-source corpus statistics.
    Stats {
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Run five evaluation passes and aggregate them.
    Run {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Render a stored aggregate report.
    Report {
        #[command(flatten)]
        config: ConfigArg,
        /// Run id under <workdir>/eval/.
        #[arg(long)]
        run: String,
    },
}

#[derive(Subcommand)]
enum SeedCommand {
    /// Generate candidate seed questions for expert review.
    Gen {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated domains (sound,speech,music).
        #[arg(long, default_value = "sound,speech,music")]
        domains: String,
        /// Maximum number of candidates.
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum RubricCommand {
    /// Generate five-criterion rubrics for eval item drafts.
    Gen {
        #[command(flatten)]
        config: ConfigArg,
        /// Input drafts (JSONL of items with reference_reasoning).
        #[arg(long)]
        drafts: PathBuf,
        /// Output eval set (JSONL of items with rubric).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %e, "command failed");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Pipeline { command } => match command {
            PipelineCommand::Run { config, resume } => {
                let config = Config::load(&config.config)?;
                let manifest = run_pipeline(
                    &config,
                    &RunOptions {
                        resume,
                        stop_after: None,
                    },
                )?;
                for stage in &manifest.stages {
                    tracing::info!(
                        stage = %stage.stage,
                        input = stage.input,
                        emitted = stage.emitted,
                        skipped = stage.skipped,
                        rejected = stage.rejected,
                        wall_ms = stage.wall_ms,
                        "stage complete"
                    );
                }
                println!("run {} complete", manifest.run_id);
                Ok(())
            }
            PipelineCommand::Stats { config } => {
                let config = Config::load(&config.config)?;
                let paths = config
                    .paths
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("missing [paths] section".into()))?;
                let manifest = load_manifest(&paths.manifest)?;
                let stats = compute_domain_stats(&manifest)?;
                println!("{:<24} {:>8} {:>9}", "source", "count", "ratio%");
                for row in stats {
                    println!(
                        "{:<24} {:>8} {:>9.2}",
                        row.source, row.count, row.ratio_percent
                    );
                }
                Ok(())
            }
        },
        Command::Eval { command } => match command {
            EvalCommand::Run { config } => {
                let config = Config::load(&config.config)?;
                let artifacts = run_eval(&config)?;
                print!("{}", render_table(&artifacts.aggregate));
                println!("reports written to {}", artifacts.dir.display());
                Ok(())
            }
            EvalCommand::Report { config, run } => {
                let config = Config::load(&config.config)?;
                let aggregate = load_eval_aggregate(&config, &run)?;
                print!("{}", render_table(&aggregate));
                Ok(())
            }
        },
        Command::Seed { command } => match command {
            SeedCommand::Gen {
                config,
                domains,
                count,
                out,
            } => {
                let config = Config::load(&config.config)?;
                let backends = config
                    .backends
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("missing [backends] section".into()))?;
                let domains = parse_domains_arg(&domains)?;
                let backend = backends.annotator.build()?;
                let candidates = generate_seed_candidates(backend.as_ref(), &domains, count)?;
                auricle::jsonl::write_jsonl(&out, &candidates)
                    .map_err(auricle::corpus::CorpusError::from)?;
                println!(
                    "wrote {} candidate questions to {} (review before use)",
                    candidates.len(),
                    out.display()
                );
                Ok(())
            }
        },
        Command::Rubric { command } => match command {
            RubricCommand::Gen {
                config,
                drafts,
                out,
            } => {
                let config = Config::load(&config.config)?;
                let judge = config
                    .eval_judge_spec()
                    .ok_or_else(|| {
                        PipelineError::Config("no judge backend configured".into())
                    })?
                    .build()?;
                let drafts: Vec<EvalItemDraft> = auricle::jsonl::read_jsonl(&drafts)?;
                let mut items: Vec<EvalItem> = Vec::new();
                let mut failures = 0usize;
                for draft in drafts {
                    match generate_rubric(judge.as_ref(), &draft, config.seed) {
                        Ok(rubric) => items.push(draft.with_rubric(rubric)),
                        Err(e) => {
                            failures += 1;
                            tracing::warn!(item_id = %draft.id, error = %e, "rubric generation failed");
                        }
                    }
                }
                auricle::jsonl::write_jsonl(&out, &items)?;
                println!(
                    "wrote {} eval items to {} ({failures} failures)",
                    items.len(),
                    out.display()
                );
                Ok(())
            }
        },
    }
}

fn parse_domains_arg(arg: &str) -> Result<Vec<Domain>, PipelineError> {
    arg.split(',')
        .map(|s| {
            s.trim()
                .parse::<Domain>()
                .map_err(PipelineError::Config)
        })
        .collect()
}
