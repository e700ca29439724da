//! Argument parsing for the `segrel` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Metric};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "segrel", version, about = "Graph-to-text generation with relation-aware multi-segment attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert tuple or key-value input into canonical JSONL records.
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// webnlg, generic, agenda or key-value.
        #[arg(long)]
        preset: Option<String>,
        /// Emit the linearized single-segment variant.
        #[arg(long)]
        flatten: bool,
    },
    /// Draw a nested few-shot subset of a JSONL file.
    Subsample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Count (`500`) or percentage (`1%`).
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the subset report here as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a model from scratch or resume from a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Output directory; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Save and stop after this many completed steps.
        #[arg(long)]
        stop_at: Option<u64>,
        /// Stop once the logged loss (dev loss with --dev) falls below this.
        #[arg(long)]
        target_loss: Option<f64>,
        #[arg(long)]
        allow_config_change: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Generate target text for every record of a dataset.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to vocab.txt next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// decode.* overrides, e.g. `--set decode.strategy=beam`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Score a generation file, or summarize repeated runs with --aggregate.
    Evaluate {
        #[arg(long, required_unless_present = "aggregate")]
        generations: Option<PathBuf>,
        /// Comma-separated: bleu4, rouge-l, rouge-4, exact. Defaults to all.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        expect_hash: Option<String>,
        #[arg(long)]
        allow_hash_mismatch: bool,
        #[arg(long)]
        dataset: Option<String>,
        /// Compare case-sensitively.
        #[arg(long)]
        cased: bool,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Report files from repeated runs; prints mean and standard deviation.
        #[arg(long, num_args = 1.., conflicts_with = "generations")]
        aggregate: Vec<PathBuf>,
    },
    /// Write the synthetic direction dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.d_model=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Transform { input, output, preset, flatten } => {
            let summary = commands::transform(&commands::TransformArgs { input, output, preset, flatten })?;
            print_json(&summary);
        }
        Command::Subsample { input, output, spec, seed, report } => {
            let r = commands::subsample(&commands::SubsampleArgs { input, spec, seed, output, report })?;
            println!("{} selected of {} {}", r.count, r.total, r.label);
        }
        Command::Train { config, train, dev, out, resume, stop_at, target_loss, allow_config_change, quiet } => {
            let config = config.load()?;
            let outcome = commands::train(&commands::TrainArgs {
                config,
                train,
                dev,
                out,
                resume,
                stop_at,
                target_loss,
                allow_config_change,
                quiet,
            })?;
            println!("step {} saved to {}", outcome.step, outcome.checkpoint.display());
        }
        Command::Generate { checkpoint, vocab, input, output, overrides, threads, quiet } => {
            let lines = commands::generate_cmd(&commands::GenerateArgs {
                checkpoint,
                vocab,
                input,
                output: output.clone(),
                overrides,
                threads,
                quiet,
            })?;
            println!("{} generations written to {}", lines.len(), output.display());
        }
        Command::Evaluate {
            generations,
            metrics,
            checkpoint,
            config,
            expect_hash,
            allow_hash_mismatch,
            dataset,
            cased,
            output,
            aggregate,
        } => {
            if !aggregate.is_empty() {
                for row in commands::aggregate(&aggregate)? {
                    println!("{}: {:.4} ± {:.4} over {} runs", row.metric, row.mean, row.std, row.runs);
                }
                return Ok(());
            }
            let generations = generations.expect("required unless aggregating");
            let metrics = metrics.iter().map(|m| Metric::parse(m)).collect::<Result<Vec<_>, _>>()?;
            let config = match config {
                Some(path) => Some(RunConfig::load(Some(&path), &[])?),
                None => None,
            };
            let report = commands::evaluate(&commands::EvaluateArgs {
                generations,
                metrics,
                checkpoint,
                config,
                expect_hash,
                allow_hash_mismatch,
                dataset,
                lowercase: cased.then_some(false),
                output,
            })?;
            for m in &report.metrics {
                println!("{}: {:.4}", m.metric, m.score);
            }
        }
        Command::Synth { n, seed, output } => {
            let count = commands::synth(&commands::SynthArgs { n, seed, output: output.clone() })?;
            println!("{count} examples written to {}", output.display());
        }
    }
    Ok(())
}
