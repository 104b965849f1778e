use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdr_lm::eval::{
    cache_evaluate, context_nll_histogram, evaluate, prediction_entropy_histogram, EvalOptions, HistogramSpec,
};
use pdr_lm::harness::{
    ablate, ablation_table, load_ranges, sweep, train, Checkpoint, Dataset, DirSink, RunConfig, RunSink,
};
use pdr_lm::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "pdrlm",
    version,
    about = "LSTM language models with past decode regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.jsonl and best.ckpt under out_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a text file with a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also report continuous-cache scores (settings from the checkpoint's config).
        #[arg(long)]
        cache: bool,
        /// Write the next-token entropy histogram to hist_entropy.csv.
        #[arg(long)]
        hist_entropy: bool,
        /// Write the past-decode NLL histogram to hist_context_nll.csv (needs the PDR head).
        #[arg(long)]
        hist_context_nll: bool,
        /// Directory for histogram files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Write each target's model probability, one per line.
        #[arg(long)]
        dump_probs: Option<PathBuf>,
        /// Overrides the evaluation batch size.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Train the base config plus one run per disabled knob.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated arm names; empty runs the base only.
        #[arg(long, default_value = "", value_delimiter = ',')]
        arms: Vec<String>,
    },
    /// Train n configurations sampled from uniform ranges.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        /// File of `key = lo, hi` lines.
        #[arg(long)]
        ranges: PathBuf,
        /// Also train every sample with the PDR head disabled.
        #[arg(long)]
        paired: bool,
    },
    /// Copy a checkpoint without its PDR head.
    Strip {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn dir_sink(config: &RunConfig) -> Result<Box<dyn RunSink>> {
    Ok(Box::new(DirSink::create(&config.out_dir, &config.to_text())?))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, seed } => {
            let mut config = RunConfig::from_file(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let data = Dataset::load(&config)?;
            let mut sink = DirSink::create(&config.out_dir, &config.to_text())?;
            let outcome = train(&config, &data, &mut sink)?;
            println!(
                "{}",
                json!({
                    "checkpoint": sink.checkpoint_path().display().to_string(),
                    "epochs": outcome.epochs,
                    "steps": outcome.steps,
                    "valid": outcome.best_valid,
                    "test": outcome.test,
                })
            );
        }
        Command::Eval {
            ckpt,
            data,
            cache,
            hist_entropy,
            hist_context_nll,
            out_dir,
            dump_probs,
            batch,
        } => {
            let checkpoint = if hist_context_nll {
                Checkpoint::load_with_head(&ckpt)?
            } else {
                Checkpoint::load(&ckpt)?
            };
            let config = RunConfig::parse(&checkpoint.config)?;
            let text = std::fs::read(&data).map_err(|e| Error::Io {
                path: data.clone(),
                source: e,
            })?;
            let ids = checkpoint.vocab.encode(&text)?;
            let opts = EvalOptions {
                batch: batch.unwrap_or(config.eval_batch),
                bptt: config.bptt,
                per_token: dump_probs.is_some(),
            };
            let params = &checkpoint.params;
            let report = evaluate(params, &ids, &opts)?;
            println!("{}", report.to_json());
            if let (Some(path), Some(probs)) = (&dump_probs, &report.target_probs) {
                let lines: String = probs.iter().map(|p| format!("{p:e}\n")).collect();
                write(path, &lines)?;
            }
            if cache {
                let cached = cache_evaluate(params, &ids, &opts, &config.cache)?;
                println!("{}", json!({ "cache": cached, "config": config.cache }));
            }
            if hist_entropy || hist_context_nll {
                std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                    path: out_dir.clone(),
                    source: e,
                })?;
            }
            if hist_entropy {
                let h = prediction_entropy_histogram(params, &ids, &opts, HistogramSpec::default())?;
                write(&out_dir.join("hist_entropy.csv"), &h.to_csv())?;
            }
            if hist_context_nll {
                let h = context_nll_histogram(params, &ids, &opts, HistogramSpec::default())?;
                write(&out_dir.join("hist_context_nll.csv"), &h.to_csv())?;
            }
        }
        Command::Ablate { config, arms } => {
            let config = RunConfig::from_file(&config)?;
            let arms: Vec<String> = arms
                .into_iter()
                .map(|a| a.trim().to_string())
                .filter(|a| !a.is_empty())
                .collect();
            let data = Dataset::load(&config)?;
            let rows = ablate(&config, &arms, &data, |_, c| dir_sink(c))?;
            std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io {
                path: config.out_dir.clone(),
                source: e,
            })?;
            write(
                &config.out_dir.join("ablation.json"),
                &serde_json::to_string_pretty(&rows)?,
            )?;
            print!("{}", ablation_table(&rows));
        }
        Command::Sweep {
            config,
            n,
            ranges,
            paired,
        } => {
            let config = RunConfig::from_file(&config)?;
            let ranges = load_ranges(&ranges)?;
            let data = Dataset::load(&config)?;
            let rows = sweep(&config, &ranges, n, paired, &data, |_, c| dir_sink(c))?;
            let mut lines = String::new();
            for row in &rows {
                let line = serde_json::to_string(row)?;
                println!("{line}");
                lines.push_str(&line);
                lines.push('\n');
            }
            std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io {
                path: config.out_dir.clone(),
                source: e,
            })?;
            write(&config.out_dir.join("sweep.jsonl"), &lines)?;
        }
        Command::Strip { ckpt, out } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let removed = checkpoint.params.head.as_ref().map_or(0, |h| h.param_count());
            let stripped = checkpoint.stripped();
            stripped.save(&out)?;
            println!(
                "{}",
                json!({
                    "removed_params": removed,
                    "params": stripped.params.parameter_counts(false).total,
                    "bytes_before": checkpoint.to_bytes().len(),
                    "bytes_after": stripped.to_bytes().len(),
                })
            );
        }
    }
    Ok(())
}
