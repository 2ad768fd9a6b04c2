//! Command dispatch for the `kalm` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use kalm::checkpoint::{load_checkpoint, save_checkpoint};
use kalm::config::{load_config, TrainConfig};
use kalm::corpus::load_corpus;
use kalm::eval::evaluate;
use kalm::knowledge::load_knowledge;
use kalm::model::gradcheck_tiny;
use kalm::sweep::{sweep, SweepParam};
use kalm::synth::{generate_synthetic, write_synthetic};
use kalm::train::train;
use kalm::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Largest relative error the gradient check accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "kalm", about = "Knowledge-augmented attention model: training, evaluation and explanation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write its checkpoint.
    Train {
        /// Flat `key = value` config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled corpus and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Scale scores to 0-100 instead of 0-1.
        #[arg(long)]
        percent: bool,
    },
    /// Print the prediction, reasoning chain and rationale for one text.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Print the fragments retrieved for one text.
    Retrieve {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        k: usize,
    },
    /// Retrain for every (value, seed) pair and write CSV and JSON results.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated, strictly increasing.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Held-out corpus every point is evaluated on.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        json: PathBuf,
    },
    /// Finite-difference check of the full loss on the tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic entity-disjoint corpus and knowledge base.
    Synth {
        #[arg(long)]
        entities: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
}

fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

fn config_or_default(path: Option<&Path>) -> kalm::Result<TrainConfig> {
    path.map_or_else(|| Ok(TrainConfig::default()), load_config)
}

fn write_file(path: &Path, contents: &str) -> kalm::Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn pretty(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("json values serialize")
}

fn execute(command: Command, out: &mut dyn Write) -> kalm::Result<i32> {
    match command {
        Command::Train { config, corpus, kb, out: path } => {
            let cfg = config_or_default(config.as_deref())?;
            let outcome = train(&load_corpus(&corpus)?, &load_knowledge(&kb)?, &cfg)?;
            for e in &outcome.history {
                writeln!(out, "epoch {} task {:.6} explain {:.6} total {:.6}", e.epoch, e.loss.task, e.loss.explain, e.loss.total)?;
            }
            save_checkpoint(&path, &outcome.model)?;
        }
        Command::Eval { checkpoint, corpus, kb, report, percent } => {
            let model = load_checkpoint(&checkpoint)?;
            let eval = evaluate(&model, &load_corpus(&corpus)?, &load_knowledge(&kb)?)?;
            let scores = if percent { eval.report.as_percent() } else { eval.report };
            let json = pretty(&scores.to_json(&model.config));
            write_file(&report, &format!("{json}\n"))?;
            writeln!(out, "{json}")?;
        }
        Command::Explain { checkpoint, kb, text, format } => {
            let model = load_checkpoint(&checkpoint)?;
            let kb = model.build_kb(&load_knowledge(&kb)?)?;
            let explanation = model.explain(&text, &kb)?;
            match format {
                Format::Json => writeln!(out, "{}", pretty(&explanation.to_json()))?,
                Format::Text => {
                    writeln!(out, "prediction: {}", explanation.prediction.predicted_label)?;
                    for (label, p) in model.labels.iter().zip(&explanation.prediction.label_distribution) {
                        writeln!(out, "  p({label}) = {p:.4}")?;
                    }
                    writeln!(out, "chain:")?;
                    for s in &explanation.chain.steps {
                        writeln!(out, "  {} -> {} ({:.4})", s.source, s.target.label(), s.weight)?;
                    }
                    writeln!(out, "rationale:\n{}", explanation.rationale.text)?;
                }
            }
        }
        Command::Retrieve { kb, checkpoint, text, k } => {
            let mut model = load_checkpoint(&checkpoint)?;
            model.config.top_k = k;
            model.config.validate()?;
            let kb = model.build_kb(&load_knowledge(&kb)?)?;
            let result = model.retrieve(&text, &kb)?;
            writeln!(out, "{}", pretty(&serde_json::to_value(&result).expect("retrieval serializes")))?;
        }
        Command::Sweep { param, values, seeds, config, corpus, test, kb, csv, json } => {
            let cfg = config_or_default(config.as_deref())?;
            let result = sweep(
                param,
                &values,
                &seeds,
                &cfg,
                &load_corpus(&corpus)?,
                &load_corpus(&test)?,
                &load_knowledge(&kb)?,
            )?;
            let table = result.to_csv();
            write_file(&csv, &table)?;
            write_file(&json, &format!("{}\n", pretty(&result.to_json())))?;
            write!(out, "{table}")?;
        }
        Command::Gradcheck { seed } => {
            let report = gradcheck_tiny(seed)?;
            writeln!(out, "{}", pretty(&serde_json::to_value(&report).expect("report serializes")))?;
            if !(report.max_rel_error < GRADCHECK_TOLERANCE) {
                return Err(Error::Numeric(format!(
                    "max relative error {:.3e} in {} exceeds {GRADCHECK_TOLERANCE:e}",
                    report.max_rel_error, report.worst_parameter
                )));
            }
        }
        Command::Synth { entities, out_dir, seed, train_fraction } => {
            let data = generate_synthetic(entities, train_fraction, seed)?;
            write_synthetic(&out_dir, &data)?;
            writeln!(
                out,
                "wrote {} train, {} test examples and {} fragments to {}",
                data.train.len(),
                data.test.len(),
                data.knowledge.len(),
                out_dir.display()
            )?;
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing normal output to `out` and diagnostics to `err`.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run_command<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
