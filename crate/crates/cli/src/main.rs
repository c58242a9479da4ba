//! `scriptcausal` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 malformed or
//! mismatched input data, 3 numerical failure.

// Negated comparisons such as `!(x > 0.0)` reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "scriptcausal", version, about = "Causal script knowledge from event chains")]
struct Cli {
    /// TOML file with run settings; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Normalize a raw chain file into a corpus (`input` -> `out`)
    Ingest,
    /// Shuffle and split a corpus into train/dev/test files (`corpus` -> `out` dir)
    Split,
    /// Build the event vocabulary and optionally the token vocabulary
    Vocab,
    /// Count ordered skip-bigrams (`corpus`, `vocab` -> `out`)
    CountPmi,
    /// Train the event language model baseline
    TrainLm,
    /// Train the conditional event model
    TrainCond,
    /// Finetune a conditional model on out-of-text annotations
    FinetuneCond,
    /// Estimate the intervention table from a conditional model
    EstimateDo,
    /// Print script scores for a pair, or the best predecessors of `next`
    Score,
    /// Complete each context with the best next event
    Complete,
    /// Sample chains from a synthetic network
    Synth,
    /// Exact observational and interventional tables for a synthetic network
    Oracle,
    /// Inverse-frequency cloze recall for the configured systems
    Cloze,
    /// Blinded pairwise judgement sheet
    Sheet,
    /// Summarize a filled judgement sheet
    ScoreSummary,
    /// Output diversity per system
    Diversity,
    /// Finite-difference check of model gradients
    Gradcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Split => "split",
            Command::Vocab => "vocab",
            Command::CountPmi => "count-pmi",
            Command::TrainLm => "train-lm",
            Command::TrainCond => "train-cond",
            Command::FinetuneCond => "finetune-cond",
            Command::EstimateDo => "estimate-do",
            Command::Score => "score",
            Command::Complete => "complete",
            Command::Synth => "synth",
            Command::Oracle => "oracle",
            Command::Cloze => "cloze",
            Command::Sheet => "sheet",
            Command::ScoreSummary => "score-summary",
            Command::Diversity => "diversity",
            Command::Gradcheck => "gradcheck",
        }
    }

    fn run(self, c: &RunConfig) -> Result<commands::Outputs> {
        use commands as k;
        match self {
            Command::Ingest => k::ingest(c),
            Command::Split => k::split(c),
            Command::Vocab => k::vocab(c),
            Command::CountPmi => k::count_pmi(c),
            Command::TrainLm => k::train_lm(c),
            Command::TrainCond => k::train_cond(c),
            Command::FinetuneCond => k::finetune_cond(c),
            Command::EstimateDo => k::estimate_do(c),
            Command::Score => k::score(c),
            Command::Complete => k::complete(c),
            Command::Synth => k::synth(c),
            Command::Oracle => k::oracle(c),
            Command::Cloze => k::cloze(c),
            Command::Sheet => k::sheet(c),
            Command::ScoreSummary => k::score_summary(c),
            Command::Diversity => k::diversity(c),
            Command::Gradcheck => k::gradcheck(c),
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<scriptcausal::Error>() {
            return match e {
                scriptcausal::Error::Invalid(_) => 1,
                scriptcausal::Error::NonFinite(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(config::config_error(format!("config file {} does not exist", p.display())));
            }
            RunConfig::from_file(p)?
        }
        None => RunConfig::default(),
    };
    let settings = cli.settings.over(file);
    if let Some(n) = settings.threads {
        config::positive(n, "threads")?;
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outputs = cli.command.run(&settings)?;
    for (path, bytes) in &outputs.files {
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", outputs.stdout);

    let manifest = serde_json::json!({
        "command": cli.command.name(),
        "config_hash": settings.hash(),
        "seed": settings.seed.unwrap_or(0),
        "outputs": outputs.files.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>(),
    });
    let log = settings.run_log.clone().unwrap_or_else(|| PathBuf::from("scriptcausal-runs.log"));
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .with_context(|| format!("opening run log {}", log.display()))?;
    writeln!(f, "{manifest}").with_context(|| format!("writing run log {}", log.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
