//! `kws`: command-line front end for the TDNN keyword spotter.

mod data;
mod detect;
mod errors;
mod eval;
mod report;
mod train;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tdnn_kws::eval::dataset::gsc10_keywords;
use tdnn_kws::SkipMode;

use errors::usage;

#[derive(Parser, Debug)]
#[command(
    name = "kws",
    version,
    about = "Streaming two-stage TDNN keyword spotter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a model over a WAV file and print detections as JSON lines.
    Detect(detect::DetectArgs),
    /// Train the phone stage or the word stage.
    Train(train::TrainArgs),
    /// Print multiplications per second for a model.
    Cost(report::CostArgs),
    /// Print the per-layer parameter table of a model.
    Summary(report::SummaryArgs),
    /// Sweep thresholds over traces or WAVs and report FRR against FA/hr.
    Eval(eval::EvalArgs),
    /// Concatenate labelled clips into a stream with ground truth.
    Synth(data::SynthArgs),
    /// Write the synthetic phone corpus and keyword streams to disk.
    GenHarness(data::GenHarnessArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// The ten Speech Commands keywords; every other folder is filler.
    Gsc10,
}

/// Keyword names, given explicitly or through a preset.
#[derive(Args, Debug, Clone, Default)]
pub struct KeywordArgs {
    /// Comma-separated keyword names, in output order.
    #[arg(long, value_delimiter = ',', conflicts_with = "preset")]
    pub keywords: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

impl KeywordArgs {
    pub fn resolve(&self) -> Option<Vec<String>> {
        match (&self.keywords, self.preset) {
            (Some(k), _) => Some(k.clone()),
            (None, Some(Preset::Gsc10)) => Some(gsc10_keywords()),
            (None, None) => None,
        }
    }

    pub fn require(&self, why: &str) -> anyhow::Result<Vec<String>> {
        let k = self
            .resolve()
            .ok_or_else(|| usage(format!("{why}: pass --keywords or --preset")))?;
        if k.is_empty() || k.iter().any(|s| s.trim().is_empty()) {
            return Err(usage("keyword names must be nonempty"));
        }
        Ok(k)
    }
}

pub fn parse_threshold(t: f64) -> anyhow::Result<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(usage(format!("threshold must lie in [0, 1], got {t}")))
    }
}

pub fn skip_arg(s: &str) -> Result<SkipMode, String> {
    s.parse().map_err(|e: tdnn_kws::Error| e.to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Detect(a) => detect::run(a),
        Command::Train(a) => train::run(a),
        Command::Cost(a) => report::cost(a),
        Command::Summary(a) => report::summary(a),
        Command::Eval(a) => eval::run(a),
        Command::Synth(a) => data::synth(a),
        Command::GenHarness(a) => data::gen_harness(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KWS_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                errors::EXIT_USAGE
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if errors::is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(errors::exit_code(&e))
        }
    }
}
