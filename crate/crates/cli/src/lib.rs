//! `crashfl` command line: parse, localize, baseline, evaluate, calibrate,
//! synth and judge.
//!
//! Exit codes: 0 success, 1 fatal error (including usage errors), 2 when
//! output was written but some agent runs failed.

mod commands;
pub mod settings;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crashfl_core::corpus::CorpusError;
use crashfl_core::evalkit::EvalError;
use crashfl_core::ranking::BaselineKind;

pub use settings::Settings;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FATAL: u8 = 1;
pub const EXIT_DEGRADED: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Dump(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Json(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Machine-readable code printed as `error[<code>]`.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Dump(_) => "malformed_dump",
            CliError::Backend(_) => "backend",
            CliError::Json(_) => "invalid_json",
            CliError::Eval(EvalError::MissingGroundTruth(_)) => "missing_ground_truth",
            CliError::Eval(EvalError::LengthMismatch(..)) => "length_mismatch",
            CliError::Eval(EvalError::Degenerate(_)) => "degenerate",
            CliError::Eval(EvalError::InvalidInput(_)) => "invalid_input",
            CliError::Corpus(_) => "corpus",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "crashfl", version, about = "Crash fault localization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a crashdump into sections and extract stack locations.
    Parse(ParseArgs),
    /// Run the agent R times and write the aggregated ranking.
    Localize(LocalizeArgs),
    /// Stack-order baseline ranking.
    Baseline(BaselineArgs),
    /// Score rankings against a corpus manifest.
    Evaluate(EvaluateArgs),
    /// Fit and cross-validate a confidence calibration.
    Calibrate(CalibrateArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Judge consolidated explanations against postmortems.
    Judge(JudgeArgs),
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    pub dump: PathBuf,
    /// Include sanitized CRASH_STACK / CRASH_EXTINFO text.
    #[arg(long)]
    pub sanitize: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct BackendArgs {
    /// Scripted trajectory (JSON Lines); repeat to rotate scripts across runs.
    #[arg(long = "script", conflicts_with_all = ["endpoint", "model"])]
    pub scripts: Vec<PathBuf>,
    /// OpenAI-compatible chat completions URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_response_tokens: Option<u32>,
    /// JSON settings file (flags > environment > file > defaults).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long, required_unless_present = "manifest", requires = "repo")]
    pub dump: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest", requires = "dump")]
    pub repo: Option<PathBuf>,
    /// Localize every crash of a corpus manifest.
    #[arg(long, conflicts_with_all = ["dump", "repo", "crash_id", "output"], requires = "output_dir")]
    pub manifest: Option<PathBuf>,
    /// Directory for per-crash ranking files in manifest mode.
    #[arg(long, requires = "manifest")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub crash_id: Option<String>,
    /// Number of independent agent runs.
    #[arg(short = 'R', long = "runs")]
    pub runs: Option<usize>,
    /// Tool calls allowed per run.
    #[arg(short = 'N', long = "max-tools")]
    pub max_tools: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub sanitize: bool,
    #[arg(long)]
    pub no_deep_search: bool,
    #[arg(long, value_name = "b1|b2")]
    pub augment_with: Option<BaselineKind>,
    /// Write one transcript per run under `<dir>/<crash_id>/`.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Language server command for symbol definitions, e.g. "clangd".
    #[arg(long)]
    pub lsp_command: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long, default_value = "b1", value_name = "b1|b2")]
    pub kind: BaselineKind,
    /// Map stack paths onto repository-relative files.
    #[arg(long)]
    pub repo: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Ranking files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    pub rankings: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Confidence bucket bounds.
    #[arg(long, value_delimiter = ',')]
    pub bounds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crashfl_core::evalkit::DEFAULT_FOLDS)]
    pub folds: usize,
    /// Permutation test with this many shuffles instead of the t-test.
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Alignment report from `judge` to include.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// JSON file `{"confidences": [...], "labels": [...]}`.
    #[arg(
        long,
        required_unless_present = "manifest",
        conflicts_with = "manifest"
    )]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "rankings")]
    pub manifest: Option<PathBuf>,
    #[arg(long, num_args = 1.., requires = "manifest")]
    pub rankings: Vec<PathBuf>,
    #[arg(long, default_value_t = crashfl_core::evalkit::DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short = 'n', long = "count", default_value_t = 20)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Crash-type shares, e.g. `SigAbrt=0.64,SigSegvNpe=0.26,SigSegvNonNpe=0.1`.
    #[arg(long)]
    pub mix: Option<String>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub rankings: Vec<PathBuf>,
    /// Transcripts written by `localize --trace-dir`.
    #[arg(long)]
    pub trace_dir: PathBuf,
    /// Judges per explanation; must be odd.
    #[arg(long, default_value_t = crashfl_core::explain::DEFAULT_JUDGES)]
    pub judges: usize,
    /// Ranked files judged per crash.
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    /// Summarize explanations with the model instead of concatenating them.
    #[arg(long)]
    pub llm_consolidate: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Environment lookup, injectable for tests.
pub type Env<'a> = &'a dyn Fn(&str) -> Option<String>;

pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, env: Env<'_>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
        }
    };
    match execute(cli.command, env) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error[{}]: {e}", e.code());
            EXIT_FATAL
        }
    }
}

pub fn execute(command: Command, env: Env<'_>) -> Result<u8, CliError> {
    match command {
        Command::Parse(a) => commands::parse(a),
        Command::Localize(a) => commands::localize(a, env),
        Command::Baseline(a) => commands::baseline(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Synth(a) => commands::synth(a),
        Command::Judge(a) => commands::judge(a, env),
    }
}
