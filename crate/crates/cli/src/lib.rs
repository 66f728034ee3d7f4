//! The `aimlab` command line: argument parsing, run directories, reports and
//! plots around the library.

pub mod commands;
pub mod plots;
pub mod run_dir;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use run_dir::{RunManifest, Timing, MANIFEST, RUN_DIR_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "aimlab", version, about = "Adversarial information maximization for response generation, at desk scale")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random choice; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML training config; defaults apply to missing keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory. Defaults to `$AIMLAB_RUN_DIR/<command>-seed<seed>`,
    /// or `runs/...` when the variable is unset.
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Seq2seq,
    Cgan,
    Aim,
    Daim,
}

impl From<Mode> for aimlab::objectives::Objective {
    fn from(m: Mode) -> Self {
        use aimlab::objectives::Objective;
        match m {
            Mode::Seq2seq => Objective::Seq2seq,
            Mode::Cgan => Objective::Cgan,
            Mode::Aim => Objective::Aim,
            Mode::Daim => Objective::Daim,
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// TSV corpus (`source<TAB>target` per line). Without it the config's
    /// synthetic task is sampled.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Seed of the train/valid/test split and of synthetic sampling; defaults to --seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MLE pretraining of the forward and backward generators.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        /// Continue from a pretraining checkpoint.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Stop after this many updates (the run can be resumed).
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Adversarial training (cGAN, AIM or DAIM), or continued MLE for seq2seq.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Pretrained (or partially trained adversarial) checkpoint to start from.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Decode the test split and score it.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Word vectors for the Greedy, Average and Extreme metrics.
        #[arg(long, value_name = "FILE")]
        emb: Option<PathBuf>,
        /// Sample responses instead of greedy decoding.
        #[arg(long)]
        sample: bool,
    },
    /// Respond to one source per line of an input file.
    Generate {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        sample: bool,
    },
    /// MMI-bidi reranking of beam candidates.
    Rerank {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Backward-score weight in [0, 1]; chosen by validation BLEU when absent.
        #[arg(long)]
        weight: Option<f64>,
        #[arg(long, value_name = "FILE")]
        emb: Option<PathBuf>,
    },
    /// Score a hypothesis file against a reference file, line by line.
    Metrics {
        #[arg(long, value_name = "FILE")]
        hyp: PathBuf,
        #[arg(long = "ref", value_name = "FILE")]
        reference: PathBuf,
        #[arg(long, value_name = "FILE")]
        emb: Option<PathBuf>,
    },
    /// Sample a corpus from the config's synthetic task.
    Synth {
        /// Number of pairs; defaults to the config's `synthetic_pairs`.
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Finite-difference gradient checks and the estimator variance probe.
    Gradbench,
    /// Run the oracle and invariant suite.
    Selftest {
        /// Comma-separated check ids (1-9); all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Generate { .. } => "generate",
            Command::Rerank { .. } => "rerank",
            Command::Metrics { .. } => "metrics",
            Command::Synth { .. } => "synth",
            Command::Gradbench => "gradbench",
            Command::Selftest { .. } => "selftest",
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code: 0 on success, 1 for bad input or usage, 2 for internal failures
/// (including failed self-test checks).
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| commands::dispatch(&cli, &argv)));
    match outcome {
        Ok(Ok(commands::Outcome::Success)) => EXIT_OK,
        Ok(Ok(commands::Outcome::ChecksFailed)) => EXIT_INTERNAL,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                EXIT_USER
            } else {
                EXIT_INTERNAL
            }
        }
        Err(_) => {
            eprintln!("error: internal failure (panic)");
            EXIT_INTERNAL
        }
    }
}
