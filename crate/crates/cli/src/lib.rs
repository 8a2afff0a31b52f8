//! Command-line front end. `run` parses arguments, dispatches one
//! subcommand and maps failures to exit codes: 0 success, 1 usage or
//! configuration error, 2 data error, 3 divergence or failed gradient check.

pub mod artifacts;
pub mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use rpr::corpus::FieldSchema;
use rpr::model::Variant;

use commands::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Environment variable naming the default cache directory.
pub const CACHE_ENV: &str = "RPR_CACHE_DIR";

#[derive(Debug)]
pub struct Usage(pub String);

#[derive(Debug)]
pub struct Diverged(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Diverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
impl std::error::Error for Diverged {}

#[derive(Parser, Debug)]
#[command(name = "rpr", version, about = "Review polarity-wise rating prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ModelFlags {
    /// TOML training configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// base, coarse_grained, no_polarity, uniform_importance or no_offset
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    clip_predictions: bool,
    #[arg(long)]
    freeze_embeddings: bool,
    /// Update one parameter group per epoch instead of all four per batch
    #[arg(long)]
    epoch_schedule: bool,
}

impl ModelFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            variant: self.variant,
            clip_predictions: self.clip_predictions,
            freeze_embeddings: self.freeze_embeddings,
            epoch_schedule: self.epoch_schedule,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic review corpus with a planted model
    Synth {
        /// TOML synthetic-corpus configuration
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest reviews, split, build documents, vocabulary and word vectors
    Prepare {
        /// Newline-delimited JSON reviews
        #[arg(long)]
        data: PathBuf,
        /// amazon or yelp field names
        #[arg(long, default_value = "amazon")]
        schema: String,
        /// Whitespace-separated word vector file
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Cache directory (defaults to $RPR_CACHE_DIR)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a prepared cache and write a checkpoint and history
    Train {
        #[command(flatten)]
        flags: ModelFlags,
        /// Cache directory (defaults to $RPR_CACHE_DIR)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report validation and test error of a checkpoint
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        flags: ModelFlags,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Break one prediction into per-aspect importance and scores
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        /// Top words listed per aspect (0 disables)
        #[arg(long, default_value_t = 5)]
        top_words: usize,
        #[command(flatten)]
        flags: ModelFlags,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the base model and the four variants on one split
    Ablate {
        #[command(flatten)]
        flags: ModelFlags,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the gradients on a toy instance
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Grid search over factors, aspect counts, learning rates and batch sizes
    Sweep {
        #[command(flatten)]
        flags: ModelFlags,
        /// TOML grid; defaults to the full reference ranges
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: rpr::Error| e.to_string())
}

fn cache_dir(explicit: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    explicit
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .ok_or_else(|| usage(format!("no cache directory: pass --data or set {CACHE_ENV}")))
}

fn dispatch(command: Command, argv: &[String]) -> anyhow::Result<()> {
    match command {
        Command::Synth { config, seed, out } => synth(&SynthArgs { config, seed, out }, argv),
        Command::Prepare { data, schema, embeddings, config, seed, out } => {
            let schema = FieldSchema::by_name(&schema).ok_or_else(|| usage(format!("unknown schema `{schema}`")))?;
            let out = cache_dir(out)?;
            prepare(&PrepareArgs { data, schema, embeddings, config, seed, out }, argv)
        }
        Command::Train { flags, data, out } => {
            let args = TrainArgs { overrides: flags.overrides(), config: flags.config, data: cache_dir(data)?, out };
            train_cmd(&args, argv)
        }
        Command::Evaluate { checkpoint, flags, data, out } => {
            let args = EvalArgs { checkpoint, overrides: flags.overrides(), config: flags.config, data: cache_dir(data)?, out };
            evaluate_cmd(&args, argv)
        }
        Command::Explain { checkpoint, user, item, top_words, flags, data, out } => {
            let eval = EvalArgs { checkpoint, overrides: flags.overrides(), config: flags.config, data: cache_dir(data)?, out };
            explain(&ExplainArgs { eval, user, item, top_words }, argv)
        }
        Command::Ablate { flags, data, out } => {
            let args = GridArgs { overrides: flags.overrides(), config: flags.config, data: cache_dir(data)?, out };
            ablate(&args, argv)
        }
        Command::Gradcheck { seed, variant } => gradcheck(seed, variant).map(|_| ()),
        Command::Sweep { flags, grid, data, out } => {
            let args = GridArgs { overrides: flags.overrides(), config: flags.config, data: cache_dir(data)?, out };
            sweep(&args, grid.as_deref(), argv)
        }
    }
}

fn library_code(e: &rpr::Error) -> i32 {
    match e {
        rpr::Error::Config(_) => EXIT_USAGE,
        rpr::Error::Divergence { .. } | rpr::Error::Oracle { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

/// Exit code for a failed command, from the first classifiable cause.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rpr::Error>() {
            return library_code(e);
        }
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if cause.is::<Diverged>() {
            return EXIT_DIVERGENCE;
        }
    }
    EXIT_DATA
}

/// Runs one command line (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = e.print();
            } else {
                eprintln!("{e}");
                eprintln!("{}", Cli::command().render_help());
            }
            return code;
        }
    };
    let shown: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &shown) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
