//! `pragcap` command-line pipeline: world generation, decoding, evaluation,
//! tradeoff sweeps, informativity tuning and ablations, all with
//! write-once, provenance-stamped outputs.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;
pub mod wiring;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pragcap_core::decoding::Method;

#[derive(Debug, Parser)]
#[command(name = "pragcap", version, about = "Pragmatic discriminative caption decoding")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand; they override the config file.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for decoding and evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub method: Option<Method>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub beam_width: Option<usize>,
    #[arg(long, global = true)]
    pub pool_size: Option<usize>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    /// Record per-step pools and survivors.
    #[arg(long, global = true)]
    pub trace: bool,
    /// Tune over the whole finest grid instead of refining coarse-to-fine.
    #[arg(long, global = true)]
    pub exhaustive_fine: bool,
    /// Scorer bridge endpoint (`tcp://host:port` or `exec:<command>`).
    #[arg(long, global = true)]
    pub bridge: Option<String>,
    /// Bridge endpoint serving the evaluative listener.
    #[arg(long, global = true)]
    pub eval_bridge: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// Maximize evaluative-listener accuracy.
    Informativity,
    /// Match a perplexity target (default: the informativity-tuned PICL perplexity).
    PplMatched,
    /// Match the mean of the base speaker's and tuned PICL's perplexities.
    MidPpl,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded toy world.
    GenWorld {
        /// Split label; the world seed derives from the global seed and this label.
        #[arg(long, default_value = "validation")]
        split: String,
        #[arg(long)]
        n_sets: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode every set of a manifest with one method.
    Decode {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode and score a manifest: retrieval accuracy and perplexity.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Take method and lambda from a `tune` output.
        #[arg(long)]
        tuning: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the one-row CSV summary here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Accuracy and perplexity over a lambda grid for several methods.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select lambda on a validation manifest.
    Tune {
        #[arg(long)]
        validation: PathBuf,
        #[arg(long, value_enum, default_value = "informativity")]
        objective: ObjectiveArg,
        #[arg(long)]
        target_ppl: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune PICL and its two ablations on validation, report test accuracy.
    Ablate {
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a toy world's scorers over stdin/stdout (bridge protocol v1).
    #[command(hide = true)]
    ServeToy {
        #[arg(long)]
        world: PathBuf,
    },
}

pub use commands::run;
