//! Command-line driver: benchmark generation, source pretraining, style bank
//! construction, adaptation, evaluation and augmentation statistics export.
//!
//! Exit codes: 0 on success, 2 for usage or input errors, 3 for numeric
//! failures during training.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sida_core::SidaError;

pub use config::{RunConfig, DEFAULT_EXTRACTOR_SEED};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sida", version, about = "Zero-shot style adaptation on a procedural benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

macro_rules! overrides {
    ($($field:ident => $key:literal, $help:literal;)*) => {
        /// Settings shared by all commands. Each one may also come from `--config`.
        #[derive(Debug, Default, Clone, Args)]
        pub struct Overrides {
            /// File of `key=value` lines (`#` starts a comment); flags take precedence.
            #[arg(long, global = true, value_name = "FILE")]
            pub config: Option<PathBuf>,
            $(
                #[doc = $help]
                #[arg(long = $key, global = true, value_name = "VALUE")]
                pub $field: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(($key, v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

overrides! {
    seed => "seed", "Seed for data generation, batch sampling and augmentation [default: 0]";
    extractor_seed => "extractor-seed", "Seed of the frozen feature extractor [default: 20954]";
    n_source => "n-source", "Source training images [default: 200]";
    n_val => "n-val", "Source validation images [default: 50]";
    n_target_per_domain => "n-target-per-domain", "Target test images per domain [default: 50]";
    n_bank => "n-bank", "Synthetic bank images per domain [default: 3]";
    batch_size => "batch-size", "Batch size [default: 8]";
    iters => "iters", "Training iterations [default: 2000]";
    lr => "lr", "Base learning rate [default: 0.01]";
    momentum => "momentum", "SGD momentum [default: 0.9]";
    weight_decay => "weight-decay", "Weight decay [default: 0.001]";
    poly_power => "poly-power", "Polynomial schedule power [default: 0.9]";
    tau_ent => "tau-ent", "Mean-entropy threshold; inf disables weighting [default: 1]";
    noise_std => "noise-std", "Std of the style and source noise [default: 0.075]";
    patches => "patches", "Patch grid size m [default: 3]";
    lambda => "lambda", "Mixing ratio policy: uniform|main-only [default: uniform]";
    entropy_from => "entropy-from", "Classifier used for entropy: current|frozen [default: current]";
    weight_scope => "weight-scope", "Entropy weight per batch or per item: batch|item [default: batch]";
    n => "n", "Samples written by augment-dump [default: 8]";
}

impl Overrides {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.pairs() {
            cfg.set(k, v)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the procedural benchmark (source, four target domains, bank images).
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Replace a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the classifier head on clean source features.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract style entries from the bank images of every domain.
    BuildBank {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a pretrained head toward one target domain.
    Adapt {
        #[arg(long)]
        data: PathBuf,
        /// Bank file or a directory holding `bank.sidb`.
        #[arg(long)]
        bank: PathBuf,
        /// Checkpoint file or a directory holding `classifier.sidc`.
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report per-class IoU and mIoU of a checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `source` (validation split), a target domain name, or `all`. Repeatable.
        #[arg(long, value_delimiter = ',', default_value = "all")]
        domain: Vec<String>,
        /// Output directory for `report.csv`.
        #[arg(long)]
        report: PathBuf,
    },
    /// Export channel statistics of source, bank and stylized features.
    AugmentDump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Maps an error chain to an exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let runtime = err
        .chain()
        .filter_map(|e| e.downcast_ref::<SidaError>())
        .any(SidaError::is_runtime);
    if runtime {
        EXIT_RUNTIME
    } else {
        EXIT_INPUT
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
