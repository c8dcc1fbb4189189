//! Command-line front end: every run is a pure function of a JSON config,
//! flag overrides and the input files.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::{CliError, CliResult, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "uqkit", version, about = "Model, data and distributional uncertainty for image classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train K identically-shaped, differently-seeded networks.
    TrainEnsemble(Overrides),
    /// Train the supervised reconstruction autoencoder.
    TrainSae(Overrides),
    /// Misclassification detection: calibrate on validation, report on test.
    EvalMisclassified(Overrides),
    /// Out-of-distribution detection with the autoencoder (and an unknown-class bundle).
    EvalOod(Overrides),
    /// Ensemble spread across the values of one study axis.
    Study(Overrides),
    /// Penultimate-layer activations of the test set.
    ExportEmbeddings(Overrides),
}

impl Command {
    fn overrides(&self) -> &Overrides {
        match self {
            Command::TrainEnsemble(o)
            | Command::TrainSae(o)
            | Command::EvalMisclassified(o)
            | Command::EvalOod(o)
            | Command::Study(o)
            | Command::ExportEmbeddings(o) => o,
        }
    }
}

/// Validates the resolved config, then runs the command inside a worker pool
/// of the configured size. Returns the text to print on success.
pub fn execute(command: &Command) -> CliResult<String> {
    let cfg = RunConfig::resolve(command.overrides())?;
    cfg.seed()?;
    cfg.out()?;
    cfg.check_paths()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads()?)
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match command {
        Command::TrainEnsemble(_) => commands::train_ensemble(&cfg),
        Command::TrainSae(_) => commands::train_sae(&cfg),
        Command::EvalMisclassified(_) => commands::eval_misclassified(&cfg),
        Command::EvalOod(_) => commands::eval_ood(&cfg),
        Command::Study(_) => commands::study(&cfg),
        Command::ExportEmbeddings(_) => commands::export_embeddings(&cfg),
    })
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { error::EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("uqkit: {e}");
            e.exit_code()
        }
    }
}
