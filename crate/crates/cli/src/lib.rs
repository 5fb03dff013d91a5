//! Operator entry point: ingest data, run the service, ask one-off
//! questions, evaluate answer quality and inspect the queue.

pub mod commands;
pub mod config;
pub mod runtime;

use std::io::{self, Write};
use std::path::PathBuf;

use advisor_core::eval::{ScoringMode, DEFAULT_TOLERANCE};
use clap::{Parser, Subcommand};

use commands::{ask, eval, ingest, queue, serve};
use config::{Overrides, ServiceConfig, CONFIG_ENV};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_MISSING_FILE: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "advisor", version, about = "Energy-efficiency advisory service")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Directory holding the knowledge base, index, queue and conversations.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,

    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load documents and building data, then rebuild the index.
    Ingest {
        /// JSON-lines document corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory with buildings.csv and optionally readings.csv.
        #[arg(long)]
        buildings: Option<PathBuf>,
    },
    /// Run the chat gateway, email poller and workers until interrupted.
    Serve {
        /// Start even when nothing has been ingested.
        #[arg(long)]
        allow_empty: bool,
        #[arg(long)]
        workers: Option<usize>,
        /// Chat listen address, e.g. 127.0.0.1:7878.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Answer one question and print it.
    Ask { question: String },
    /// Score a question/answer pairs file and write reports.
    Eval {
        pairs: PathBuf,
        #[arg(long, default_value_t = ScoringMode::Strict)]
        mode: ScoringMode,
        /// Relative tolerance for numeric answers.
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Report directory (default: <data-dir>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect jobs, dead letters and ratings.
    Queue {
        #[command(subcommand)]
        command: QueueCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum QueueCommand {
    /// List every job with its status.
    Ls,
    /// Dead-lettered jobs.
    DeadLetter {
        #[command(subcommand)]
        command: ListOnly,
    },
    /// Expert ratings.
    Ratings {
        #[command(subcommand)]
        command: ListOnly,
    },
}

#[derive(Debug, Subcommand)]
pub enum ListOnly {
    Ls,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides {
            data_dir: self.data_dir.clone(),
            ..Overrides::default()
        };
        if let Command::Serve { workers, listen, .. } = &self.command {
            o.worker_count = *workers;
            o.chat_listen = listen.clone();
        }
        o
    }
}

/// Exit code for a failed command: 2 for a missing input file, 3 for a
/// provider failure, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        match cause.downcast_ref::<advisor_core::Error>() {
            Some(advisor_core::Error::File { source, .. }) if source.kind() == io::ErrorKind::NotFound => {
                return EXIT_MISSING_FILE
            }
            Some(advisor_core::Error::Provider { .. }) => return EXIT_PROVIDER,
            _ => {}
        }
    }
    EXIT_FAILURE
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<u8> {
    let cfg = ServiceConfig::load(cli.config.as_deref(), &cli.overrides())?;
    match &cli.command {
        Command::Ingest { corpus, buildings } => ingest::run(
            &cfg,
            &ingest::IngestArgs {
                corpus: corpus.clone(),
                buildings: buildings.clone(),
            },
            cli.json,
            out,
        ),
        Command::Serve { allow_empty, .. } => serve::run(
            &cfg,
            &serve::ServeArgs {
                allow_empty: *allow_empty,
            },
            out,
        ),
        Command::Ask { question } => ask::run(&cfg, question, cli.json, out),
        Command::Eval {
            pairs,
            mode,
            tolerance,
            out: report_dir,
        } => eval::run(
            &cfg,
            &eval::EvalArgs {
                pairs: pairs.clone(),
                mode: *mode,
                tolerance: *tolerance,
                out: report_dir.clone(),
            },
            cli.json,
            out,
        ),
        Command::Queue { command } => {
            let view = match command {
                QueueCommand::Ls => queue::QueueView::Jobs,
                QueueCommand::DeadLetter { .. } => queue::QueueView::DeadLetters,
                QueueCommand::Ratings { .. } => queue::QueueView::Ratings,
            };
            queue::run(&cfg, view, cli.json, out)
        }
    }
}
