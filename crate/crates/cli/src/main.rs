mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::SharedArgs;

#[derive(Debug, Parser)]
#[command(
    name = "contextqa",
    version,
    about = "Retrieval-augmented multiple-choice QA and evaluation"
)]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed every corpus section and write the vector store.
    Ingest {
        /// Also write the store as CSV (id, title, heading, embedding).
        #[arg(long)]
        export: Option<std::path::PathBuf>,
    },
    /// Answer one question against the store.
    Ask {
        /// Question text; trailing lines like `a. 5` are read as choices.
        #[arg(long, conflicts_with = "id")]
        question: Option<String>,
        /// Question id from --test.
        #[arg(long)]
        id: Option<u32>,
        /// Context budget in tokens; 0 asks without context.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Score the test under one condition.
    Eval {
        /// Context budget in tokens; 0 evaluates without context.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Score the test under several budgets, preceded by the no-context baseline.
    Sweep {
        /// Comma-separated budgets.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        /// Skip the no-context baseline.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Compare a question with a modified copy, or bullets with comma-joined context.
    Ablate {
        #[arg(long, value_enum)]
        variant: commands::VariantArg,
        /// Question id from --test (choice variants).
        #[arg(long)]
        id: Option<u32>,
        /// Replacement choice for edit-choice, as `label=text`.
        #[arg(long)]
        edit: Option<String>,
        /// Context budget in tokens.
        #[arg(long)]
        budget: Option<usize>,
    },
}

/// The error chain on one line, skipping causes whose text a previous message
/// already includes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = config::RunConfig::resolve(&cli.shared)
        .map_err(anyhow::Error::from)
        .and_then(|cfg| match cli.command {
            Command::Ingest { export } => commands::ingest(&cfg, export.as_deref()),
            Command::Ask { question, id, budget } => commands::ask(&cfg, question.as_deref(), id, budget),
            Command::Eval { budget } => commands::eval(&cfg, budget),
            Command::Sweep { budgets, no_baseline } => commands::sweep(&cfg, budgets, !no_baseline),
            Command::Ablate {
                variant,
                id,
                edit,
                budget,
            } => commands::ablate(&cfg, variant, id, edit.as_deref(), budget),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(error::exit_code(&err))
        }
    }
}
