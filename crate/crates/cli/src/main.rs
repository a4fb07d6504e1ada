mod commands;
mod failure;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::{json, Value};

/// Version of every JSON document printed with `--json`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "fieldrag",
    version,
    about = "Staged retrieval-augmented question answering with deterministic citations",
    after_help = "Exit codes: 0 success, 1 user error, 2 provider or transport error, 3 internal error."
)]
pub struct Cli {
    /// Configuration file (TOML). Built-in defaults apply when absent.
    #[arg(long, global = true, env = "FIELDRAG_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every mock provider.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Use deterministic offline stand-ins for generation, embedding, search and fetch,
    /// and freeze the clock.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Vector store file.
    #[arg(long, global = true, default_value = "fieldrag.store", value_name = "PATH")]
    pub store: PathBuf,
    /// JSON file of canned search results and page bodies, used instead of live search.
    #[arg(long, global = true, value_name = "PATH")]
    pub web_fixtures: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer a question through all six stages.
    Ask(AskArgs),
    /// Chunk, embed and add a corpus JSONL file to the store.
    Ingest(IngestArgs),
    /// Dense top-k search over the store.
    Search(SearchArgs),
    /// Attach citation markers to an answer from an evidence file.
    Cite(CiteArgs),
    /// Summarize and compare annotated score files.
    Eval(EvalArgs),
    /// Collect a corpus with the configured collector agents.
    Crawl(CrawlArgs),
    /// Print the configuration after defaults and file values are merged.
    PrintEffectiveConfig,
    /// Inspect the domain-agent catalogue.
    Agents {
        #[command(subcommand)]
        command: AgentsCommand,
    },
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// The question; several words are joined with spaces.
    #[arg(required = true, num_args = 1.., value_name = "QUERY")]
    pub query: Vec<String>,
    /// Skip the web arm.
    #[arg(long)]
    pub no_web: bool,
    /// Skip the database arm.
    #[arg(long)]
    pub no_db: bool,
    /// Append stage and call telemetry here (overrides `telemetry.path`).
    #[arg(long, value_name = "PATH")]
    pub telemetry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus JSONL file (one object with url, title, content per line).
    #[arg(value_name = "CORPUS")]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(required = true, num_args = 1.., value_name = "QUERY")]
    pub query: Vec<String>,
    /// Results to return.
    #[arg(short, long, default_value_t = 3)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct CiteArgs {
    /// Plain-text answer.
    #[arg(long, value_name = "PATH")]
    pub answer: PathBuf,
    /// Evidence as a JSON array or JSONL of {origin, doc_id, chunk_id, text, url, title}.
    #[arg(long, value_name = "PATH")]
    pub evidence: PathBuf,
    /// Similarity threshold (overrides `citation.threshold`).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Report citation counts over a threshold grid instead of citing.
    #[arg(long, value_name = "LO:HI:STEPS", num_args = 0..=1, default_missing_value = "0.50:0.95:10")]
    pub sweep: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score JSONL: {query_id, system, answer_score, citation_score?} per line.
    #[arg(value_name = "SCORES")]
    pub scores: PathBuf,
    /// Compare two systems on composite scores.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Option<Vec<String>>,
    /// Answer weight in the composite (overrides `scoring.lambda_weight`).
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CrawlArgs {
    /// Corpus JSONL to append to; the ledger and agent memory live beside it.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Candidates to process across all agents.
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    /// Continue an existing corpus, ledger and agent memory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum AgentsCommand {
    /// Count, per agent, the sub-queries it matched in a telemetry log.
    Lint {
        #[arg(value_name = "TELEMETRY")]
        log: PathBuf,
    },
}

/// What a command prints on success.
pub struct Output {
    pub text: String,
    pub json: Value,
}

fn with_schema(mut value: Value) -> Value {
    if let Value::Object(map) = &mut value {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    value
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::new()
        .parse_filters(&std::env::var("RUST_LOG").unwrap_or_else(|_| level.to_string()))
        .format_timestamp(None)
        .init();

    let result = commands::dispatch(&cli);
    let mut stdout = std::io::stdout().lock();
    match result {
        Ok(out) => {
            let printed = if cli.json {
                let body = serde_json::to_string_pretty(&with_schema(out.json)).expect("JSON values serialize");
                writeln!(stdout, "{body}")
            } else if out.text.is_empty() {
                Ok(())
            } else if out.text.ends_with('\n') {
                write!(stdout, "{}", out.text)
            } else {
                writeln!(stdout, "{}", out.text)
            };
            match printed {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: cannot write output: {e}");
                    ExitCode::from(3)
                }
            }
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            if cli.json {
                let body = with_schema(json!({
                    "error": {
                        "class": failure.class(),
                        "message": failure.message(),
                        "exit_code": failure.code(),
                    }
                }));
                let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&body).expect("JSON values serialize"));
            }
            ExitCode::from(failure.code())
        }
    }
}
