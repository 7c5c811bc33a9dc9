mod commands;
mod config;
mod providers;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "studykit",
    version,
    about = "Layout-aware chunking, study question generation and grading evaluation"
)]
pub struct Cli {
    /// TOML or JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub providers: ProviderArgs,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    /// `mock:SEED` runs fully offline with deterministic mock models.
    #[arg(long, global = true)]
    pub provider: Option<String>,

    #[arg(long, global = true, env = "EMBED_URL")]
    pub embed_url: Option<String>,

    #[arg(long, global = true, env = "EMBED_MODEL")]
    pub embed_model: Option<String>,

    #[arg(long, global = true, env = "GEN_URL")]
    pub gen_url: Option<String>,

    #[arg(long, global = true, env = "GEN_MODEL")]
    pub gen_model: Option<String>,

    #[arg(long, global = true, env = "GEN_API_KEY", hide_env_values = true, hide = true)]
    pub gen_api_key: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Type extracted blocks by their best-overlapping detector instance.
    Associate {
        #[arg(long)]
        blocks: Option<PathBuf>,
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Typed blocks, JSON Lines.
        #[arg(long)]
        out: PathBuf,
        /// Ground truth; with --report, writes a layout classification report.
        #[arg(long, requires = "report")]
        annotations: Option<PathBuf>,
        #[arg(long, requires = "annotations")]
        report: Option<PathBuf>,
    },
    /// Assign heading levels from heading heights.
    InferHeadings {
        /// Typed blocks from `associate`.
        #[arg(long)]
        blocks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the inferred height-to-level map as JSON.
        #[arg(long)]
        levels: Option<PathBuf>,
        #[arg(long, requires = "report")]
        annotations: Option<PathBuf>,
        #[arg(long, requires = "annotations")]
        report: Option<PathBuf>,
    },
    /// Split blocks into chunks.
    Chunk {
        /// Blocks with types and heading levels from `infer-headings`.
        #[arg(long)]
        blocks: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Strategy::Dla)]
        strategy: Strategy,
        #[arg(long)]
        max_tokens: Option<usize>,
        #[arg(long)]
        min_tokens: Option<usize>,
        #[arg(long, value_enum)]
        small_chunk: Option<SmallChunk>,
        /// Window size for the fixed strategy.
        #[arg(long)]
        window: Option<usize>,
        /// Pages per chunk for the page strategy.
        #[arg(long)]
        pages: Option<u32>,
    },
    /// Compare chunking strategies against annotated chunk boundaries.
    EvalChunking {
        #[arg(long)]
        blocks: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Report path; a CSV twin is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Assign each chunk its nearest topic.
    Classify {
        #[arg(long)]
        chunks: Option<PathBuf>,
        #[arg(long)]
        topics: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        z_threshold: Option<f64>,
        /// Ground truth for topic F1; needs --blocks.
        #[arg(long, requires = "blocks")]
        annotations: Option<PathBuf>,
        #[arg(long)]
        blocks: Option<PathBuf>,
    },
    /// Generate study questions for classified chunks.
    GenerateQuestions {
        #[arg(long)]
        chunks: Option<PathBuf>,
        #[arg(long)]
        topics: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Review sheet for manual assessment.
        #[arg(long)]
        review: Option<PathBuf>,
        /// Resume file; defaults to `<out>.checkpoint.jsonl`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        balanced: bool,
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        min_tokens: Option<usize>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Generate a grounded reference answer for every question.
    GenerateAnswers {
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        chunks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        review: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Download the combined grading benchmark and convert it to CSV.
    #[command(name = "fetch-asag2024")]
    FetchAsag2024 {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = studykit::grading::asag2024::DEFAULT_ROWS_URL)]
        url: String,
        /// Convert a local CSV or JSON Lines copy instead of downloading.
        #[arg(long)]
        from_local: Option<PathBuf>,
    },
    /// Grade every dataset entry.
    Grade {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// baseline, similarity, llm or remote:URL.
        #[arg(long)]
        grader: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Grading prompt for the llm grader.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Score predictions; writes `<report>.csv` and `<report>.txt`.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        predictions: Vec<PathBuf>,
        /// Output path without extension.
        #[arg(long)]
        report: PathBuf,
    },
    /// Layout and heading-level classification reports.
    Report {
        /// Blocks after `infer-headings`.
        #[arg(long)]
        blocks: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Text report; a CSV twin is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Dla,
    Page,
    Pages3,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SmallChunk {
    Merge,
    Delete,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<studykit::Error>() {
            if e.is_provider_failure() || matches!(e, studykit::Error::OutputParse { .. }) {
                return 2;
            }
        }
        if cause.downcast_ref::<studykit::ProviderError>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
