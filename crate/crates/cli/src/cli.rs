use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gatecheck", version, about = "Two-stage evaluation of generated text")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration file (TOML key/value).
    #[arg(long, global = true, env = "GATECHECK_CONFIG")]
    pub config: Option<PathBuf>,
    /// Taxonomy file; the built-in taxonomy when absent.
    #[arg(long, global = true)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, global = true)]
    pub stage1_template: Option<PathBuf>,
    #[arg(long, global = true)]
    pub stage2_template: Option<PathBuf>,
    /// Seed for every random choice and for backend sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Mock script (JSONL) for the mock backend.
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    /// Chat-completions base URL for the HTTP backend.
    #[arg(long, global = true, env = "EVAL_BASE_URL")]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub timeout_ms: Option<u64>,
    /// Parse model output leniently instead of failing on malformed lines.
    #[arg(long, global = true)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Gate,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchModeArg {
    Gate,
    Full,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Principal,
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset against the schema and taxonomy.
    Validate {
        dataset: PathBuf,
        /// Fail on warnings too.
        #[arg(long)]
        strict: bool,
    },
    /// Run the cascade over a dataset and write outcomes JSONL.
    Evaluate {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        concurrency: Option<u64>,
        /// Send examples to a running service instead of a local backend.
        #[arg(long)]
        server: Option<String>,
        /// Remove stage-2 findings in categories stage 1 did not flag.
        #[arg(long)]
        drop_unflagged: bool,
    },
    /// Correlation and coverage metrics for an outcomes file.
    Metrics {
        dataset: PathBuf,
        outcomes: PathBuf,
        #[arg(long, value_enum, default_value = "sub")]
        level: LevelArg,
        /// Take gold sets and human scores from an annotation journal.
        #[arg(long)]
        journal: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Also write the JSON report here.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Latency benchmark.
    Bench {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: BenchModeArg,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        repetitions: u64,
        #[arg(long, default_value_t = 0)]
        warmup: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        concurrency: Option<u64>,
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Write supervised fine-tuning records for both stages.
    ExportSft {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded random split of a dataset.
    Split {
        dataset: PathBuf,
        /// Comma-separated ratios summing to 1.
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.2")]
        ratios: Vec<f64>,
        /// Comma-separated part names; part-N when absent.
        #[arg(long, value_delimiter = ',')]
        names: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Review session as `DATASET,OUTCOMES`.
        #[arg(long, value_name = "DATASET,OUTCOMES")]
        session: Option<String>,
        /// Annotation journal; next to the outcomes file when absent.
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Static review UI assets.
        #[arg(long)]
        ui: Option<PathBuf>,
        #[arg(long, default_value_t = gatecheck_service::DEFAULT_MAX_IN_FLIGHT)]
        max_in_flight: usize,
    },
    /// Write a synthetic dataset, mock script and config to get started.
    Demo {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        examples: usize,
        #[arg(long, default_value_t = 20)]
        clean: usize,
    },
    /// Talk to a running service.
    Remote {
        #[arg(long, env = "GATECHECK_SERVER", default_value = "http://127.0.0.1:8080")]
        server: String,
        #[command(subcommand)]
        action: RemoteAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum RemoteAction {
    Health,
    /// Gate one text.
    Gate {
        #[arg(long)]
        input: String,
        #[arg(long)]
        output: String,
    },
    /// Fully evaluate one text.
    Evaluate {
        #[arg(long)]
        input: String,
        #[arg(long)]
        output: String,
    },
    Metrics {
        #[arg(long, value_enum, default_value = "sub")]
        level: LevelArg,
    },
    /// Print the annotation journal.
    ExportJournal,
}
