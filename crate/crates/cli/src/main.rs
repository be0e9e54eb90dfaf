//! `textground`: command-line front end for the curation pipeline, the
//! benchmark tools and the toy trainer.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 external client error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use textground_core::client::ClientError;
use textground_core::filter::AuditError;
use textground_core::io::pipeline::{OnAuditError, PipelineError};
use textground_core::metrics::EvalError;
use textground_core::target::{Order, Variant};

#[derive(Parser, Debug)]
#[command(name = "textground", version, about = "Text-grounded image corpus curation and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random choice; defaults to the config value or 0
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = one per core); never changes the output
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with known ground truth
    Synth(SynthArgs),
    /// Extract quoted spans from every caption
    Extract(InOut),
    /// Align quoted spans to OCR words and store the grounded spans
    Align(AlignArgs),
    /// Run the extract, align and three filter stages
    Filter(FilterArgs),
    /// Select the difficulty-stratified benchmark
    Stratify(StratifyArgs),
    /// Simulate OCR on a corpus from its grounded spans
    MockOcr(MockOcrArgs),
    /// Score hypothesis OCR against a benchmark
    Evaluate(EvaluateArgs),
    /// Serialize grounded spans into token targets
    BuildTargets(BuildTargetsArgs),
    /// Train the toy autoregressive model on the glyph task
    TrainToy(TrainToyArgs),
    /// Compose retrieval queries from a taxonomy and rank a candidate pool
    Mine(MineArgs),
    /// Run every stage and write corpus, benchmark, report and decisions
    RunPipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct InOut {
    /// Input corpus (JSONL)
    #[arg(long)]
    pub input: PathBuf,
    /// Output file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Fraction of samples given a defect that some filter should catch
    #[arg(long, default_value_t = 0.25)]
    pub defect_rate: f64,
    /// Shorthand for --defect-rate 0
    #[arg(long)]
    pub clean: bool,
}

#[derive(Args, Debug, Clone, Copy, Default)]
pub struct AlignFlags {
    #[arg(long)]
    pub partial_threshold: Option<f64>,
    #[arg(long)]
    pub fuzzy_threshold: Option<f64>,
    #[arg(long)]
    pub max_window_slack: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[command(flatten)]
    pub io: InOut,
    #[command(flatten)]
    pub align: AlignFlags,
    /// Also write the raw alignment of each sample (JSONL)
    #[arg(long)]
    pub alignments: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AuditFailure {
    Skip,
    Abort,
}

impl From<AuditFailure> for OnAuditError {
    fn from(a: AuditFailure) -> Self {
        match a {
            AuditFailure::Skip => OnAuditError::Skip,
            AuditFailure::Abort => OnAuditError::Abort,
        }
    }
}

#[derive(Args, Debug)]
pub struct AuditFlags {
    /// What to do with a sample whose audit keeps failing
    #[arg(long, value_enum)]
    pub on_audit_error: Option<AuditFailure>,
    /// Auditor program and arguments; the built-in rule-based auditor otherwise
    #[arg(long)]
    pub auditor: Option<String>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[command(flatten)]
    pub io: InOut,
    #[command(flatten)]
    pub align: AlignFlags,
    #[command(flatten)]
    pub audit: AuditFlags,
    /// Per-sample decisions (JSONL)
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    /// Stage report (JSON)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StratifyArgs {
    #[command(flatten)]
    pub io: InOut,
    /// Samples per difficulty level
    #[arg(long)]
    pub quota: Option<usize>,
    /// Also write corpus statistics (JSON)
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MockOcrArgs {
    #[command(flatten)]
    pub io: InOut,
    #[arg(long)]
    pub char_sub_rate: Option<f64>,
    #[arg(long)]
    pub box_jitter_px: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Benchmark manifest (JSON)
    #[arg(long)]
    pub bench: PathBuf,
    /// Corpus holding the benchmark samples
    #[arg(long)]
    pub corpus: PathBuf,
    /// Hypothesis OCR, one record per line
    #[arg(long)]
    pub hyp: PathBuf,
    /// Report (JSON); the table goes next to it with a `.txt` extension
    #[arg(long)]
    pub out: PathBuf,
    /// Image-text scorer program and arguments; CS is left empty otherwise
    #[arg(long)]
    pub scorer: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Text,
    Bbox,
    Both,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Text => Variant::TextOnly,
            VariantArg::Bbox => Variant::BBoxOnly,
            VariantArg::Both => Variant::TextAndBBox,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OrderArg {
    Pre,
    Post,
}

impl From<OrderArg> for Order {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Pre => Order::PreImage,
            OrderArg::Post => Order::PostImage,
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildTargetsArgs {
    #[command(flatten)]
    pub io: InOut,
    #[arg(long, value_enum, default_value = "both")]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value = "post")]
    pub order: OrderArg,
    /// Placeholder image tokens per sample
    #[arg(long, default_value_t = 64)]
    pub image_tokens: usize,
    /// Size of the image token vocabulary
    #[arg(long, default_value_t = 16384)]
    pub image_vocab: u32,
    /// Vocabulary layout (JSON); defaults to `<out>.vocab.json`
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    #[arg(long, value_enum, default_value = "both")]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value = "post")]
    pub order: OrderArg,
    /// Weight of the text loss
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Examples per step; 0 trains on the full task every step
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Examples in the glyph task
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Directory for `loss.csv` and `summary.json`
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    /// Taxonomy (`.toml` or `.json`)
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub per_subtopic: usize,
    /// Queries (JSONL)
    #[arg(long)]
    pub out: PathBuf,
    /// Candidate pool (JSONL) to rank against the queries
    #[arg(long, requires = "matches")]
    pub pool: Option<PathBuf>,
    /// Ranked matches (JSONL)
    #[arg(long, requires = "pool")]
    pub matches: Option<PathBuf>,
    /// Matches kept per query
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub min_side: Option<u32>,
    #[arg(long)]
    pub min_ocr_words: Option<usize>,
    /// Query expander program and arguments; templates only otherwise
    #[arg(long)]
    pub expander: Option<String>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Input corpus (JSONL)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub align: AlignFlags,
    #[command(flatten)]
    pub audit: AuditFlags,
    /// Benchmark samples per difficulty level
    #[arg(long)]
    pub quota: Option<usize>,
}

/// A usage or configuration error (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<Usage>()) {
        return 1;
    }
    let client = err.chain().any(|e| {
        e.is::<ClientError>()
            || e.is::<AuditError>()
            || e.is::<EvalError>()
            || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Audit { .. }))
    });
    if client {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
