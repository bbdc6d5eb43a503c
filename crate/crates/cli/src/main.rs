mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use micap::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "micap",
    version,
    about = "Multi-modal video captioning on synthetic clips"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset archive.
    GenerateData(GenerateArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Caption the evaluation split and score it.
    Evaluate(EvaluateArgs),
    /// Caption a single sample.
    Caption(CaptionArgs),
    /// Attention heatmaps and gradient saliency for one generated token.
    Explain(ExplainArgs),
    /// Dump pooled video/audio embeddings as JSON lines.
    ExportEmbeddings(ExportArgs),
    /// Train and evaluate every variant on one dataset.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    frames: Option<usize>,
    /// Frame size as HxW.
    #[arg(long)]
    size: Option<String>,
    /// Trailing samples assigned to the test split.
    #[arg(long, default_value_t = 0)]
    test_count: usize,
    #[arg(long)]
    references: Option<usize>,
    #[arg(long)]
    audio_len: Option<usize>,
}

/// Flags shared by `train` and `ablation`; each overrides the config file.
#[derive(Args, Clone, Default)]
struct TrainOverrides {
    /// JSON file mirroring the training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr_decoder: Option<f64>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    /// `constant` or `linear` (decay to zero over the run).
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    nce_weight: Option<f64>,
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// vision, audio, fusion or micap.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Loss log path; defaults to the checkpoint path with a `.log` extension.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Per-sample captions; defaults to the report path with a `.results.jsonl` extension.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    id: String,
    #[arg(long, default_value_t = 5)]
    beam: usize,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    id: String,
    /// Index into the generated caption.
    #[arg(long)]
    token: usize,
    #[arg(long)]
    out: PathBuf,
    /// `last` or a layer index.
    #[arg(long, default_value = "last")]
    layer: String,
    /// `mean`, `max` or a head index.
    #[arg(long, default_value = "mean")]
    heads: String,
    #[arg(long, default_value_t = 5)]
    beam: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::kind) {
        None => 1,
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Numeric) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => commands::generate_data(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Caption(a) => commands::caption(a),
        Command::Explain(a) => commands::explain(a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(a),
        Command::Ablation(a) => commands::ablation(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
