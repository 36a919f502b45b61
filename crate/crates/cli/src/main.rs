//! `vtmm`: build datasets, train the matching network, score and evaluate
//! classes, correct baseline scores, and serve the workbench API.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vtmm_core::{ErrorKind, ScoreMode, Split};

#[derive(Parser, Debug)]
#[command(
    name = "vtmm",
    version,
    about = "Video-text matching workbench for zero-shot action recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where scoring inputs come from. With `--project`, unset flags fall back to
/// the project manifest and its active annotation revision.
#[derive(Args, Debug, Clone, Default)]
pub struct Inputs {
    #[arg(long)]
    pub project: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Annotation file; overrides the project's revision.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed sentence vectors; defaults to the project's source, then
    /// `<dataset>/text_embeddings.json`, then the hash stub.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Use the hash-seeded stub encoder even if a vector file exists.
    #[arg(long, conflicts_with = "embeddings")]
    pub stub_embeddings: bool,
    /// Annotation revision to use instead of the active one.
    #[arg(long, requires = "project", conflicts_with = "annotations")]
    pub revision: Option<u64>,
    #[arg(long)]
    pub mode: Option<ScoreMode>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
    /// Desk values with any of the override flags applied.
    Custom,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationArg {
    Relu,
    Identity,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with captions, text vectors and annotations.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        videos_per_class: usize,
        #[arg(long, default_value_t = 3)]
        captions_per_video: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Validate the feature files under `<dataset>/videos` and write `index.json`.
    Ingest {
        #[arg(long)]
        dataset: PathBuf,
        /// GloVe text file for object names; required when any file holds raw frames.
        #[arg(long, requires = "hierarchy")]
        glove: Option<PathBuf>,
        /// JSON object mapping an object label to its parent label.
        #[arg(long, requires = "glove")]
        hierarchy: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on training-split captions and write a checkpoint plus loss CSV.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `<dataset>/captions.json`.
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, conflicts_with = "embeddings")]
        stub_embeddings: bool,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
        activation: ActivationArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the checkpoint path with a `.loss.csv` suffix.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences on random small networks.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = vtmm_core::net::gradcheck::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = vtmm_core::net::gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the ranked classes for one video.
    Classify {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        video: String,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate standalone classification and write a JSON report.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        /// Omit to evaluate every labelled video.
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Print a human-readable table instead of JSON.
        #[arg(long)]
        text: bool,
    },
    /// Add lambda-weighted annotation scores to baseline scores and evaluate.
    Correct {
        #[command(flatten)]
        inputs: Inputs,
        /// `{ video_id: { class: score } }`
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        /// Softmax-normalise each video's baseline scores first.
        #[arg(long)]
        softmax: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        text: bool,
    },
    /// Serve the HTTP API for a project.
    Serve {
        #[arg(long)]
        project: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Create a project (or update an existing one's paths and settings).
    Init {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, conflicts_with = "embeddings")]
        stub_embeddings: bool,
        /// Commit this annotation file as a new revision.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        mode: Option<ScoreMode>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        softmax: Option<bool>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Inspect or extend a project's annotation history.
    Revisions {
        #[arg(long)]
        project: PathBuf,
        #[command(subcommand)]
        action: RevisionAction,
    },
}

#[derive(Subcommand, Debug)]
enum RevisionAction {
    List,
    /// Print one revision's annotation snapshot.
    Show {
        id: u64,
    },
    Diff {
        from: u64,
        to: u64,
    },
    Commit {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "")]
        note: String,
    },
}

pub const EXIT_THRESHOLD: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_CONTRACT: u8 = 4;
pub const EXIT_NOT_FOUND: u8 = 5;
pub const EXIT_CONFLICT: u8 = 6;

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Io => EXIT_IO,
        ErrorKind::Contract => EXIT_CONTRACT,
        ErrorKind::NotFound => EXIT_NOT_FOUND,
        ErrorKind::Conflict => EXIT_CONFLICT,
    }
}

/// Classifies a failure and prints it to stderr as one JSON object.
fn report_failure(err: &anyhow::Error) -> u8 {
    let (kind, diagnostics) = match err.downcast_ref::<vtmm_core::Error>() {
        Some(e) => {
            let diags = match e {
                vtmm_core::Error::ValidationFailed(d) => d.clone(),
                _ => Vec::new(),
            };
            (e.kind(), diags)
        }
        None if err.downcast_ref::<std::io::Error>().is_some() => (ErrorKind::Io, Vec::new()),
        None => (ErrorKind::Contract, Vec::new()),
    };
    let body = serde_json::json!({
        "error": {
            "kind": kind,
            "message": format!("{err:#}"),
            "diagnostics": diagnostics,
        }
    });
    eprintln!("{body}");
    exit_code(kind)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VTMM_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => ExitCode::from(report_failure(&err)),
    }
}
