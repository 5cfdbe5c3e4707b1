//! Command line front end: corpus generation, two-phase training,
//! evaluation, gradient checking, recall, and slot-weight interpolation.

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "memalign",
    version,
    about = "Memory-based face-voice alignment experiments"
)]
pub(crate) struct Cli {
    /// JSON run-configuration file; command line flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Base seed override for every derived random stream.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Suppress progress notes and warnings.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub(crate) enum Command {
    /// Generate a synthetic paired-embedding corpus directory.
    Gen {
        /// Directory receiving face.xmeb, voice.xmeb, and corpus.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Train the decoder alone against the ground-truth renderer.
    Pretrain {
        /// Corpus directory produced by gen.
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,

        /// Output model document.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,

        /// Override the configured number of optimization steps.
        #[arg(long, value_name = "N")]
        steps: Option<usize>,

        /// Loss curve CSV (default: the model path with a losses.csv extension).
        #[arg(long, value_name = "FILE")]
        loss_csv: Option<PathBuf>,
    },

    /// Train the face conditioner and decoder on the mixed objective.
    Train {
        /// Corpus directory produced by gen.
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,

        /// Output model document.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,

        /// Pretrained decoder model document.
        #[arg(long, value_name = "FILE", conflicts_with = "no_pretrain")]
        pretrained: Option<PathBuf>,

        /// Override the configured number of optimization steps.
        #[arg(long, value_name = "N")]
        steps: Option<usize>,

        /// Drop the inter-speaker loss term.
        #[arg(long)]
        no_inter: bool,

        /// Replace the memory module with a plain face projection.
        #[arg(long)]
        no_mfva: bool,

        /// Start the decoder from random initialization.
        #[arg(long)]
        no_pretrain: bool,

        /// Loss curve CSV (default: the model path with a losses.csv extension).
        #[arg(long, value_name = "FILE")]
        loss_csv: Option<PathBuf>,
    },

    /// Convert held-out speakers and compute the objective metrics.
    Eval {
        /// Trained model document.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,

        /// Corpus directory produced by gen.
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,

        /// Output JSON report.
        #[arg(long, value_name = "FILE")]
        report: PathBuf,

        /// Extraction mode: embedding or output.
        #[arg(long, value_name = "MODE")]
        mode: Option<String>,

        /// Optional CSV of per-pair cosine similarities.
        #[arg(long, value_name = "FILE")]
        pairs_csv: Option<PathBuf>,
    },

    /// Compare analytic loss gradients against finite differences.
    Gradcheck {
        /// Central difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,

        /// Maximum tolerated relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,

        /// Random configurations per loss term.
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },

    /// Blend the slot weights of two faces and trace recalled embeddings.
    Interp {
        /// Trained model document with a memory module.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,

        /// Corpus directory holding face.xmeb and voice.xmeb.
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,

        /// First endpoint face as SPEAKER:ENTITY.
        #[arg(long, value_name = "SPK:ENT")]
        face_a: String,

        /// Second endpoint face as SPEAKER:ENTITY.
        #[arg(long, value_name = "SPK:ENT")]
        face_b: String,

        /// Number of interpolation rows over [0, 1].
        #[arg(long, default_value_t = 11)]
        steps: usize,

        /// CSV output path (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },

    /// Recall slot weights and a voice embedding for one face.
    Recall {
        /// Trained model document with a memory module.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,

        /// Face source as ARCHIVE#SPEAKER:ENTITY.
        #[arg(long, value_name = "SRC")]
        face_embedding: String,

        /// CSV output path (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; usage mistakes are
            // configuration errors.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
