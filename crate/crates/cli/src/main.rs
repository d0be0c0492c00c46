mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetsed::types::Stage;

/// Environment variable naming the default root for command outputs.
pub const OUTPUT_ROOT_ENV: &str = "HETSED_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "hetsed", version, about = "Sound event detection on heterogeneous datasets at desk scale")]
struct Cli {
    /// Worker threads for ensemble members and ablation arms.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment TOML file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the global and corpus seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location; defaults to a directory under $HETSED_OUTPUT_ROOT
    /// (or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus and write its labels and hash.
    SynthData(Common),
    /// Train one stage of one model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage: Stage,
        /// Ensemble member index; omit for the distilled model.
        #[arg(long)]
        member: Option<usize>,
        /// Checkpoint to start from (required for second stages).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Pseudo-label store directory.
        #[arg(long)]
        pseudo: Option<PathBuf>,
    },
    /// Fuse checkpoints into a pseudo-label store over all training clips.
    PseudoLabel {
        #[command(flatten)]
        common: Common,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Tune class-wise SEBB parameters on the validation split.
    PostprocTune {
        #[command(flatten)]
        common: Common,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Score checkpoints (fused when several) on the test splits.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Tuned SEBB parameters; median filtering is used otherwise.
        #[arg(long)]
        sebb: Option<PathBuf>,
        #[arg(long, default_value = "system")]
        name: String,
    },
    /// Run both iterations end to end.
    Pipeline(Common),
    /// Run the baseline and one arm per flag, then tabulate them.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Ablation flag such as "-MAESTRO" or "+Pseudo Loss"; repeatable.
        #[arg(long = "flag", allow_hyphen_values = true)]
        flags: Vec<String>,
        /// Run one arm per known flag.
        #[arg(long)]
        all_flags: bool,
    },
    /// Regenerate the report CSV of a finished pipeline run.
    Report {
        /// Pipeline output directory.
        #[arg(long)]
        run: PathBuf,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
