mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safn_core::error::ErrorCategory;

#[derive(Parser, Debug)]
#[command(name = "safn", version, about = "Speaker-adaptive acoustic-to-articulatory inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output location (parent of run directories, or the target directory
    /// for `synth` and `convert`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// S1, S2, S3 or S4.
    #[arg(long)]
    pub scenario: Option<String>,
    /// baseline, safn-s, safn-a, safn-s-a, safn, or `all` for eval.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub target_speaker: Option<String>,
    /// Config override, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Corpus directory (holding manifest.txt).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// MFCC settings file (TOML) replacing `frontend.mfcc`.
    #[arg(long)]
    pub mfcc_config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert an EST-track corpus into interchange files plus a manifest.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// Corpus name; also selects a built-in channel map (mocha, mngu0).
        #[arg(long)]
        name: String,
        /// `raw = canonical` channel map file.
        #[arg(long)]
        channel_map: Option<PathBuf>,
        /// Speaker id for files not grouped in speaker subdirectories.
        #[arg(long)]
        speaker: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate the synthetic parallel corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the speech decomposition network on audio features.
    PretrainSdn {
        #[command(flatten)]
        common: Common,
    },
    /// Train an inversion model for a scenario and variant.
    Train {
        /// Pretrained SDN checkpoint (otherwise pretrained in-process).
        #[arg(long)]
        sdn: Option<PathBuf>,
        /// Training checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Adapt a generic model to the target speaker (scenario S3).
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score checkpoints on the test split, or train and score variants.
    Eval {
        /// Checkpoint to score; repeatable. Without one, each requested
        /// variant is trained from scratch first.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Also print CSV.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Predict lip and tongue trajectories for a WAV, utterance or feature file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render SVG figures from reports or from a checkpoint's predictions.
    Plot {
        /// Metrics report (TOML) for the CC bar chart; repeatable.
        #[arg(long)]
        report: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Utterance id for the trajectory overlay.
        #[arg(long)]
        utterance: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic and finite-difference gradients on downsized models.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<safn_core::Error>() {
            return match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            };
        }
    }
    3
}

/// Joins the error chain, dropping causes a parent message already quotes.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !last.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert {
            input,
            name,
            channel_map,
            speaker,
            common,
        } => commands::convert(&common, &input, &name, channel_map.as_deref(), speaker),
        Command::Synth { common } => commands::synth(&common),
        Command::PretrainSdn { common } => commands::pretrain_sdn(&common),
        Command::Train { sdn, resume, common } => commands::train(&common, sdn.as_deref(), resume.as_deref()),
        Command::Finetune { checkpoint, common } => commands::finetune(&common, &checkpoint),
        Command::Eval { checkpoint, csv, common } => commands::eval(&common, &checkpoint, csv),
        Command::Infer { checkpoint, input, common } => commands::infer(&common, &checkpoint, &input),
        Command::Plot {
            report,
            checkpoint,
            utterance,
            common,
        } => commands::plot(&common, &report, checkpoint.as_deref(), utterance.as_deref()),
        Command::Gradcheck { common } => commands::gradcheck(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
