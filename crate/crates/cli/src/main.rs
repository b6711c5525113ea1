use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Single-image super-resolution with deep projection networks.
#[derive(Debug, Parser)]
#[command(name = "dpn", version)]
struct Cli {
    /// Worker threads; outputs are reproducible bit for bit at 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic corpus used by the toy studies.
    Prep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        train: usize,
        #[arg(long, default_value_t = 10)]
        test: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
    /// Train a network on external images.
    Train {
        /// Image list (one path per line) or directory of PNG files.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Adapt a model to one LR image.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
        /// Similar external images mixed into the internal examples.
        #[arg(long)]
        external: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rank a model pool on one LR image.
    Select {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long, default_value_t = 1)]
        top_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Super-resolve one image.
    Sr(commands::SrArgs),
    /// Score a model (or `bicubic`) on a set of ground-truth images.
    Eval {
        /// Checkpoint path, or `bicubic`.
        #[arg(long)]
        model: String,
        #[arg(long = "set")]
        set: PathBuf,
        #[arg(long)]
        scale: usize,
        /// Border pixels ignored by the metrics; defaults to the scale.
        #[arg(long)]
        shave: Option<usize>,
        #[arg(long)]
        enhance: bool,
        #[arg(long, default_value_t = 0)]
        bp: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the toy studies.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[arg(long)]
        out: PathBuf,
        /// Base model; the toy model is trained first when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    /// Train the reduced network on the synthetic corpus.
    Toy,
    EpochSweep,
    SizeSweep,
    Ablation,
    SelectionStudy,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    match cli.command {
        Command::Prep { out, train, test, size } => commands::prep(&out, train, test, size),
        Command::Train { images, out, resume, cfg } => commands::train(&images, &out, resume.as_deref(), &cfg),
        Command::Finetune {
            model,
            input,
            scale,
            out,
            external,
            cfg,
        } => commands::finetune(&model, &input, scale, &out, external.as_deref(), &cfg),
        Command::Select {
            pool,
            input,
            scale,
            top_k,
            out,
        } => commands::select(&pool, &input, scale, top_k, out.as_deref()),
        Command::Sr(args) => commands::sr(&args),
        Command::Eval {
            model,
            set,
            scale,
            shave,
            enhance,
            bp,
            out,
        } => commands::eval(&model, &set, scale, shave.unwrap_or(scale), enhance, bp, out.as_deref()),
        Command::Experiment { kind, out, model, cfg } => commands::experiment(kind, &out, model.as_deref(), &cfg),
    }
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<dpn_core::Error>(), Some(dpn_core::Error::Numerical(_))));
            ExitCode::from(if numerical { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
