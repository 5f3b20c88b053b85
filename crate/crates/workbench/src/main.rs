use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surfel_workbench::config::RunConfig;
use surfel_workbench::pipeline;
use surfel_workbench::{WbResult, WorkbenchError};

/// Mesh-anchored surfel head avatars: benchmark, prior training, two-stage
/// adaptation, rendering and evaluation.
#[derive(Parser)]
#[command(name = "surfel", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Refuse any nondeterministic execution path. Every path in this build
    /// is deterministic, so the flag only records the request.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the synthetic-benchmark run configuration.
    DefaultConfig,
    /// Generate the synthetic oracle benchmark under `data.bench_dir`.
    MakeBench,
    /// Train the prior on the corpus datasets.
    TrainPrior,
    /// Feed-forward map of the subject from the prior.
    Init,
    /// Stage 1: adapt the prior to the first `n_real` subject frames.
    Adapt1,
    /// Render novel conditions and enhance them into supervision.
    GenSupervision,
    /// Stage 2: adapt on real plus generated supervision.
    Adapt2,
    /// Render every frame of a split.
    Render {
        #[arg(long, default_value = "stage2")]
        weights: String,
        #[arg(long, default_value = "heldout")]
        split: String,
    },
    /// Drive the avatar with a split's signals from one fixed camera.
    Animate {
        #[arg(long, default_value = "stage2")]
        weights: String,
        #[arg(long, default_value = "heldout")]
        split: String,
        #[arg(long, default_value_t = 0)]
        camera: usize,
    },
    /// PSNR, SSIM and L1 of a weights file on a split, as CSV.
    Eval {
        #[arg(long, default_value = "stage2")]
        weights: String,
        #[arg(long, default_value = "heldout")]
        split: String,
        /// Only the first N frames.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Export surfels as a viewer-compatible PLY.
    ExportPly {
        #[arg(long, default_value = "stage2")]
        weights: String,
        /// Pose of this subject frame instead of the rest pose.
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn threads(cfg: &RunConfig) -> WbResult<usize> {
    match std::env::var("SURFEL_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| WorkbenchError::Config(format!("SURFEL_THREADS must be a thread count, got {v:?}"))),
        Err(_) => Ok(cfg.threads),
    }
}

fn run(cli: &Cli) -> WbResult<()> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", RunConfig::benchmark_default().to_toml()?);
        return Ok(());
    }
    let cfg = RunConfig::load(&cli.config)?;
    let n = threads(&cfg)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| WorkbenchError::Config(format!("thread pool: {e}")))?;
    log::info!(
        "threads {}, deterministic {}",
        rayon::current_num_threads(),
        cli.deterministic
    );
    match &cli.command {
        Command::DefaultConfig => unreachable!(),
        Command::MakeBench => pipeline::make_bench(&cfg),
        Command::TrainPrior => pipeline::train_prior(&cfg),
        Command::Init => pipeline::init(&cfg),
        Command::Adapt1 => pipeline::adapt1(&cfg),
        Command::GenSupervision => pipeline::gen_supervision(&cfg),
        Command::Adapt2 => pipeline::adapt2(&cfg),
        Command::Render { weights, split } => pipeline::render(&cfg, weights, split).map(report),
        Command::Animate { weights, split, camera } => pipeline::animate(&cfg, weights, split, *camera).map(report),
        Command::Eval { weights, split, limit } => {
            let rows = pipeline::eval(&cfg, weights, split, *limit)?;
            let s = surfel_workbench::metrics::summary(&rows);
            println!("{}: psnr {:.3} ssim {:.4} l1 {:.5}", pipeline::eval_path(&cfg, weights, split).display(), s.psnr, s.ssim, s.l1);
            Ok(())
        }
        Command::ExportPly { weights, frame, out } => pipeline::export(&cfg, weights, *frame, out.as_deref()).map(report),
    }
}

fn report(p: PathBuf) {
    println!("{}", Path::new(&p).display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.envelope());
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}
