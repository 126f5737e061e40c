use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use coopercept::{exit_code, run, RunOptions, Stage};

/// Cooperative gaze/detector perception pipeline.
#[derive(Parser, Debug)]
#[command(name = "coopercept", version)]
struct Cli {
    /// Stage to run: pupil, fuse, track, eval or all.
    #[arg(value_enum)]
    stage: Stage,

    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Output directory, replacing `[paths] output`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Blend with the mask weighting the camera pyramid instead of the gaze
    /// layer.
    #[arg(long)]
    literal_step6: bool,

    /// Worker threads for per-frame stages.
    #[arg(long)]
    jobs: Option<usize>,

    /// Also write side-by-side camera/fused montages.
    #[arg(long)]
    montage: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COOPERCEPT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let opts = RunOptions {
        out: cli.out,
        literal_step6: cli.literal_step6,
        jobs: cli.jobs,
        montage: cli.montage,
    };
    match run(cli.stage, &cli.config, &opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coopercept {}: {e:#}", cli.stage.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
