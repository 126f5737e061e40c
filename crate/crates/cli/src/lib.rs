//! Batch pipeline behind the `coopercept` binary: pupil extraction, gaze
//! fusion into camera frames, trajectory fusion and detection scoring.

pub mod config;
pub mod frames;
mod manifest;
mod stages;
mod svg;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub use config::{load_config, PipelineConfig};
pub use manifest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Pupil,
    Fuse,
    Track,
    Eval,
    All,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Pupil => "pupil",
            Stage::Fuse => "fuse",
            Stage::Track => "track",
            Stage::Eval => "eval",
            Stage::All => "all",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `[paths] output`.
    pub out: Option<PathBuf>,
    /// Blend with the mask weighting the camera pyramid.
    pub literal_step6: bool,
    /// Worker threads for per-frame stages; all cores when unset.
    pub jobs: Option<usize>,
    /// Also write side-by-side camera/fused images.
    pub montage: bool,
}

/// A required input is absent or empty.
#[derive(Debug)]
pub struct MissingInput(pub String);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MissingInput {}

/// 2 for missing input, 1 for every other failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<MissingInput>().is_some() {
        2
    } else {
        1
    }
}

/// Loads the config, applies overrides and runs the requested stage(s),
/// finishing with `manifest.json` in the output directory.
pub fn run(stage: Stage, config_path: &Path, opts: &RunOptions) -> Result<Manifest> {
    let mut cfg = load_config(config_path)?;
    if let Some(out) = &opts.out {
        cfg.paths.output = out.clone();
    }
    if opts.literal_step6 {
        cfg.fusion.blend_order = coopercept_core::pyramid::BlendOrder::Literal;
    }
    std::fs::create_dir_all(&cfg.paths.output)
        .with_context(|| format!("creating output directory {}", cfg.paths.output.display()))?;
    let config_bytes = std::fs::read(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let config_dir = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut threads = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.jobs {
        threads = threads.num_threads(n.max(1));
    }
    let pool = threads.build().context("starting worker pool")?;

    let mut ctx = stages::Context::new(cfg, config_dir, opts.clone(), pool);
    let plan = match stage {
        Stage::All => vec![Stage::Pupil, Stage::Fuse, Stage::Track, Stage::Eval],
        single => vec![single],
    };
    let pupil_feeds_forward = stage == Stage::All;
    for s in &plan {
        log::info!("stage {}", s.name());
        match s {
            Stage::Pupil => stages::run_pupil(&mut ctx)?,
            Stage::Fuse => stages::run_fuse(&mut ctx, pupil_feeds_forward)?,
            Stage::Track => stages::run_track(&mut ctx, pupil_feeds_forward)?,
            Stage::Eval => stages::run_eval(&mut ctx)?,
            Stage::All => unreachable!(),
        }
    }
    let out = ctx.out().to_path_buf();
    let manifest = ctx.into_manifest(&plan, &config_bytes);
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}
