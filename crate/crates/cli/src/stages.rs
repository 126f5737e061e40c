//! The four pipeline stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use coopercept_core::eval::{evaluate, load_detections, load_ground_truth, BBox, Detection, GroundTruthBox};
use coopercept_core::gaze::{crop_patch, map_gaze, resample_gaze, GazePoint, ScreenGeometry};
use coopercept_core::pupil::io::{load_gaze_csv, write_gaze_csv, GazeRecord};
use coopercept_core::pupil::{merge_eyes, PupilDetector, PupilSample};
use coopercept_core::pyramid::{fuse_frame, log_kernel, log_sharpen, smooth_patch, BlendOrder, LogKernel};
use coopercept_core::track::io::{load_rtk_csv, write_trajectories_csv};
use coopercept_core::track::{
    fuse_trajectories, gaze_zone_stats, ground_truth_pixels, rmse, ttc, ConflictState, RtkSample, Source,
    TrackPoint, Trajectory, ZoneObservation,
};
use coopercept_core::{Error, ImageBuffer};

use crate::config::{PatchFilter, PipelineConfig};
use crate::frames::{discover_eye_frames, plan_eye_jobs, EyeFrame, EyeJob, FrameEntry, FrameIndex};
use crate::manifest::{hash_file, relative_key, sha256_hex, Manifest};
use crate::svg::trajectories_svg;
use crate::{MissingInput, RunOptions, Stage};

pub(crate) struct Context {
    pub cfg: PipelineConfig,
    config_dir: PathBuf,
    opts: RunOptions,
    pool: rayon::ThreadPool,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Context {
    pub fn new(cfg: PipelineConfig, config_dir: PathBuf, opts: RunOptions, pool: rayon::ThreadPool) -> Self {
        Self {
            cfg,
            config_dir,
            opts,
            pool,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn out(&self) -> &Path {
        &self.cfg.paths.output
    }

    fn record_input(&mut self, path: &Path) -> Result<()> {
        let key = relative_key(path, &self.config_dir);
        let digest = hash_file(path)?;
        self.inputs.insert(key, digest);
        Ok(())
    }

    fn record_output(&mut self, name: &str) -> Result<()> {
        let digest = hash_file(&self.out().join(name))?;
        self.outputs.insert(name.to_string(), digest);
        Ok(())
    }

    fn write_output(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out().join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Gaze samples come from this run's pupil stage under `all`, otherwise
    /// from `[paths] gaze_csv` or a previous run's `<output>/gaze.csv`.
    fn gaze_csv(&mut self, stage: &str, from_this_run: bool) -> Result<Vec<GazeRecord>> {
        let produced = self.out().join("gaze.csv");
        let path = match (&self.cfg.paths.gaze_csv, from_this_run) {
            (Some(p), false) => p.clone(),
            _ => produced.clone(),
        };
        if !path.is_file() {
            return Err(MissingInput(format!(
                "{stage} stage needs gaze samples: {} not found (run `pupil` or set [paths] gaze_csv)",
                path.display()
            ))
            .into());
        }
        if path != produced {
            self.record_input(&path)?;
        } else if !from_this_run {
            // Left by an earlier `pupil` run; keyed independently of where
            // the output directory lives.
            self.inputs.insert("$out/gaze.csv".into(), hash_file(&path)?);
        }
        Ok(load_gaze_csv(&path)?)
    }

    pub fn into_manifest(self, plan: &[Stage], config_bytes: &[u8]) -> Manifest {
        let mut options = BTreeMap::new();
        options.insert("literal_step6".to_string(), self.opts.literal_step6.to_string());
        options.insert("montage".to_string(), self.opts.montage.to_string());
        Manifest {
            tool: "coopercept".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stages: plan.iter().map(|s| s.name().to_string()).collect(),
            config_sha256: sha256_hex(config_bytes),
            options,
            inputs: self.inputs,
            outputs: self.outputs,
        }
    }
}

fn require(path: &Option<PathBuf>, stage: &str, key: &str) -> Result<PathBuf> {
    let Some(path) = path else {
        return Err(MissingInput(format!("{stage} stage needs [paths] {key}")).into());
    };
    if !path.exists() {
        return Err(MissingInput(format!("{stage} stage: {key} {} not found", path.display())).into());
    }
    Ok(path.clone())
}

fn load_gray(path: &Path) -> Result<ImageBuffer> {
    let img = ImageBuffer::load(path)?;
    Ok(if img.channels() == 1 { img } else { img.to_gray() })
}

fn load_rgb(path: &Path) -> Result<ImageBuffer> {
    let img = ImageBuffer::load(path)?;
    Ok(if img.channels() == 3 {
        img
    } else {
        ImageBuffer::from_planes(&[img.clone(), img.clone(), img])?
    })
}

fn detect_job(job: &EyeJob, detector: &PupilDetector) -> Result<GazeRecord> {
    let detect = |f: &EyeFrame| -> Result<PupilSample> {
        let img = load_gray(&f.path)?;
        detector
            .detect(&img, f.utc_ms)
            .with_context(|| f.path.display().to_string())
    };
    Ok(match job {
        EyeJob::Pair { left, right } => {
            let (l, r) = (detect(left)?, detect(right)?);
            let g = merge_eyes(&l, &r)?;
            GazeRecord {
                utc_ms: g.utc_ms,
                x: g.x,
                y: g.y,
                area: (l.area + r.area) / 2.0,
            }
        }
        EyeJob::Single(f) => {
            let s = detect(f)?;
            GazeRecord {
                utc_ms: s.utc_ms,
                x: s.x,
                y: s.y,
                area: s.area,
            }
        }
    })
}

pub(crate) fn run_pupil(ctx: &mut Context) -> Result<()> {
    let dir = require(&ctx.cfg.paths.eye_frames, "pupil", "eye_frames")?;
    let frames = discover_eye_frames(&dir)?;
    if frames.is_empty() {
        return Err(MissingInput(format!("no eye frames in {}", dir.display())).into());
    }
    let (jobs, unpaired) = plan_eye_jobs(&frames);
    for f in &unpaired {
        warn!("{}: no partner eye frame, skipped", f.path.display());
    }
    let detector = ctx.cfg.detector();
    let results: Vec<Result<GazeRecord>> =
        ctx.pool.install(|| jobs.par_iter().map(|j| detect_job(j, &detector)).collect());

    let mut records = Vec::with_capacity(results.len());
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                let first = match job {
                    EyeJob::Pair { left, .. } => left,
                    EyeJob::Single(f) => f,
                };
                warn!("eye frame at {} skipped: {e:#}", first.utc_ms);
            }
        }
    }
    for f in &frames {
        ctx.record_input(&f.path)?;
    }
    records.sort_by_key(|r| r.utc_ms);
    let before = records.len();
    records.dedup_by_key(|r| r.utc_ms);
    if records.len() < before {
        warn!("{} gaze samples shared a timestamp and were dropped", before - records.len());
    }
    if records.is_empty() {
        bail!("no eye frame in {} yielded a pupil", dir.display());
    }
    let mut buf = Vec::new();
    write_gaze_csv(&mut buf, &records)?;
    ctx.write_output("gaze.csv", &buf)?;
    info!("pupil: {} gaze samples from {} eye frames", records.len(), frames.len());
    Ok(())
}

struct FuseSettings {
    geom: ScreenGeometry,
    kernel: LogKernel,
    filter: PatchFilter,
    order: BlendOrder,
    montage: bool,
}

/// Gaze position at each frame time, interpolated between samples; frames
/// outside the sampled span get none.
fn gaze_at_frames(records: &[GazeRecord], times: &[i64]) -> Result<BTreeMap<i64, GazePoint>> {
    let points: Vec<GazePoint> = records.iter().map(GazeRecord::gaze_point).collect();
    let on_time = if points.len() >= 2 {
        resample_gaze(&points, times)?
    } else {
        points.into_iter().filter(|p| times.contains(&p.utc_ms)).collect()
    };
    Ok(on_time.into_iter().map(|g| (g.utc_ms, g)).collect())
}

/// Stand-in patch when no scene frame was recorded: the camera
/// neighbourhood with a solid red marker disc.
fn marker_patch(camera: &ImageBuffer, center: (f64, f64), geom: &ScreenGeometry) -> ImageBuffer {
    let side = geom.crop_side().max(1);
    let half = (side / 2) as isize;
    let (cx, cy) = (center.0.round() as isize, center.1.round() as isize);
    let (w, h) = (camera.width() as isize, camera.height() as isize);
    ImageBuffer::from_fn(side, side, 3, |x, y, c| {
        let d = (x as f64 - half as f64).hypot(y as f64 - half as f64);
        if d <= geom.marker_radius {
            [230.0, 20.0, 20.0][c]
        } else {
            let sx = (cx - half + x as isize).clamp(0, w - 1) as usize;
            let sy = (cy - half + y as isize).clamp(0, h - 1) as usize;
            camera.get(sx, sy, c)
        }
    })
    .expect("patch dimensions are valid")
}

fn filter_patch(patch: &ImageBuffer, s: &FuseSettings) -> ImageBuffer {
    match s.filter {
        PatchFilter::LogSharpen => log_sharpen(patch, &s.kernel),
        PatchFilter::Log => smooth_patch(patch, &s.kernel).map(|v| v.clamp(0.0, 255.0)),
        PatchFilter::None => patch.clone(),
    }
}

fn side_by_side(a: &ImageBuffer, b: &ImageBuffer) -> ImageBuffer {
    let w = a.width();
    ImageBuffer::from_fn(2 * w, a.height(), 3, |x, y, c| {
        if x < w {
            a.get(x, y, c)
        } else {
            b.get(x - w, y, c)
        }
    })
    .expect("montage dimensions are valid")
}

fn check_size(img: &ImageBuffer, w: f64, h: f64, what: &str, path: &Path) -> Result<()> {
    if img.width() as f64 != w || img.height() as f64 != h {
        bail!(
            "geometry mismatch: {what} {} is {}x{}, config expects {w}x{h}",
            path.display(),
            img.width(),
            img.height()
        );
    }
    Ok(())
}

/// Returns whether a scene frame was read.
fn fuse_one(f: &FrameEntry, gaze: Option<&GazePoint>, s: &FuseSettings, out: &Path) -> Result<bool> {
    let geom = &s.geom;
    let camera = load_rgb(&f.camera)?;
    check_size(&camera, geom.target_w, geom.target_h, "camera frame", &f.camera)?;
    let mut used_scene = false;
    let fused = match gaze.map(|g| (g, map_gaze(g, geom))) {
        None => {
            info!("frame {}: no gaze sample in time, copied", f.frame_id);
            camera.clone()
        }
        Some((_, Err(Error::OffScreenGaze))) => {
            info!("frame {}: gaze off screen, copied", f.frame_id);
            camera.clone()
        }
        Some((_, Err(e))) => return Err(e.into()),
        Some((g, Ok(m))) => {
            let patch = match &f.scene {
                Some(path) => {
                    let scene = load_rgb(path)?;
                    check_size(&scene, geom.source_w, geom.source_h, "scene frame", path)?;
                    used_scene = true;
                    crop_patch(&scene, g, geom)
                }
                None => marker_patch(&camera, m.center, geom),
            };
            fuse_frame(&camera, &filter_patch(&patch, s), &m.bbox, geom, s.order)?
        }
    };
    fused.save_png(out.join(format!("fused_{:06}.png", f.frame_id)))?;
    if s.montage {
        side_by_side(&camera, &fused).save_png(out.join(format!("montage_{:06}.png", f.frame_id)))?;
    }
    Ok(used_scene)
}

pub(crate) fn run_fuse(ctx: &mut Context, gaze_from_this_run: bool) -> Result<()> {
    let index_path = require(&ctx.cfg.paths.frame_index, "fuse", "frame_index")?;
    let index = FrameIndex::load(&index_path)?;
    ctx.record_input(&index_path)?;
    let records = ctx.gaze_csv("fuse", gaze_from_this_run)?;
    let gaze = gaze_at_frames(&records, &index.times())?;
    let sigma = ctx.cfg.fusion.log_sigma;
    let settings = FuseSettings {
        geom: ctx.cfg.geometry,
        kernel: log_kernel(sigma, (3.0 * sigma).ceil() as usize)?,
        filter: ctx.cfg.fusion.patch_filter,
        order: ctx.cfg.fusion.blend_order,
        montage: ctx.opts.montage,
    };
    let out = ctx.out().to_path_buf();
    let results: Vec<Result<bool>> = ctx.pool.install(|| {
        index
            .frames
            .par_iter()
            .map(|f| fuse_one(f, gaze.get(&f.utc_ms), &settings, &out))
            .collect()
    });
    let mut fused = 0;
    for (f, r) in index.frames.iter().zip(results) {
        let used_scene = r.with_context(|| format!("frame {}", f.frame_id))?;
        ctx.record_input(&f.camera)?;
        if used_scene {
            ctx.record_input(f.scene.as_deref().expect("scene was read"))?;
        }
        ctx.record_output(&format!("fused_{:06}.png", f.frame_id))?;
        if settings.montage {
            ctx.record_output(&format!("montage_{:06}.png", f.frame_id))?;
        }
        fused += usize::from(gaze.contains_key(&f.utc_ms));
    }
    info!("fuse: {} frames written, {} with a gaze sample", index.frames.len(), fused);
    Ok(())
}

/// Highest-confidence detection of `class` per frame; the earliest listed
/// wins ties.
fn best_detections<'a>(dets: &'a [Detection], class: &str) -> BTreeMap<i64, &'a Detection> {
    let mut best: BTreeMap<i64, &Detection> = BTreeMap::new();
    for d in dets.iter().filter(|d| d.class == class) {
        match best.get(&d.frame) {
            Some(prev) if prev.conf >= d.conf => {}
            _ => {
                best.insert(d.frame, d);
            }
        }
    }
    best
}

/// Linear interpolation of the RTK conflict state at `t`.
fn conflict_at(rtk: &[RtkSample], t: i64) -> Option<ConflictState> {
    let i = rtk.partition_point(|s| s.utc_ms <= t);
    if i == 0 {
        return None;
    }
    let a = &rtk[i - 1];
    if a.utc_ms == t {
        return a.conflict().ok();
    }
    let b = rtk.get(i)?;
    let f = (t - a.utc_ms) as f64 / (b.utc_ms - a.utc_ms) as f64;
    let lerp = |u: f64, v: f64| u + f * (v - u);
    ConflictState::new(
        lerp(a.gap_m, b.gap_m),
        lerp(a.ego_vy_mps, b.ego_vy_mps),
        lerp(a.obj_vy_mps, b.obj_vy_mps),
    )
    .ok()
}

#[derive(Serialize)]
struct TtcEntry {
    frame_id: i64,
    utc_ms: i64,
    /// `null` when the vehicles are not closing.
    ttc_s: Option<f64>,
}

#[derive(Serialize)]
struct TrackMetrics {
    rmse_px: BTreeMap<String, f64>,
    samples: BTreeMap<String, usize>,
    ttc: Vec<TtcEntry>,
}

fn to_json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

pub(crate) fn run_track(ctx: &mut Context, gaze_from_this_run: bool) -> Result<()> {
    let rtk_path = require(&ctx.cfg.paths.rtk, "track", "rtk")?;
    let det_path = require(&ctx.cfg.paths.detections, "track", "detections")?;
    let index_path = require(&ctx.cfg.paths.frame_index, "track", "frame_index")?;
    let index = FrameIndex::load(&index_path)?;
    let rtk = load_rtk_csv(&rtk_path)?;
    let dets = load_detections(&det_path)?;
    let gts = match ctx.cfg.paths.ground_truth.clone() {
        Some(p) if p.exists() => {
            ctx.record_input(&p)?;
            load_ground_truth(&p)?
        }
        _ => Vec::new(),
    };
    for p in [&index_path, &rtk_path, &det_path] {
        ctx.record_input(p)?;
    }
    let records = ctx.gaze_csv("track", gaze_from_this_run)?;
    let geom = ctx.cfg.geometry;
    let times = index.times();
    let utc_of = index.utc_of();

    let gaze_points: Vec<TrackPoint> = gaze_at_frames(&records, &times)?
        .values()
        .filter_map(|g| {
            map_gaze(g, &geom).ok().map(|m| TrackPoint {
                utc_ms: g.utc_ms,
                x: m.center.0,
                y: m.center.1,
            })
        })
        .collect();
    let gaze = Trajectory::new(Source::Gaze, gaze_points)?;

    let class = ctx.cfg.track.conflict_class.clone();
    let best = best_detections(&dets, &class);
    let det_points: Vec<TrackPoint> = best
        .iter()
        .filter_map(|(frame, d)| {
            let utc_ms = *utc_of.get(frame)?;
            let (x, y) = d.bbox.center();
            Some(TrackPoint { utc_ms, x, y })
        })
        .collect();
    let mut det_points = det_points;
    det_points.sort_by_key(|p| p.utc_ms);
    let detector = Trajectory::new(Source::Detector, det_points)?;

    let truth = ground_truth_pixels(&rtk, &ctx.cfg.track.calibration, &geom)?.resample(&times)?;
    let fused = fuse_trajectories(&gaze, &detector, &ctx.cfg.ekf).map_err(|e| match e {
        Error::NoCommonTimestamps => anyhow::anyhow!(
            "gaze ({} points) and detector ({} points) trajectories share no frame timestamps",
            gaze.len(),
            detector.len()
        ),
        other => other.into(),
    })?;

    let mut rmse_px = BTreeMap::new();
    let mut samples = BTreeMap::new();
    for t in [&gaze, &detector, &fused, &truth] {
        samples.insert(t.source().to_string(), t.len());
    }
    for t in [&gaze, &detector, &fused] {
        let v = rmse(t, &truth).with_context(|| format!("{} trajectory shares no timestamps with ground truth", t.source()))?;
        rmse_px.insert(t.source().to_string(), v);
    }

    let mut ttc_series = Vec::new();
    let mut ttc_json = Vec::new();
    for f in &index.frames {
        if let Some(c) = conflict_at(&rtk, f.utc_ms) {
            let v = ttc(&c);
            ttc_series.push((f.utc_ms, v));
            ttc_json.push(TtcEntry {
                frame_id: f.frame_id,
                utc_ms: f.utc_ms,
                ttc_s: v.is_finite().then_some(v),
            });
        }
    }

    let truth_boxes: BTreeMap<i64, &GroundTruthBox> = gts
        .iter()
        .filter(|g| g.class == class)
        .fold(BTreeMap::new(), |mut m, g| {
            m.entry(g.frame).or_insert(g);
            m
        });
    let observations: Vec<ZoneObservation> = index
        .frames
        .iter()
        .filter_map(|f| {
            let det = best.get(&f.frame_id);
            let conflict_box: BBox = truth_boxes
                .get(&f.frame_id)
                .map(|g| g.bbox)
                .or_else(|| det.map(|d| d.bbox))?;
            Some(ZoneObservation {
                utc_ms: f.utc_ms,
                conflict_box,
                anchor: det.map(|d| {
                    let (x, y) = d.bbox.center();
                    [x, y]
                }),
            })
        })
        .collect();
    let zones = gaze_zone_stats(&gaze, &observations, &ttc_series, &ctx.cfg.ttc_bins())?;

    let all = [&gaze, &detector, &fused, &truth];
    let mut csv = Vec::new();
    write_trajectories_csv(&mut csv, &all)?;
    ctx.write_output("trajectories.csv", &csv)?;
    let metrics = TrackMetrics {
        rmse_px,
        samples,
        ttc: ttc_json,
    };
    ctx.write_output("track_metrics.json", &to_json(&metrics)?)?;
    ctx.write_output("zone_report.json", &to_json(&zones)?)?;
    let svg = trajectories_svg(geom.target_w, geom.target_h, &all);
    ctx.write_output("trajectories.svg", svg.as_bytes())?;
    info!(
        "track: RMSE gaze {:.3}, detector {:.3}, fused {:.3} px",
        metrics.rmse_px["gaze"], metrics.rmse_px["detector"], metrics.rmse_px["fused"]
    );
    Ok(())
}

pub(crate) fn run_eval(ctx: &mut Context) -> Result<()> {
    let det_path = require(&ctx.cfg.paths.detections, "eval", "detections")?;
    let gt_path = require(&ctx.cfg.paths.ground_truth, "eval", "ground_truth")?;
    let dets = load_detections(&det_path)?;
    let gts = load_ground_truth(&gt_path)?;
    ctx.record_input(&det_path)?;
    ctx.record_input(&gt_path)?;
    let report = evaluate(&dets, &gts, ctx.cfg.eval.iou_thresh, ctx.cfg.eval.conf_thresh)?;
    ctx.write_output("eval_report.json", &to_json(&report)?)?;
    info!("eval: mAP {:.4} over {} classes", report.map, report.classes.len());
    Ok(())
}
