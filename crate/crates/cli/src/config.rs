//! Pipeline configuration file (TOML).
//!
//! Only `[paths] output` is mandatory; every other section falls back to the
//! defaults below. Relative paths are resolved against the directory that
//! holds the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use coopercept_core::gaze::ScreenGeometry;
use coopercept_core::pupil::{CannyThresholds, GuidedFilterParams, PupilDetector, RadiusRange};
use coopercept_core::pyramid::BlendOrder;
use coopercept_core::track::{FusionConfig, GroundTruthCalibration, TtcBins};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub geometry: ScreenGeometry,
    #[serde(default)]
    pub guided: GuidedSection,
    #[serde(default)]
    pub canny: CannySection,
    #[serde(default)]
    pub hough: HoughSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub ekf: FusionConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub track: TrackSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub output: PathBuf,
    /// Directory of `<utc>_left`, `<utc>_right` or `<utc>` PNG/PGM frames.
    pub eye_frames: Option<PathBuf>,
    /// CSV `frame_id,utc_ms,camera,scene`.
    pub frame_index: Option<PathBuf>,
    /// Gaze samples for `fuse` and `track` when `pupil` is not run in the
    /// same invocation; defaults to `<output>/gaze.csv`.
    pub gaze_csv: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub rtk: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidedSection {
    pub window_radius: usize,
    pub epsilon: f64,
}

impl Default for GuidedSection {
    fn default() -> Self {
        let d = GuidedFilterParams::default();
        Self {
            window_radius: d.window_radius(),
            epsilon: d.epsilon(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CannySection {
    pub low: f64,
    pub high: f64,
}

impl Default for CannySection {
    fn default() -> Self {
        let d = CannyThresholds::default();
        Self {
            low: d.low(),
            high: d.high(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoughSection {
    pub r_min: usize,
    /// Defaults to half the shorter frame side.
    pub r_max: Option<usize>,
}

impl Default for HoughSection {
    fn default() -> Self {
        let d = RadiusRange::default();
        Self {
            r_min: d.min,
            r_max: d.max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchFilter {
    /// Patch minus its LoG response.
    #[default]
    LogSharpen,
    /// Raw LoG response.
    Log,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub log_sigma: f64,
    pub patch_filter: PatchFilter,
    pub blend_order: BlendOrder,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            log_sigma: 1.4,
            patch_filter: PatchFilter::default(),
            blend_order: BlendOrder::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iou_thresh: f64,
    pub conf_thresh: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            iou_thresh: 0.5,
            conf_thresh: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    /// `[near, far]` TTC edges, s.
    pub ttc_bins: [f64; 2],
    /// Detection class whose anchor forms the detector trajectory.
    pub conflict_class: String,
    pub calibration: GroundTruthCalibration,
}

impl Default for TrackSection {
    fn default() -> Self {
        let b = TtcBins::default();
        Self {
            ttc_bins: [b.near, b.far],
            conflict_class: "car".into(),
            calibration: GroundTruthCalibration::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message().trim()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }

    /// Checks every value constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate().context("[geometry]")?;
        GuidedFilterParams::new(self.guided.window_radius, self.guided.epsilon).context("[guided]")?;
        CannyThresholds::new(self.canny.low, self.canny.high).context("[canny]")?;
        if self.hough.r_min < 1 {
            bail!("[hough] r_min must be >= 1");
        }
        if let Some(max) = self.hough.r_max {
            if max < self.hough.r_min {
                bail!("[hough] r_max ({max}) must be >= r_min ({})", self.hough.r_min);
            }
        }
        if !(self.fusion.log_sigma > 0.0 && self.fusion.log_sigma.is_finite()) {
            bail!("[fusion] log_sigma must be positive, got {}", self.fusion.log_sigma);
        }
        self.ekf.validate().context("[ekf]")?;
        for (key, v) in [("iou_thresh", self.eval.iou_thresh), ("conf_thresh", self.eval.conf_thresh)] {
            if !(0.0..=1.0).contains(&v) {
                bail!("[eval] {key} must lie in [0, 1], got {v}");
            }
        }
        let [near, far] = self.track.ttc_bins;
        TtcBins::new(near, far).with_context(|| {
            format!("[track] ttc_bins must be strictly increasing positive edges, got [{near}, {far}]")
        })?;
        if self.track.conflict_class.is_empty() {
            bail!("[track] conflict_class must not be empty");
        }
        self.track.calibration.validate().context("[track.calibration]")?;
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        let fix = |path: &mut PathBuf| {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        };
        fix(&mut p.output);
        for path in [
            &mut p.eye_frames,
            &mut p.frame_index,
            &mut p.gaze_csv,
            &mut p.detections,
            &mut p.ground_truth,
            &mut p.rtk,
        ]
        .into_iter()
        .flatten()
        {
            fix(path);
        }
    }

    pub fn detector(&self) -> PupilDetector {
        PupilDetector {
            guided: GuidedFilterParams::new(self.guided.window_radius, self.guided.epsilon)
                .expect("validated"),
            canny: CannyThresholds::new(self.canny.low, self.canny.high).expect("validated"),
            radius: RadiusRange {
                min: self.hough.r_min,
                max: self.hough.r_max,
            },
        }
    }

    pub fn ttc_bins(&self) -> TtcBins {
        TtcBins {
            near: self.track.ttc_bins[0],
            far: self.track.ttc_bins[1],
        }
    }
}

/// Reads, validates and path-resolves a config file.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = PipelineConfig::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[paths]\noutput = \"out\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.geometry, ScreenGeometry::default());
        assert_eq!(cfg.geometry.source_w, 1920.0);
        assert_eq!(cfg.geometry.target_h, 270.0);
        assert_eq!(cfg.geometry.marker_radius, 35.0);
        assert_eq!(cfg.track.ttc_bins, [1.03, 2.0]);
        assert_eq!(cfg.fusion.log_sigma, 1.4);
        assert_eq!(cfg.fusion.blend_order, BlendOrder::GazeOnTop);
        assert_eq!(cfg.eval.iou_thresh, 0.5);
        assert_eq!(cfg.ekf, FusionConfig::default());
    }

    #[test]
    fn missing_output_names_the_key() {
        let err = PipelineConfig::from_toml("[paths]\nrtk = \"a.csv\"\n").unwrap_err();
        assert!(format!("{err:#}").contains("output"), "{err:#}");
        let err = PipelineConfig::from_toml("[geometry]\nsource_w = 10.0\n").unwrap_err();
        assert!(format!("{err:#}").contains("paths"), "{err:#}");
    }

    #[test]
    fn reversed_bins_are_rejected() {
        let text = format!("{MINIMAL}[track]\nttc_bins = [2.0, 1.03]\n");
        let err = PipelineConfig::from_toml(&text).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("ttc_bins") && msg.contains("increasing"), "{msg}");
    }

    #[test]
    fn invalid_values_name_the_constraint() {
        for (extra, key) in [
            ("[canny]\nlow = 200.0\nhigh = 100.0\n", "canny"),
            ("[eval]\niou_thresh = 1.5\n", "iou_thresh"),
            ("[geometry]\nmarker_radius = -1.0\n", "marker_radius"),
            ("[fusion]\nlog_sigma = 0.0\n", "log_sigma"),
            ("[track.calibration]\np_x1 = 3.0\np_x2 = 3.0\n", "p_x2 == p_x1"),
        ] {
            let err = PipelineConfig::from_toml(&format!("{MINIMAL}{extra}")).unwrap_err();
            assert!(format!("{err:#}").contains(key), "{key}: {err:#}");
        }
        assert!(PipelineConfig::from_toml(&format!("{MINIMAL}[fusion]\nbogus = 1\n")).is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        cfg.paths.rtk = Some("rtk.csv".into());
        cfg.hough.r_max = Some(30);
        cfg.fusion.patch_filter = PatchFilter::Log;
        cfg.fusion.blend_order = BlendOrder::Literal;
        cfg.track.calibration.ref_x = 481.0;
        cfg.ekf.r = [1.0, 2.0, 3.0, 4.0];
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut cfg = PipelineConfig::from_toml(
            "[paths]\noutput = \"out\"\nrtk = \"/abs/rtk.csv\"\ndetections = \"d.jsonl\"\n",
        )
        .unwrap();
        cfg.resolve_paths(Path::new("/data/run"));
        assert_eq!(cfg.paths.output, Path::new("/data/run/out"));
        assert_eq!(cfg.paths.rtk.as_deref(), Some(Path::new("/abs/rtk.csv")));
        assert_eq!(cfg.paths.detections.as_deref(), Some(Path::new("/data/run/d.jsonl")));
    }
}
