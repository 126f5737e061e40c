//! Mapping gaze points from the eye-tracking screen into the in-vehicle
//! camera frame ("coordinate telescoping").
//!
//! For a gaze point `(x_i, y_i)` on an `x0 × y0` source screen and an
//! `x1 × y1` target frame:
//!
//! ```text
//! x_j = (x_i − x_off)·x1/(x0 − x1) ± ρ·x1/(2·x0)
//! y_j = (y_i − y_off)·y1/(y0 − y1) ± ρ·y1/(2·y0)
//! ```
//!
//! where ρ is the gaze marker radius; the minus sign gives the box minimum
//! and the plus sign the maximum. With the default geometry (1920×1080 onto
//! 480×270, offsets 480/10, ρ = 35) the linear factor is 1/3 on both axes and
//! the box half-width is 4.375 px.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_index, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenGeometry {
    pub source_w: f64,
    pub source_h: f64,
    pub target_w: f64,
    pub target_h: f64,
    pub x_offset: f64,
    pub y_offset: f64,
    pub marker_radius: f64,
}

impl Default for ScreenGeometry {
    fn default() -> Self {
        Self {
            source_w: 1920.0,
            source_h: 1080.0,
            target_w: 480.0,
            target_h: 270.0,
            x_offset: 480.0,
            y_offset: 10.0,
            marker_radius: 35.0,
        }
    }
}

impl ScreenGeometry {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("source_w", self.source_w),
            ("source_h", self.source_h),
            ("target_w", self.target_w),
            ("target_h", self.target_h),
            ("x_offset", self.x_offset),
            ("y_offset", self.y_offset),
            ("marker_radius", self.marker_radius),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "geometry.{name} must be positive, got {v}"
                )));
            }
        }
        if self.source_w == self.target_w || self.source_h == self.target_h {
            return Err(Error::InvalidParameter(
                "geometry: source and target sizes must differ on both axes".into(),
            ));
        }
        Ok(())
    }

    /// Side of the square crop around a gaze point (twice the marker radius).
    pub fn crop_side(&self) -> usize {
        (2.0 * self.marker_radius).round() as usize
    }

    pub fn scale_x(&self) -> f64 {
        self.target_w / (self.source_w - self.target_w)
    }

    pub fn scale_y(&self) -> f64 {
        self.target_h / (self.source_h - self.target_h)
    }

    pub fn half_width_x(&self) -> f64 {
        self.marker_radius * self.target_w / (2.0 * self.source_w)
    }

    pub fn half_width_y(&self) -> f64 {
        self.marker_radius * self.target_h / (2.0 * self.source_h)
    }

    /// Linear part of the mapping (the box centre).
    pub fn telescope(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.x_offset) * self.scale_x(),
            (y - self.y_offset) * self.scale_y(),
        )
    }
}

/// Gaze location on the eye-tracking screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazePoint {
    pub utc_ms: i64,
    pub x: f64,
    pub y: f64,
}

/// Axis-aligned box in target-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl CropBox {
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// True when the box shares no area with `[0,w] × [0,h]`.
    pub fn outside(&self, w: f64, h: f64) -> bool {
        self.x_max < 0.0 || self.y_max < 0.0 || self.x_min > w || self.y_min > h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeMapping {
    pub center: (f64, f64),
    pub bbox: CropBox,
}

/// Maps a gaze point into the target frame. Points off the source screen or
/// whose box lands entirely outside the target frame yield
/// [`Error::OffScreenGaze`]; they are never clamped.
pub fn map_gaze(g: &GazePoint, geom: &ScreenGeometry) -> Result<GazeMapping> {
    let on_source = (0.0..=geom.source_w).contains(&g.x) && (0.0..=geom.source_h).contains(&g.y);
    if !on_source {
        return Err(Error::OffScreenGaze);
    }
    let (cx, cy) = geom.telescope(g.x, g.y);
    let (hx, hy) = (geom.half_width_x(), geom.half_width_y());
    let bbox = CropBox {
        x_min: cx - hx,
        x_max: cx + hx,
        y_min: cy - hy,
        y_max: cy + hy,
    };
    if bbox.outside(geom.target_w, geom.target_h) {
        return Err(Error::OffScreenGaze);
    }
    Ok(GazeMapping {
        center: bbox.center(),
        bbox,
    })
}

/// Linearly interpolates gaze samples at the given frame times. Frames
/// outside the gaze time span are dropped.
pub fn resample_gaze(series: &[GazePoint], frame_times: &[i64]) -> Result<Vec<GazePoint>> {
    if series.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: series.len(),
        });
    }
    let times: Vec<i64> = series.iter().map(|g| g.utc_ms).collect();
    check_increasing(&times, "gaze samples")?;
    check_increasing(frame_times, "frame times")?;
    Ok(frame_times
        .iter()
        .filter_map(|&t| {
            interpolate(&times, t).map(|(i, f)| {
                let (a, b) = (&series[i], &series[(i + 1).min(series.len() - 1)]);
                GazePoint {
                    utc_ms: t,
                    x: a.x + f * (b.x - a.x),
                    y: a.y + f * (b.y - a.y),
                }
            })
        })
        .collect())
}

pub(crate) fn check_increasing(times: &[i64], what: &str) -> Result<()> {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "{what} must be strictly increasing in time"
        )));
    }
    Ok(())
}

/// Locates `t` within sorted `times`: returns the left bracket index and the
/// interpolation fraction, or `None` outside `[first, last]`.
pub(crate) fn interpolate(times: &[i64], t: i64) -> Option<(usize, f64)> {
    let (&first, &last) = (times.first()?, times.last()?);
    if t < first || t > last {
        return None;
    }
    let i = match times.binary_search(&t) {
        Ok(i) => return Some((i, 0.0)),
        Err(i) => i - 1,
    };
    let f = (t - times[i]) as f64 / (times[i + 1] - times[i]) as f64;
    Some((i, f))
}

/// Square `crop_side` patch centred on the rounded gaze point, with
/// replicated borders. The centre pixel sits at index `crop_side / 2`.
pub fn crop_patch(frame: &ImageBuffer, g: &GazePoint, geom: &ScreenGeometry) -> ImageBuffer {
    let side = geom.crop_side().max(1);
    let half = (side / 2) as isize;
    let (cx, cy) = (g.x.round() as isize, g.y.round() as isize);
    let (w, h) = (frame.width(), frame.height());
    ImageBuffer::from_fn(side, side, frame.channels(), |x, y, c| {
        frame.get(
            clamp_index(cx - half + x as isize, w),
            clamp_index(cy - half + y as isize, h),
            c,
        )
    })
    .expect("patch dimensions are valid")
}
