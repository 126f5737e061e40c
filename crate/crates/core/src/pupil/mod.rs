//! Pupil centre extraction from eye-camera frames.
//!
//! The pipeline is guided filter → Canny → circle Hough transform, followed
//! by a sub-pixel circle fit on the edge points that support the winning
//! accumulator cell. Two eyes sampled at the same instant are averaged into
//! one gaze point.

mod canny;
mod guided;
mod hough;
pub mod io;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use canny::{canny_edges, sobel, CannyThresholds, EdgeMap, Gradients};
pub use guided::{guided_filter, GuidedFilterParams};
pub use hough::{hough_circle, max_radius, HoughCircle};

use crate::error::{Error, Result};
use crate::gaze::GazePoint;
use crate::image::ImageBuffer;

/// Eye-tracker reporting period; left/right samples further apart than this
/// are not paired.
pub const EYE_SAMPLE_PERIOD_MS: i64 = 117;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilSample {
    pub utc_ms: i64,
    pub x: f64,
    pub y: f64,
    /// π·r² of the fitted circle, in px².
    pub area: f64,
}

/// Inclusive search range for the pupil radius. `None` for the upper bound
/// means half the shorter frame side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusRange {
    pub min: usize,
    pub max: Option<usize>,
}

impl Default for RadiusRange {
    fn default() -> Self {
        Self { min: 5, max: None }
    }
}

impl RadiusRange {
    pub fn new(min: usize, max: usize) -> Self {
        Self {
            min,
            max: Some(max),
        }
    }

    fn resolve(&self, width: usize, height: usize) -> (usize, usize) {
        let limit = max_radius(width, height);
        (self.min, self.max.unwrap_or(limit))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PupilDetector {
    pub guided: GuidedFilterParams,
    pub canny: CannyThresholds,
    pub radius: RadiusRange,
}

impl PupilDetector {
    /// Runs the full chain on a grayscale frame.
    pub fn detect(&self, frame: &ImageBuffer, utc_ms: i64) -> Result<PupilSample> {
        let circle = self.locate(frame)?;
        Ok(PupilSample {
            utc_ms,
            x: circle.a,
            y: circle.b,
            area: circle.area(),
        })
    }

    /// The refined circle behind [`detect`](Self::detect).
    pub fn locate(&self, frame: &ImageBuffer) -> Result<HoughCircle> {
        let smoothed = guided_filter(frame, &self.guided)?;
        let (edges, grads) = canny::canny_with_gradients(&smoothed, &self.canny)?;
        let (r_min, r_max) = self.radius.resolve(frame.width(), frame.height());
        let coarse = hough_circle(&edges, r_min, r_max)?;
        Ok(refine_circle(&coarse, &edges, &grads).unwrap_or(coarse))
    }
}

pub fn detect_pupil(
    frame: &ImageBuffer,
    utc_ms: i64,
    guided: &GuidedFilterParams,
    canny: &CannyThresholds,
    radius: RadiusRange,
) -> Result<PupilSample> {
    PupilDetector {
        guided: *guided,
        canny: *canny,
        radius,
    }
    .detect(frame, utc_ms)
}

/// Least-squares (Kåsa) circle through the sub-pixel positions of the edge
/// points within 1.5 px of the coarse circle. Returns `None` when the fit is
/// ill-posed or strays more than 2 px from the coarse estimate.
fn refine_circle(coarse: &HoughCircle, edges: &EdgeMap, grads: &Gradients) -> Option<HoughCircle> {
    let support: Vec<(f64, f64)> = edges
        .points()
        .filter(|&(x, y)| {
            let d = (x as f64 - coarse.a).hypot(y as f64 - coarse.b);
            (d - coarse.r).abs() <= 1.5
        })
        .map(|(x, y)| subpixel_edge(grads, x, y))
        .collect();
    if support.len() < 8 {
        return None;
    }

    // Minimise Σ (x² + y² + D·x + E·y + F)².
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    // Centre coordinates for conditioning.
    let (ox, oy) = (coarse.a, coarse.b);
    for &(px, py) in &support {
        let (x, y) = (px - ox, py - oy);
        let row = Vector3::new(x, y, 1.0);
        ata += row * row.transpose();
        atb += row * -(x * x + y * y);
    }
    let sol = ata.lu().solve(&atb)?;
    let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = cx * cx + cy * cy - sol[2];
    if !(r2 > 0.0) {
        return None;
    }
    let refined = HoughCircle {
        a: cx + ox,
        b: cy + oy,
        r: r2.sqrt(),
        votes: coarse.votes,
    };
    let in_frame = refined.a >= 0.0
        && refined.b >= 0.0
        && refined.a < edges.width() as f64
        && refined.b < edges.height() as f64;
    let close = (refined.a - coarse.a).abs() <= 2.0
        && (refined.b - coarse.b).abs() <= 2.0
        && (refined.r - coarse.r).abs() <= 2.0;
    (in_frame && close).then_some(refined)
}

/// Parabolic peak of the gradient magnitude along the quantized gradient
/// direction.
fn subpixel_edge(grads: &Gradients, x: usize, y: usize) -> (f64, f64) {
    let (dx, dy) = grads.direction_step(x, y);
    let (xi, yi) = (x as isize, y as isize);
    let m0 = grads.magnitude_at(xi, yi);
    let m_behind = grads.magnitude_at(xi - dx, yi - dy);
    let m_ahead = grads.magnitude_at(xi + dx, yi + dy);
    let denom = m_behind - 2.0 * m0 + m_ahead;
    let t = if denom < 0.0 {
        (0.5 * (m_behind - m_ahead) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    (x as f64 + t * dx as f64, y as f64 + t * dy as f64)
}

/// Averages the two pupil centres into a gaze point. The timestamp is the
/// floored mean of the two sample times.
pub fn merge_eyes(left: &PupilSample, right: &PupilSample) -> Result<GazePoint> {
    let gap = (left.utc_ms - right.utc_ms).abs();
    if gap > EYE_SAMPLE_PERIOD_MS {
        return Err(Error::EyeTimestampGap {
            gap_ms: gap,
            max_ms: EYE_SAMPLE_PERIOD_MS,
        });
    }
    Ok(GazePoint {
        utc_ms: (left.utc_ms + right.utc_ms).div_euclid(2),
        x: (left.x + right.x) / 2.0,
        y: (left.y + right.y) / 2.0,
    })
}
