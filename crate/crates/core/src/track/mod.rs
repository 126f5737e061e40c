//! Pixel trajectories, gaze/detector fusion and trajectory accuracy.

mod ekf;
pub mod io;
mod safety;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use ekf::{ekf_predict, ekf_update, ConstantVelocity, EkfModel, EkfState, LinearModel};
pub use safety::{
    gaze_zone_stats, ground_truth_pixels, ttc, ConflictState, GroundTruthCalibration, RtkSample,
    TtcBins, TtcZone, ZoneObservation, ZoneReport, ZoneStats,
};

use crate::error::{Error, Result};
use crate::gaze::{check_increasing, interpolate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Gaze,
    Detector,
    Fused,
    GroundTruth,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Gaze => "gaze",
            Source::Detector => "detector",
            Source::Fused => "fused",
            Source::GroundTruth => "ground_truth",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaze" => Ok(Source::Gaze),
            "detector" => Ok(Source::Detector),
            "fused" => Ok(Source::Fused),
            "ground_truth" => Ok(Source::GroundTruth),
            other => Err(Error::InvalidParameter(format!("unknown source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub utc_ms: i64,
    pub x: f64,
    pub y: f64,
}

/// Time-ordered pixel positions from a single source.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    source: Source,
    points: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn new(source: Source, points: Vec<TrackPoint>) -> Result<Self> {
        let times: Vec<i64> = points.iter().map(|p| p.utc_ms).collect();
        check_increasing(&times, "trajectory points")?;
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidParameter(
                "trajectory coordinates must be finite".into(),
            ));
        }
        Ok(Self { source, points })
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<i64> {
        self.points.iter().map(|p| p.utc_ms).collect()
    }

    /// Linear interpolation at `times`; times outside the span are dropped.
    pub fn resample(&self, times: &[i64]) -> Result<Trajectory> {
        check_increasing(times, "resample times")?;
        let own = self.times();
        let points = times
            .iter()
            .filter_map(|&t| {
                interpolate(&own, t).map(|(i, f)| {
                    let a = &self.points[i];
                    let b = &self.points[(i + 1).min(self.points.len() - 1)];
                    TrackPoint {
                        utc_ms: t,
                        x: a.x + f * (b.x - a.x),
                        y: a.y + f * (b.y - a.y),
                    }
                })
            })
            .collect();
        Trajectory::new(self.source, points)
    }

    fn by_time(&self) -> BTreeMap<i64, &TrackPoint> {
        self.points.iter().map(|p| (p.utc_ms, p)).collect()
    }
}

/// Root-mean-square Euclidean distance over the timestamps both
/// trajectories share.
pub fn rmse(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    let truth_at = truth.by_time();
    let (sum, n) = pred
        .points
        .iter()
        .filter_map(|p| truth_at.get(&p.utc_ms).map(|t| (p.x - t.x).powi(2) + (p.y - t.y).powi(2)))
        .fold((0.0, 0usize), |(s, n), d2| (s + d2, n + 1));
    if n == 0 {
        return Err(Error::NoCommonTimestamps);
    }
    Ok((sum / n as f64).sqrt())
}

/// Noise settings of the constant-velocity fusion filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Diagonal of Q per step: `[x, y, vx, vy]`.
    pub q: [f64; 4],
    /// Diagonal of R: `[gaze_x, gaze_y, det_x, det_y]`, px².
    pub r: [f64; 4],
    /// Diagonal of P0 around the first measurement.
    pub p0: [f64; 4],
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            q: [0.01, 0.01, 0.1, 0.1],
            r: [4.0, 4.0, 4.0, 4.0],
            p0: [4.0, 4.0, 100.0, 100.0],
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let all = self.q.iter().chain(&self.p0).map(|v| (*v, false));
        let r = self.r.iter().map(|v| (*v, true));
        for (v, strict) in all.chain(r) {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "ekf noise diagonals must be non-negative (R positive), got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Fuses gaze and detector trajectories on their common timestamps with a
/// constant-velocity EKF; the output holds the filtered positions.
pub fn fuse_trajectories(
    gaze: &Trajectory,
    detector: &Trajectory,
    cfg: &FusionConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let det_at = detector.by_time();
    let pairs: Vec<(&TrackPoint, &TrackPoint)> = gaze
        .points
        .iter()
        .filter_map(|g| det_at.get(&g.utc_ms).map(|d| (g, *d)))
        .collect();
    let Some(&(g0, d0)) = pairs.first() else {
        return Err(Error::NoCommonTimestamps);
    };

    let mut state = EkfState::new(
        DVector::from_vec(vec![(g0.x + d0.x) / 2.0, (g0.y + d0.y) / 2.0, 0.0, 0.0]),
        DMatrix::from_diagonal(&DVector::from_row_slice(&cfg.p0)),
    )?;
    let mut prev_t = g0.utc_ms;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, (g, d)) in pairs.iter().enumerate() {
        let model = ConstantVelocity {
            dt: (g.utc_ms - prev_t) as f64 / 1000.0,
            q: cfg.q,
            r: cfg.r,
        };
        if i > 0 {
            state = ekf_predict(&state, &model);
        }
        let z = DVector::from_vec(vec![g.x, g.y, d.x, d.y]);
        state = ekf_update(&state, &z, &model)?;
        out.push(TrackPoint {
            utc_ms: g.utc_ms,
            x: state.x[0],
            y: state.x[1],
        });
        prev_t = g.utc_ms;
    }
    Trajectory::new(Source::Fused, out)
}
