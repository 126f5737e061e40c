//! Time to collision, RTK-to-pixel calibration and gaze-zone statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Source, TrackPoint, Trajectory};
use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::gaze::ScreenGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictState {
    /// Gap to the conflict object, m.
    pub delta_s: f64,
    /// Ego speed along y, m/s.
    pub v1y: f64,
    /// Conflict object speed along y, m/s.
    pub v2y: f64,
}

impl ConflictState {
    pub fn new(delta_s: f64, v1y: f64, v2y: f64) -> Result<Self> {
        if !(delta_s >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gap must be non-negative, got {delta_s}"
            )));
        }
        Ok(Self { delta_s, v1y, v2y })
    }
}

/// `ΔS / (v1y + v2y)`; `+∞` when the two are not closing.
pub fn ttc(c: &ConflictState) -> f64 {
    let closing = c.v1y + c.v2y;
    if closing > 0.0 {
        c.delta_s / closing
    } else {
        f64::INFINITY
    }
}

/// One row of the RTK log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtkSample {
    pub utc_ms: i64,
    pub rel_x_m: f64,
    pub rel_y_m: f64,
    pub ego_vy_mps: f64,
    pub obj_vy_mps: f64,
    pub gap_m: f64,
}

impl RtkSample {
    pub fn conflict(&self) -> Result<ConflictState> {
        ConflictState::new(self.gap_m, self.ego_vy_mps, self.obj_vy_mps)
    }

    pub fn ttc(&self) -> Result<f64> {
        self.conflict().map(|c| ttc(&c))
    }
}

/// Reference pairs tying road displacement to pixels, plus the reference
/// eye-screen point fed through the screen telescoping factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundTruthCalibration {
    pub s_x1: f64,
    pub s_x2: f64,
    pub s_y1: f64,
    pub s_y2: f64,
    pub p_x1: f64,
    pub p_x2: f64,
    pub p_y1: f64,
    pub p_y2: f64,
    /// Eye-screen reference point, px.
    pub ref_x: f64,
    pub ref_y: f64,
}

impl Default for GroundTruthCalibration {
    /// Unit baselines with the reference point chosen so that the default
    /// screen geometry gives a telescoping factor of 1 on both axes.
    fn default() -> Self {
        Self {
            s_x1: 0.0,
            s_x2: 1.0,
            s_y1: 0.0,
            s_y2: 1.0,
            p_x1: 0.0,
            p_x2: 1.0,
            p_y1: 0.0,
            p_y2: 1.0,
            ref_x: 483.0,
            ref_y: 13.0,
        }
    }
}

impl GroundTruthCalibration {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.s_x1, self.s_x2, self.s_y1, self.s_y2, self.p_x1, self.p_x2, self.p_y1, self.p_y2,
            self.ref_x, self.ref_y,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("calibration values must be finite".into()));
        }
        if self.p_x2 == self.p_x1 {
            return Err(Error::ZeroBaseline("p_x2 == p_x1"));
        }
        if self.p_y2 == self.p_y1 {
            return Err(Error::ZeroBaseline("p_y2 == p_y1"));
        }
        Ok(())
    }

    /// Per-axis multipliers from road metres to camera pixels.
    pub fn factors(&self, geom: &ScreenGeometry) -> Result<(f64, f64)> {
        self.validate()?;
        geom.validate()?;
        let (tx, ty) = geom.telescope(self.ref_x, self.ref_y);
        Ok((
            (self.s_x2 - self.s_x1) / (self.p_x2 - self.p_x1) * tx,
            (self.s_y2 - self.s_y1) / (self.p_y2 - self.p_y1) * ty,
        ))
    }
}

/// Product-form conversion of relative displacement into a pixel
/// trajectory: `p = baseline · telescope(ref) · s` per axis.
pub fn ground_truth_pixels(
    rtk: &[RtkSample],
    cal: &GroundTruthCalibration,
    geom: &ScreenGeometry,
) -> Result<Trajectory> {
    let (kx, ky) = cal.factors(geom)?;
    let points = rtk
        .iter()
        .map(|s| TrackPoint {
            utc_ms: s.utc_ms,
            x: kx * s.rel_x_m,
            y: ky * s.rel_y_m,
        })
        .collect();
    Trajectory::new(Source::GroundTruth, points)
}

/// TTC bin edges, s: `≤ near`, `(near, far]`, `> far`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtcBins {
    pub near: f64,
    pub far: f64,
}

impl Default for TtcBins {
    fn default() -> Self {
        Self { near: 1.03, far: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtcZone {
    Near,
    Approaching,
    Far,
}

impl TtcBins {
    pub fn new(near: f64, far: f64) -> Result<Self> {
        if !(near.is_finite() && far.is_finite() && 0.0 < near && near < far) {
            return Err(Error::InvalidParameter(format!(
                "ttc bin edges must satisfy 0 < near < far, got {near}, {far}"
            )));
        }
        Ok(Self { near, far })
    }

    /// `None` for NaN.
    pub fn classify(&self, ttc: f64) -> Option<TtcZone> {
        if ttc.is_nan() {
            None
        } else if ttc <= self.near {
            Some(TtcZone::Near)
        } else if ttc <= self.far {
            Some(TtcZone::Approaching)
        } else {
            Some(TtcZone::Far)
        }
    }
}

/// Conflict object box at one instant and, if detected, the detector's
/// anchor centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneObservation {
    pub utc_ms: i64,
    pub conflict_box: BBox,
    pub anchor: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneStats {
    pub count: usize,
    pub inside_fraction: f64,
    /// Mean of gaze minus box centre, px.
    pub mean_gaze_offset: [f64; 2],
    pub anchor_count: usize,
    /// Mean of anchor centre minus box centre, px; absent without anchors.
    pub mean_anchor_offset: Option<[f64; 2]>,
}

/// Per-bin statistics; an empty bin is `None` rather than zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub bins: TtcBins,
    pub zones: BTreeMap<TtcZone, Option<ZoneStats>>,
}

impl ZoneReport {
    pub fn get(&self, zone: TtcZone) -> Option<&ZoneStats> {
        self.zones.get(&zone).and_then(Option::as_ref)
    }
}

#[derive(Default)]
struct Acc {
    count: usize,
    inside: usize,
    gaze: [f64; 2],
    anchors: usize,
    anchor: [f64; 2],
}

/// Bins every gaze point that has both a zone observation and a TTC value
/// at its timestamp.
pub fn gaze_zone_stats(
    gaze: &Trajectory,
    observations: &[ZoneObservation],
    ttc_series: &[(i64, f64)],
    bins: &TtcBins,
) -> Result<ZoneReport> {
    let bins = TtcBins::new(bins.near, bins.far)?;
    let obs: BTreeMap<i64, &ZoneObservation> = observations.iter().map(|o| (o.utc_ms, o)).collect();
    let ttcs: BTreeMap<i64, f64> = ttc_series.iter().copied().collect();
    let mut acc: BTreeMap<TtcZone, Acc> = BTreeMap::new();
    for p in gaze.points() {
        let (Some(o), Some(&t)) = (obs.get(&p.utc_ms), ttcs.get(&p.utc_ms)) else {
            continue;
        };
        let Some(zone) = bins.classify(t) else {
            continue;
        };
        let a = acc.entry(zone).or_default();
        let (cx, cy) = o.conflict_box.center();
        a.count += 1;
        a.inside += usize::from(o.conflict_box.contains(p.x, p.y));
        a.gaze[0] += p.x - cx;
        a.gaze[1] += p.y - cy;
        if let Some([ax, ay]) = o.anchor {
            a.anchors += 1;
            a.anchor[0] += ax - cx;
            a.anchor[1] += ay - cy;
        }
    }
    let zones = [TtcZone::Near, TtcZone::Approaching, TtcZone::Far]
        .into_iter()
        .map(|z| {
            let stats = acc.get(&z).map(|a| {
                let n = a.count as f64;
                ZoneStats {
                    count: a.count,
                    inside_fraction: a.inside as f64 / n,
                    mean_gaze_offset: [a.gaze[0] / n, a.gaze[1] / n],
                    anchor_count: a.anchors,
                    mean_anchor_offset: (a.anchors > 0).then(|| {
                        let m = a.anchors as f64;
                        [a.anchor[0] / m, a.anchor[1] / m]
                    }),
                }
            });
            (z, stats)
        })
        .collect();
    Ok(ZoneReport { bins, zones })
}
