//! Circle Hough transform over a binary edge map.
//!
//! The parameter space is quantized at 1 px in centre and radius. An edge
//! point `(x, y)` votes once for every cell `(a, b, r)` with
//! `round(√((x−a)² + (y−b)²)) = r`. Centres are restricted to the frame.

use serde::{Deserialize, Serialize};

use super::canny::EdgeMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughCircle {
    /// Column of the centre.
    pub a: f64,
    /// Row of the centre.
    pub b: f64,
    pub r: f64,
    pub votes: u32,
}

impl HoughCircle {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.r * self.r
    }
}

/// Largest radius the accumulator allows for a `width × height` frame.
pub fn max_radius(width: usize, height: usize) -> usize {
    width.min(height) / 2
}

/// Integer offsets lying on the rasterized ring of radius `r`.
pub(crate) fn ring_offsets(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let lo = (r as f64 - 0.5).powi(2);
    let hi = (r as f64 + 0.5).powi(2);
    let mut out = Vec::new();
    for dy in -r - 1..=r + 1 {
        for dx in -r - 1..=r + 1 {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 >= lo && d2 < hi {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Returns the accumulator cell with the most votes. Ties go to the smallest
/// radius, then to the first centre in row-major order.
pub fn hough_circle(edges: &EdgeMap, r_min: usize, r_max: usize) -> Result<HoughCircle> {
    let (w, h) = (edges.width(), edges.height());
    let limit = max_radius(w, h);
    if r_min < 1 || r_min > r_max || r_max > limit {
        return Err(Error::InvalidParameter(format!(
            "radius range [{r_min}, {r_max}] must satisfy 1 <= r_min <= r_max <= {limit}"
        )));
    }
    let points: Vec<(isize, isize)> = edges
        .points()
        .map(|(x, y)| (x as isize, y as isize))
        .collect();
    if points.is_empty() {
        return Err(Error::NoCircle);
    }

    let mut acc = vec![0u32; w * h];
    let mut touched = Vec::new();
    let mut best: Option<HoughCircle> = None;

    for r in r_min..=r_max {
        let ring = ring_offsets(r);
        let mut top_votes = 0u32;
        let mut top_cell = usize::MAX;
        for &(x, y) in &points {
            for &(dx, dy) in &ring {
                let (a, b) = (x - dx, y - dy);
                if a < 0 || b < 0 || a >= w as isize || b >= h as isize {
                    continue;
                }
                let cell = b as usize * w + a as usize;
                if acc[cell] == 0 {
                    touched.push(cell);
                }
                acc[cell] += 1;
                let v = acc[cell];
                if v > top_votes || (v == top_votes && cell < top_cell) {
                    top_votes = v;
                    top_cell = cell;
                }
            }
        }
        if top_votes > 0 && best.is_none_or(|c| top_votes > c.votes) {
            best = Some(HoughCircle {
                a: (top_cell % w) as f64,
                b: (top_cell / w) as f64,
                r: r as f64,
                votes: top_votes,
            });
        }
        for cell in touched.drain(..) {
            acc[cell] = 0;
        }
    }
    best.ok_or(Error::NoCircle)
}
