//! Canny edge detection: Sobel gradients, 4-direction non-maximum
//! suppression and hysteresis linking.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::{clamp_index, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyThresholds {
    low: f64,
    high: f64,
}

impl CannyThresholds {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low >= 0.0 && low < high && high.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "canny thresholds need 0 <= low < high, got low={low} high={high}"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }
}

impl Default for CannyThresholds {
    fn default() -> Self {
        Self {
            low: 50.0,
            high: 150.0,
        }
    }
}

/// Binary edge mask, `true` marks a boundary pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_points(
        width: usize,
        height: usize,
        points: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut map = Self::empty(width, height);
        for (x, y) in points {
            map.set(x, y, true);
        }
        map
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Edge pixels in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    /// 0/255 grayscale rendering.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_vec(
            self.width,
            self.height,
            1,
            self.bits.iter().map(|&b| if b { 255.0 } else { 0.0 }).collect(),
        )
        .expect("edge map dimensions are valid")
    }
}

/// Sobel responses with replicated borders.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl Gradients {
    pub fn magnitude_at(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            return 0.0;
        }
        self.magnitude[y as usize * self.width + x as usize]
    }

    /// Unit step `(dx, dy)` of the quantized gradient direction at a pixel.
    pub fn direction_step(&self, x: usize, y: usize) -> (isize, isize) {
        let i = y * self.width + x;
        quantize(self.gx[i], self.gy[i])
    }
}

pub fn sobel(img: &ImageBuffer) -> Result<Gradients> {
    img.require_single_channel()?;
    let (w, h) = (img.width(), img.height());
    let px = |x: isize, y: isize| img.get(clamp_index(x, w), clamp_index(y, h), 0);
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    let mut magnitude = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let dy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            gx.push(dx);
            gy.push(dy);
            magnitude.push(dx.hypot(dy));
        }
    }
    Ok(Gradients {
        width: w,
        height: h,
        gx,
        gy,
        magnitude,
    })
}

/// Maps a gradient vector to one of four neighbour axes (image y grows down).
fn quantize(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

pub fn canny_edges(img: &ImageBuffer, thresholds: &CannyThresholds) -> Result<EdgeMap> {
    canny_with_gradients(img, thresholds).map(|(edges, _)| edges)
}

pub(crate) fn canny_with_gradients(
    img: &ImageBuffer,
    thresholds: &CannyThresholds,
) -> Result<(EdgeMap, Gradients)> {
    let grads = sobel(img)?;
    let (w, h) = (grads.width, grads.height);

    // Thin: keep a pixel only if it dominates both neighbours along the
    // gradient. Ties go to the pixel further along the gradient so a
    // symmetric two-pixel ridge yields a single-pixel line.
    let mut thin = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let m = grads.magnitude[y * w + x];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = grads.direction_step(x, y);
            let (xi, yi) = (x as isize, y as isize);
            let behind = grads.magnitude_at(xi - dx, yi - dy);
            let ahead = grads.magnitude_at(xi + dx, yi + dy);
            if m >= behind && m > ahead {
                thin[y * w + x] = m;
            }
        }
    }

    let mut edges = EdgeMap::empty(w, h);
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= thresholds.high {
            edges.bits[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges.bits[j] && thin[j] >= thresholds.low {
                    edges.bits[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok((edges, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disc(w: usize, h: usize, cx: f64, cy: f64, r: f64, inside: f64, outside: f64) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 1, |x, y, _| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r {
                inside
            } else {
                outside
            }
        })
        .unwrap()
    }

    #[test]
    fn uniform_image_has_no_edges() {
        let img = ImageBuffer::filled(20, 15, 1, 77.0).unwrap();
        let edges = canny_edges(&img, &CannyThresholds::default()).unwrap();
        assert!(edges.is_empty());
    }

    #[test]
    fn vertical_step_edge_is_localized() {
        let c = 10;
        let img = ImageBuffer::from_fn(24, 16, 1, |x, _, _| if x < c { 20.0 } else { 220.0 }).unwrap();
        let edges = canny_edges(&img, &CannyThresholds::default()).unwrap();
        assert!(!edges.is_empty());
        for (x, _) in edges.points() {
            assert!((c - 1..=c + 1).contains(&x), "edge at column {x}");
        }
        // Every row carries the edge.
        for y in 0..16 {
            assert!((0..24).any(|x| edges.get(x, y)));
        }
    }

    #[test]
    fn filled_disc_gives_ring_near_true_circle() {
        let (cx, cy, r) = (32.0, 30.0, 12.0);
        let img = disc(64, 60, cx, cy, r, 30.0, 200.0);
        let edges = canny_edges(&img, &CannyThresholds::default()).unwrap();
        let mut n = 0;
        for (x, y) in edges.points() {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            assert!((d - r).abs() <= 1.0, "edge pixel ({x},{y}) at distance {d}");
            n += 1;
        }
        // Closed ring: every angular sector contains an edge pixel.
        assert!(n > 50);
        for sector in 0..36 {
            let theta0 = (sector as f64) * 10f64.to_radians();
            let theta1 = theta0 + 10f64.to_radians();
            let hit = edges.points().any(|(x, y)| {
                let mut t = (y as f64 - cy).atan2(x as f64 - cx);
                if t < 0.0 {
                    t += std::f64::consts::TAU;
                }
                t >= theta0 && t < theta1
            });
            assert!(hit, "gap in sector {sector}");
        }
    }

    #[test]
    fn threshold_validation() {
        assert!(CannyThresholds::new(150.0, 50.0).is_err());
        assert!(CannyThresholds::new(50.0, 50.0).is_err());
        assert!(CannyThresholds::new(-1.0, 50.0).is_err());
        assert!(CannyThresholds::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn rejects_color() {
        let img = ImageBuffer::new(4, 4, 3).unwrap();
        assert!(canny_edges(&img, &CannyThresholds::default()).is_err());
    }

    proptest! {
        #[test]
        fn offset_invariant(offset in -100i32..100, seed in any::<u64>()) {
            let mut s = seed;
            let img = ImageBuffer::from_fn(16, 12, 1, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) % 4) as f64 * 60.0 + 100.0
            }).unwrap();
            let shifted = img.map(|v| v + f64::from(offset));
            let t = CannyThresholds::default();
            prop_assert_eq!(canny_edges(&img, &t).unwrap(), canny_edges(&shifted, &t).unwrap());
        }
    }
}
