//! Self-guided edge-preserving filter used to pre-smooth eye frames.
//!
//! Every `(2r+1)²` window ω (clipped at the borders) fits the linear model
//! `Î = a·I + b` with `a = σ²/(σ²+ε)` and `b = (1−a)·μ`, where μ and σ² are
//! the window mean and variance of the guidance image (the input itself).
//! The output at a pixel is the average of the models of all windows that
//! cover it.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedFilterParams {
    window_radius: usize,
    epsilon: f64,
}

impl GuidedFilterParams {
    pub fn new(window_radius: usize, epsilon: f64) -> Result<Self> {
        if window_radius < 1 {
            return Err(Error::InvalidParameter(
                "guided filter window radius must be >= 1".into(),
            ));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "guided filter epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            window_radius,
            epsilon,
        })
    }

    pub fn window_radius(&self) -> usize {
        self.window_radius
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for GuidedFilterParams {
    /// Radius 2, ε = 400 (a 20-level intensity deviation on the 0–255 scale).
    fn default() -> Self {
        Self {
            window_radius: 2,
            epsilon: 400.0,
        }
    }
}

/// Summed-area table with one row/column of zero padding.
struct Integral {
    width: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(width: usize, height: usize, values: impl Fn(usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += values(y * width + x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { width, sums }
    }

    /// Sum over the inclusive rectangle `[x0,x1] × [y0,y1]`.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.width + 1;
        self.sums[(y1 + 1) * s + x1 + 1] - self.sums[y0 * s + x1 + 1] - self.sums[(y1 + 1) * s + x0]
            + self.sums[y0 * s + x0]
    }
}

struct Windows {
    width: usize,
    height: usize,
    radius: usize,
}

impl Windows {
    fn bounds(&self, x: usize, y: usize) -> (usize, usize, usize, usize, f64) {
        let x0 = x.saturating_sub(self.radius);
        let y0 = y.saturating_sub(self.radius);
        let x1 = (x + self.radius).min(self.width - 1);
        let y1 = (y + self.radius).min(self.height - 1);
        let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        (x0, y0, x1, y1, n)
    }

    fn box_mean(&self, table: &Integral) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let (x0, y0, x1, y1, n) = self.bounds(x, y);
                out.push(table.sum(x0, y0, x1, y1) / n);
            }
        }
        out
    }
}

pub fn guided_filter(img: &ImageBuffer, params: &GuidedFilterParams) -> Result<ImageBuffer> {
    img.require_single_channel()?;
    let (w, h) = (img.width(), img.height());
    let data = img.data();
    let windows = Windows {
        width: w,
        height: h,
        radius: params.window_radius,
    };

    let mean = windows.box_mean(&Integral::new(w, h, |i| data[i]));
    let mean_sq = windows.box_mean(&Integral::new(w, h, |i| data[i] * data[i]));

    let mut a = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    for (&m, &m2) in mean.iter().zip(&mean_sq) {
        let var = (m2 - m * m).max(0.0);
        let ak = var / (var + params.epsilon);
        a.push(ak);
        b.push((1.0 - ak) * m);
    }

    let mean_a = windows.box_mean(&Integral::new(w, h, |i| a[i]));
    let mean_b = windows.box_mean(&Integral::new(w, h, |i| b[i]));

    let out = data
        .iter()
        .zip(mean_a.iter().zip(&mean_b))
        .map(|(&v, (&ma, &mb))| ma * v + mb)
        .collect();
    ImageBuffer::from_vec(w, h, 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation: visit every window, fit its model, accumulate the
    /// model prediction at each covered pixel, divide by the cover count.
    fn brute_force(img: &ImageBuffer, radius: usize, eps: f64) -> Vec<f64> {
        let (w, h) = (img.width() as isize, img.height() as isize);
        let r = radius as isize;
        let mut acc = vec![0.0; (w * h) as usize];
        let mut count = vec![0.0; (w * h) as usize];
        for cy in 0..h {
            for cx in 0..w {
                let mut vals = Vec::new();
                for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
                    for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
                        vals.push(img.get(x as usize, y as usize, 0));
                    }
                }
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let a = var / (var + eps);
                let b = (1.0 - a) * mean;
                for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
                    for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
                        let i = (y * w + x) as usize;
                        acc[i] += a * img.get(x as usize, y as usize, 0) + b;
                        count[i] += 1.0;
                    }
                }
            }
        }
        acc.iter().zip(&count).map(|(a, c)| a / c).collect()
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = ImageBuffer::filled(9, 7, 1, 128.0).unwrap();
        for (r, eps) in [(1, 0.01), (3, 100.0), (5, 1e6)] {
            let out = guided_filter(&img, &GuidedFilterParams::new(r, eps).unwrap()).unwrap();
            assert!(out.data().iter().all(|&v| v == 128.0));
        }
    }

    #[test]
    fn strip_matches_direct_window_evaluation() {
        // 1-D strip [10,10,90,90], radius 1, eps 100.
        let img = ImageBuffer::from_vec(4, 1, 1, vec![10.0, 10.0, 90.0, 90.0]).unwrap();
        let out = guided_filter(&img, &GuidedFilterParams::new(1, 100.0).unwrap()).unwrap();
        let expected = brute_force(&img, 1, 100.0);
        // Frozen from the direct evaluation above.
        let frozen = [
            10.875_912_408_759_124,
            11.751_824_817_518_248,
            88.248_175_182_481_76,
            89.124_087_591_240_88,
        ];
        for i in 0..4 {
            assert!((expected[i] - frozen[i]).abs() < 1e-9, "{expected:?}");
            assert!((out.data()[i] - frozen[i]).abs() < 1e-9, "{:?}", out.data());
        }
    }

    #[test]
    fn tiny_epsilon_approaches_identity() {
        let img = ImageBuffer::from_fn(12, 10, 1, |x, y, _| ((x * 37 + y * 91) % 200) as f64).unwrap();
        let out = guided_filter(&img, &GuidedFilterParams::new(2, 1e-9).unwrap()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_color_and_bad_params() {
        let img = ImageBuffer::new(4, 4, 3).unwrap();
        assert!(matches!(
            guided_filter(&img, &GuidedFilterParams::default()),
            Err(Error::NotSingleChannel(3))
        ));
        assert!(GuidedFilterParams::new(0, 1.0).is_err());
        assert!(GuidedFilterParams::new(1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_stays_in_range(
            w in 1usize..12,
            h in 1usize..12,
            r in 1usize..4,
            eps in 1.0f64..5000.0,
            seed in any::<u64>(),
        ) {
            let mut s = seed;
            let img = ImageBuffer::from_fn(w, h, 1, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) % 256) as f64
            }).unwrap();
            let out = guided_filter(&img, &GuidedFilterParams::new(r, eps).unwrap()).unwrap();
            let oracle = brute_force(&img, r, eps);
            let (lo, hi) = img.min_max();
            for (a, b) in out.data().iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-7);
                prop_assert!(*a >= lo - 1e-9 && *a <= hi + 1e-9);
            }
        }
    }
}
