//! LoG filtering and Gaussian/Laplacian pyramid blending of a gaze patch
//! into a camera frame.
//!
//! Pyramids use a separable 5-tap binomial kernel `(1,4,6,4,1)/16` with
//! reflect-101 borders. Downsampling keeps even rows/columns (ceil halving
//! for odd sizes) and stops once the shorter side drops below 8 px.
//! Upsampling inserts zeros and blurs with 4× the kernel gain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{CropBox, ScreenGeometry};
use crate::image::{reflect101, ImageBuffer};

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Levels stop once the shorter side is below this.
pub const MIN_LEVEL_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LogKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl LogKernel {
    /// Continuous Laplacian of Gaussian:
    /// `−1/(πσ⁴) · e^(−ρ²/2σ²) · (1 − ρ²/2σ²)` with `ρ² = x² + y²`.
    pub fn continuous(sigma: f64, x: f64, y: f64) -> f64 {
        let q = (x * x + y * y) / (2.0 * sigma * sigma);
        -1.0 / (std::f64::consts::PI * sigma.powi(4)) * (-q).exp() * (1.0 - q)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major `(2r+1)²` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) * (2 * r + 1) + dx + r) as usize]
    }
}

/// Samples the continuous LoG on the integer grid and subtracts the mean so
/// the weights sum to zero.
pub fn log_kernel(sigma: f64, radius: usize) -> Result<LogKernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "LoG sigma must be positive, got {sigma}"
        )));
    }
    let min = (3.0 * sigma).ceil() as usize;
    if radius < min {
        return Err(Error::KernelTruncated { radius, min });
    }
    let r = radius as isize;
    let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
    for y in -r..=r {
        for x in -r..=r {
            weights.push(LogKernel::continuous(sigma, x as f64, y as f64));
        }
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    weights.iter_mut().for_each(|w| *w -= mean);
    Ok(LogKernel {
        sigma,
        radius,
        weights,
    })
}

/// Per-channel convolution with reflect-101 borders.
pub fn smooth_patch(patch: &ImageBuffer, kernel: &LogKernel) -> ImageBuffer {
    let (w, h, ch) = patch.dims();
    let r = kernel.radius as isize;
    ImageBuffer::from_fn(w, h, ch, |x, y, c| {
        let mut acc = 0.0;
        for j in -r..=r {
            let sy = reflect101(y as isize - j, h);
            for i in -r..=r {
                let sx = reflect101(x as isize - i, w);
                acc += kernel.at(i, j) * patch.get(sx, sy, c);
            }
        }
        acc
    })
    .expect("same shape as input")
}

/// Unsharp-style enhancement `patch − LoG∗patch`: the Laplacian response is
/// subtracted so edges gain contrast while flat regions are unchanged.
pub fn log_sharpen(patch: &ImageBuffer, kernel: &LogKernel) -> ImageBuffer {
    let response = smooth_patch(patch, kernel);
    patch
        .zip_map(&response, |p, l| (p - l).clamp(0.0, 255.0))
        .expect("same shape")
}

fn blur(img: &ImageBuffer, gain: f64) -> ImageBuffer {
    let (w, h, ch) = img.dims();
    let horiz = ImageBuffer::from_fn(w, h, ch, |x, y, c| {
        BINOMIAL
            .iter()
            .enumerate()
            .map(|(k, wk)| wk * img.get(reflect101(x as isize + k as isize - 2, w), y, c))
            .sum::<f64>()
    })
    .expect("same shape");
    ImageBuffer::from_fn(w, h, ch, |x, y, c| {
        gain * BINOMIAL
            .iter()
            .enumerate()
            .map(|(k, wk)| wk * horiz.get(x, reflect101(y as isize + k as isize - 2, h), c))
            .sum::<f64>()
    })
    .expect("same shape")
}

/// Blur then keep even rows and columns.
pub fn downsample(img: &ImageBuffer) -> ImageBuffer {
    let blurred = blur(img, 1.0);
    let (w, h, ch) = img.dims();
    ImageBuffer::from_fn(w.div_ceil(2), h.div_ceil(2), ch, |x, y, c| {
        blurred.get(2 * x, 2 * y, c)
    })
    .expect("non-empty")
}

/// Zero-insertion to `width × height` followed by a 4×-gain blur.
pub fn upsample(img: &ImageBuffer, width: usize, height: usize) -> ImageBuffer {
    let ch = img.channels();
    let sparse = ImageBuffer::from_fn(width, height, ch, |x, y, c| {
        if x % 2 == 0 && y % 2 == 0 && x / 2 < img.width() && y / 2 < img.height() {
            img.get(x / 2, y / 2, c)
        } else {
            0.0
        }
    })
    .expect("non-empty");
    blur(&sparse, 4.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPyramid {
    pub levels: Vec<ImageBuffer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPyramid {
    /// Detail bands, finest first. Band `k` has the size of Gaussian level `k`.
    pub bands: Vec<ImageBuffer>,
    /// Coarsest Gaussian level.
    pub top: ImageBuffer,
}

/// Gaussian pyramid of a single-channel mask with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPyramid {
    pub levels: Vec<ImageBuffer>,
}

pub fn build_gaussian_pyramid(img: &ImageBuffer) -> Result<GaussianPyramid> {
    if img.width().min(img.height()) < 2 {
        return Err(Error::InvalidParameter(format!(
            "pyramid input must be at least 2x2, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut levels = vec![img.clone()];
    loop {
        let last = levels.last().expect("non-empty");
        if levels.len() >= 2 && last.width().min(last.height()) < MIN_LEVEL_SIDE {
            break;
        }
        if last.width().min(last.height()) < 2 {
            break;
        }
        let next = downsample(last);
        levels.push(next);
    }
    Ok(GaussianPyramid { levels })
}

pub fn build_laplacian_pyramid(img: &ImageBuffer) -> Result<LaplacianPyramid> {
    let gauss = build_gaussian_pyramid(img)?;
    let mut bands = Vec::with_capacity(gauss.levels.len() - 1);
    for pair in gauss.levels.windows(2) {
        let (fine, coarse) = (&pair[0], &pair[1]);
        let up = upsample(coarse, fine.width(), fine.height());
        bands.push(fine.zip_map(&up, |a, b| a - b)?);
    }
    let top = gauss.levels.last().expect("at least two levels").clone();
    Ok(LaplacianPyramid { bands, top })
}

impl MaskPyramid {
    pub fn build(mask: &ImageBuffer) -> Result<MaskPyramid> {
        mask.require_single_channel()?;
        let (lo, hi) = mask.min_max();
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "mask values must lie in [0,1], got [{lo}, {hi}]"
            )));
        }
        Ok(MaskPyramid {
            levels: build_gaussian_pyramid(mask)?.levels,
        })
    }
}

/// `LS = GM·LA + (1 − GM)·LB` on every band and on the top level. The mask
/// has one channel and weights all image channels alike.
pub fn blend_pyramids(
    la: &LaplacianPyramid,
    lb: &LaplacianPyramid,
    gm: &MaskPyramid,
) -> Result<LaplacianPyramid> {
    if la.bands.len() != lb.bands.len() || gm.levels.len() != la.bands.len() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "pyramid depths differ: LA {}, LB {}, GM {}",
            la.bands.len() + 1,
            lb.bands.len() + 1,
            gm.levels.len()
        )));
    }
    let mix = |a: &ImageBuffer, b: &ImageBuffer, m: &ImageBuffer| -> Result<ImageBuffer> {
        if !a.same_shape(b) || (a.width(), a.height()) != (m.width(), m.height()) {
            return Err(Error::ShapeMismatch(format!(
                "level shapes {:?} / {:?} / {:?}",
                a.dims(),
                b.dims(),
                m.dims()
            )));
        }
        let ch = a.channels();
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .enumerate()
            .map(|(i, (&va, &vb))| {
                let g = m.data()[i / ch];
                g * va + (1.0 - g) * vb
            })
            .collect();
        ImageBuffer::from_vec(a.width(), a.height(), ch, data)
    };
    let bands = la
        .bands
        .iter()
        .zip(&lb.bands)
        .zip(&gm.levels)
        .map(|((a, b), m)| mix(a, b, m))
        .collect::<Result<Vec<_>>>()?;
    let top = mix(&la.top, &lb.top, gm.levels.last().expect("checked depth"))?;
    Ok(LaplacianPyramid { bands, top })
}

/// Collapses a pyramid without clamping.
pub fn reconstruct_unclamped(pyr: &LaplacianPyramid) -> ImageBuffer {
    let mut img = pyr.top.clone();
    for band in pyr.bands.iter().rev() {
        let up = upsample(&img, band.width(), band.height());
        img = band.zip_map(&up, |d, u| d + u).expect("band shape");
    }
    img
}

/// Collapses a pyramid and clamps the result to `[0,255]`.
pub fn reconstruct(pyr: &LaplacianPyramid) -> ImageBuffer {
    reconstruct_unclamped(pyr).map(|v| v.clamp(0.0, 255.0))
}

/// Which pyramid the mask weight goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendOrder {
    /// Mask weights the gaze layer so the gaze marker lands on top.
    #[default]
    GazeOnTop,
    /// Mask weights the camera pyramid, as in `GM·LA + (1−GM)·LB` with A the
    /// camera frame and B the gaze layer.
    Literal,
}

/// Binary disc mask.
pub fn disc_mask(width: usize, height: usize, cx: f64, cy: f64, radius: f64) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, 1, |x, y, _| {
        if (x as f64 - cx).hypot(y as f64 - cy) <= radius {
            1.0
        } else {
            0.0
        }
    })
    .expect("valid dims")
}

/// Pastes `patch` centred at `(cx, cy)` over a copy of `base`.
pub fn place_patch(base: &ImageBuffer, patch: &ImageBuffer, cx: f64, cy: f64) -> Result<ImageBuffer> {
    if patch.channels() != base.channels() {
        return Err(Error::ShapeMismatch(format!(
            "patch has {} channels, frame has {}",
            patch.channels(),
            base.channels()
        )));
    }
    let mut out = base.clone();
    let x0 = cx.round() as isize - (patch.width() / 2) as isize;
    let y0 = cy.round() as isize - (patch.height() / 2) as isize;
    for py in 0..patch.height() {
        let y = y0 + py as isize;
        if y < 0 || y >= base.height() as isize {
            continue;
        }
        for px in 0..patch.width() {
            let x = x0 + px as isize;
            if x < 0 || x >= base.width() as isize {
                continue;
            }
            for c in 0..patch.channels() {
                out.set(x as usize, y as usize, c, patch.get(px, py, c));
            }
        }
    }
    Ok(out)
}

/// Pyramid blend of a full-size gaze layer into the camera frame under
/// `mask`.
pub fn fuse_with_mask(
    camera: &ImageBuffer,
    gaze_layer: &ImageBuffer,
    mask: &ImageBuffer,
    order: BlendOrder,
) -> Result<ImageBuffer> {
    if !camera.same_shape(gaze_layer) {
        return Err(Error::ShapeMismatch(format!(
            "camera {:?} vs gaze layer {:?}",
            camera.dims(),
            gaze_layer.dims()
        )));
    }
    let la = build_laplacian_pyramid(camera)?;
    let lb = build_laplacian_pyramid(gaze_layer)?;
    let gm = MaskPyramid::build(mask)?;
    let ls = match order {
        BlendOrder::GazeOnTop => blend_pyramids(&lb, &la, &gm)?,
        BlendOrder::Literal => blend_pyramids(&la, &lb, &gm)?,
    };
    Ok(reconstruct(&ls))
}

/// Blends a gaze patch into the camera frame at the centre of `bbox`, using a
/// disc mask of the marker radius.
pub fn fuse_frame(
    camera: &ImageBuffer,
    patch: &ImageBuffer,
    bbox: &CropBox,
    geom: &ScreenGeometry,
    order: BlendOrder,
) -> Result<ImageBuffer> {
    let (w, h) = (camera.width(), camera.height());
    if bbox.outside(w as f64, h as f64) {
        return Err(Error::OffScreenGaze);
    }
    let (cx, cy) = bbox.center();
    let gaze_layer = place_patch(camera, patch, cx, cy)?;
    let mask = disc_mask(w, h, cx, cy, geom.marker_radius);
    fuse_with_mask(camera, &gaze_layer, &mask, order)
}
