//! Raster image type shared by every stage.
//!
//! Samples are stored as `f64` on the 0–255 intensity scale so that pyramid
//! bands (which are signed) and 8-bit frames share one representation.
//! Conversion to and from 8-bit or normalized `[0,1]` data is explicit.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// A zero-filled image.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    /// Wraps row-major, channel-interleaved samples.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(width, height, channels)?;
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<Self> {
        Self::from_vec(
            width,
            height,
            channels,
            data.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    /// Builds an image from samples in `[0,1]`, rescaling to 0–255.
    pub fn from_normalized(
        width: usize,
        height: usize,
        channels: usize,
        data: &[f64],
    ) -> Result<Self> {
        Self::from_vec(
            width,
            height,
            channels,
            data.iter().map(|v| v * 255.0).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    /// All channels of one pixel.
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn require_single_channel(&self) -> Result<()> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(Error::NotSingleChannel(self.channels))
        }
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two images of identical shape.
    pub fn zip_map(&self, other: &ImageBuffer, f: impl Fn(f64, f64) -> f64) -> Result<ImageBuffer> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Interleaves single-channel planes of equal size.
    pub fn from_planes(planes: &[ImageBuffer]) -> Result<ImageBuffer> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidParameter("no planes".into()))?;
        if planes
            .iter()
            .any(|p| p.channels != 1 || p.width != first.width || p.height != first.height)
        {
            return Err(Error::ShapeMismatch("planes differ in size".into()));
        }
        let n = planes.len();
        let mut data = vec![0.0; first.width * first.height * n];
        for (c, p) in planes.iter().enumerate() {
            for (i, &v) in p.data.iter().enumerate() {
                data[i * n + c] = v;
            }
        }
        ImageBuffer::from_vec(first.width, first.height, n, data)
    }

    /// Luma conversion (BT.601 weights) for 3-channel input; clones 1-channel input.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Samples rounded and clamped to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Samples divided by 255.
    pub fn to_normalized(&self) -> Vec<f64> {
        self.data.iter().map(|v| v / 255.0).collect()
    }

    /// Reads an 8-bit PGM/PNM or PNG file. Gray and gray-alpha decode to one
    /// channel, everything else to RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<ImageBuffer> {
        let path = path.as_ref();
        let img = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            ImageBuffer::from_u8(w, h, 3, rgb.as_raw())
        } else {
            let gray = img.to_luma8();
            ImageBuffer::from_u8(w, h, 1, gray.as_raw())
        }
    }

    /// Writes an 8-bit PNG (gray or RGB by channel count).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = match self.channels {
            1 => ::image::ExtendedColorType::L8,
            3 => ::image::ExtendedColorType::Rgb8,
            n => {
                return Err(Error::InvalidParameter(format!(
                    "cannot encode {n}-channel image"
                )))
            }
        };
        ::image::save_buffer_with_format(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
            ::image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "image dimensions must be at least 1x1, got {width}x{height}"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidParameter(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    Ok(())
}

/// Reflect-101 border index (`dcb|abcd|cba`).
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Replicate border index.
#[inline]
pub(crate) fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}
