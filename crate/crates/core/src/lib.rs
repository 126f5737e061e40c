//! Cooperative gaze/detector perception toolkit.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`pupil`]: guided-filter smoothing, Canny edges, Hough circle voting and
//!   two-eye averaging for eye-camera frames.
//! - [`gaze`]: screen-to-camera coordinate mapping, cadence resampling and
//!   gaze patch cropping.
//! - [`pyramid`]: LoG kernel, Gaussian/Laplacian pyramids and mask-weighted
//!   pyramid blending of the gaze patch into a camera frame.
//! - [`track`]: extended Kalman filter trajectory fusion, ground-truth
//!   conversion, time-to-collision, RMSE and gaze-zone statistics.
//! - [`eval`]: IoU, 11-point AP, mAP, precision/recall/F1 and Mish.

pub mod error;
pub mod eval;
pub mod gaze;
pub mod image;
pub mod pupil;
pub mod pyramid;
pub mod track;

pub use error::{Error, Result};
pub use image::ImageBuffer;
