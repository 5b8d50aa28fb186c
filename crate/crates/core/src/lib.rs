//! Discrete affine Gaussian scale space.
//!
//! Smoothing with elongated, oriented Gaussian kernels on a square grid,
//! computed either exactly in the Fourier domain or by repeated application
//! of a non-negative 3x3 stencil, together with directional derivative
//! operators, scale normalization, affine hybrid pyramids and filter banks.

// `!(x > 0.0)` is used deliberately so NaN is rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bank;
pub mod chroma;
pub mod covariance;
pub mod derivatives;
pub mod error;
mod fft;
pub mod image;
pub mod io;
pub mod iterkernel;
pub mod moments;
pub mod pyramid;
pub mod reference;
pub mod semidiscrete;
pub mod smoothing;
pub mod verify;

pub use covariance::{max_feasible_eccentricity, CovarianceSpec, FeasibilityInterval};
pub use error::{Error, Result};
pub use image::{RealImage, Tap};
pub use moments::{kernel_moments, KernelMoments, SecondMoments};
