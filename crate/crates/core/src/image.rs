//! Real-valued images on a periodic grid.
//!
//! Samples are stored row-major. Column index `col` is the geometric `x`
//! coordinate; the geometric `y` axis points *up*, so `y = -row` (modulo the
//! grid). Every stencil, mask and transfer function in this crate uses that
//! convention, which keeps the sign of `Cxy` consistent between the spatial
//! and Fourier descriptions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D grid of `f64` samples with an associated grid spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealImage {
    width: usize,
    height: usize,
    spacing_h: f64,
    samples: Vec<f64>,
}

/// One tap of a correlation mask: `out(x, y) += weight * in(x + dx, y + dy)`
/// in geometric (y-up) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub dx: isize,
    pub dy: isize,
    pub weight: f64,
}

impl RealImage {
    pub fn new(width: usize, height: usize, spacing_h: f64, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} image",
                samples.len()
            )));
        }
        if !(spacing_h > 0.0 && spacing_h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got {spacing_h}"
            )));
        }
        Ok(Self {
            width,
            height,
            spacing_h,
            samples,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            spacing_h: 1.0,
            samples: vec![value; width * height],
        }
    }

    /// Builds an image from `f(col, row)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(width, height);
        for row in 0..height {
            for col in 0..width {
                img.samples[row * width + col] = f(col, row);
            }
        }
        img
    }

    /// Unit impulse at the grid center `(width / 2, height / 2)`.
    pub fn impulse(width: usize, height: usize) -> Self {
        Self::impulse_at(width, height, width / 2, height / 2)
    }

    pub fn impulse_at(width: usize, height: usize, col: usize, row: usize) -> Self {
        let mut img = Self::zeros(width, height);
        img.set(col, row, 1.0);
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing_h(&self) -> f64 {
        self.spacing_h
    }

    pub fn with_spacing(mut self, spacing_h: f64) -> Self {
        self.spacing_h = spacing_h;
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Grid index of the kernel origin.
    pub fn center(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.samples[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        self.samples[row * self.width + col] = value;
    }

    /// Sample with periodic wrap-around.
    #[inline]
    pub fn get_periodic(&self, col: isize, row: isize) -> f64 {
        let c = col.rem_euclid(self.width as isize) as usize;
        let r = row.rem_euclid(self.height as isize) as usize;
        self.samples[r * self.width + c]
    }

    /// Sample at geometric offset `(dx, dy)` from the grid center.
    pub fn at_offset(&self, dx: isize, dy: isize) -> f64 {
        let (cc, cr) = self.center();
        self.get_periodic(cc as isize + dx, cr as isize - dy)
    }

    pub fn same_shape(&self, other: &RealImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn sum(&self) -> f64 {
        self.samples.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.samples.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(sum |v|^p)^(1/p)`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p == 1.0 {
            return self.samples.iter().map(|v| v.abs()).sum();
        }
        self.samples
            .iter()
            .map(|v| v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    pub fn max_abs_diff(&self, other: &RealImage) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn l1_distance(&self, other: &RealImage) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.samples.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            samples: self.samples.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn check_shape(&self, other: &RealImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Periodic correlation with a sparse mask given in geometric offsets.
    ///
    /// Rows are processed in parallel; each output sample is a pure gather so
    /// the result does not depend on the partitioning.
    pub fn correlate(&self, taps: &[Tap]) -> RealImage {
        let w = self.width as isize;
        let h = self.height as isize;
        let mut out = vec![0.0; self.samples.len()];
        out.par_chunks_mut(self.width)
            .enumerate()
            .for_each(|(row, out_row)| {
                let row = row as isize;
                for tap in taps {
                    let src_row = (row - tap.dy).rem_euclid(h) as usize;
                    let src = &self.samples[src_row * self.width..(src_row + 1) * self.width];
                    let shift = tap.dx.rem_euclid(w) as usize;
                    // out[col] += weight * src[(col + dx) mod w]
                    let (tail, head) = src.split_at(shift);
                    let (o_head, o_tail) = out_row.split_at_mut(self.width - shift);
                    for (o, s) in o_head.iter_mut().zip(head) {
                        *o += tap.weight * s;
                    }
                    for (o, s) in o_tail.iter_mut().zip(tail) {
                        *o += tap.weight * s;
                    }
                }
            });
        RealImage {
            width: self.width,
            height: self.height,
            spacing_h: self.spacing_h,
            samples: out,
        }
    }

    /// Quarter-turn rotation (counter-clockwise in y-up coordinates) about
    /// the periodic origin at index `(0, 0)`. Requires a square image.
    pub fn rotate_quarter(&self) -> Result<RealImage> {
        if self.width != self.height {
            return Err(Error::DimensionMismatch(
                "quarter-turn rotation needs a square image".into(),
            ));
        }
        let n = self.width;
        // (x', y') = (-y, x): new(col', row') = old(col = -row', row = col')
        Ok(
            RealImage::from_fn(n, n, |col, row| self.get((n - row) % n, col))
                .with_spacing(self.spacing_h),
        )
    }

    /// Places this image's center on the center of a `width` x `height`
    /// zero grid, cropping or padding as needed.
    pub fn recentered(&self, width: usize, height: usize) -> RealImage {
        let mut out = RealImage::zeros(width, height).with_spacing(self.spacing_h);
        let (sc, sr) = self.center();
        let (dc, dr) = out.center();
        for row in 0..self.height {
            for col in 0..self.width {
                let c = dc as isize + col as isize - sc as isize;
                let r = dr as isize + row as isize - sr as isize;
                if c >= 0 && r >= 0 && (c as usize) < width && (r as usize) < height {
                    out.set(c as usize, r as usize, self.get(col, row));
                }
            }
        }
        out
    }
}
