//! Empirical moments of kernels on a periodic grid.

use serde::{Deserialize, Serialize};

use crate::image::RealImage;

/// Entries of a symmetric 2x2 second-moment matrix. Unlike
/// [`CovarianceSpec`](crate::covariance::CovarianceSpec) this may be
/// degenerate (e.g. the zero increment of an identity stencil).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMoments {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SecondMoments {
    pub const ZERO: Self = Self {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            xx: self.xx * factor,
            xy: self.xy * factor,
            yy: self.yy * factor,
        }
    }

    /// Eigenvalues, larger first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_trace = 0.5 * (self.xx + self.yy);
        let radius = (0.5 * (self.xx - self.yy)).hypot(self.xy);
        let l1 = half_trace + radius;
        let det = self.xx * self.yy - self.xy * self.xy;
        // det / l1 avoids cancellation for the small eigenvalue
        let l2 = if l1 != 0.0 {
            det / l1
        } else {
            half_trace - radius
        };
        (l1, l2)
    }
}

/// Mass, mean and central second moments of a kernel image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMoments {
    pub mass: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub covariance: SecondMoments,
}

/// Geometric offset of grid index `i` from `center`, wrapped into
/// `(-n/2, n/2]`.
#[inline]
pub fn wrapped_offset(i: usize, center: usize, n: usize) -> f64 {
    let mut d = i as isize - center as isize;
    let n = n as isize;
    if d > n / 2 {
        d -= n;
    } else if d <= -(n - n / 2) {
        d += n;
    }
    d as f64
}

/// Moments about the grid center `(width/2, height/2)` using periodic-aware
/// offsets; central moments are taken about the computed mean.
pub fn kernel_moments(kernel: &RealImage) -> KernelMoments {
    let (cc, cr) = kernel.center();
    let (w, h) = (kernel.width(), kernel.height());
    let mut mass = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for row in 0..h {
        let y = -wrapped_offset(row, cr, h);
        for col in 0..w {
            let v = kernel.get(col, row);
            let x = wrapped_offset(col, cc, w);
            mass += v;
            sx += v * x;
            sy += v * y;
        }
    }
    let mean_x = sx / mass;
    let mean_y = sy / mass;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for row in 0..h {
        let y = -wrapped_offset(row, cr, h) - mean_y;
        for col in 0..w {
            let v = kernel.get(col, row);
            let x = wrapped_offset(col, cc, w) - mean_x;
            sxx += v * x * x;
            sxy += v * x * y;
            syy += v * y * y;
        }
    }
    KernelMoments {
        mass,
        mean_x,
        mean_y,
        covariance: SecondMoments {
            xx: sxx / mass,
            xy: sxy / mass,
            yy: syy / mass,
        },
    }
}

impl std::ops::Add for SecondMoments {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        Self {
            xx: self.xx + other.xx,
            xy: self.xy + other.xy,
            yy: self.yy + other.yy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_wrap_into_half_open_range() {
        assert_eq!(wrapped_offset(0, 4, 8), 4.0);
        assert_eq!(wrapped_offset(7, 4, 8), 3.0);
        assert_eq!(wrapped_offset(0, 0, 8), 0.0);
        assert_eq!(wrapped_offset(7, 0, 8), -1.0);
        assert_eq!(wrapped_offset(4, 0, 8), 4.0);
        assert_eq!(wrapped_offset(2, 1, 5), 1.0);
        assert_eq!(wrapped_offset(4, 1, 5), -2.0);
    }

    #[test]
    fn diagonal_pair_has_positive_xy_in_y_up_frame() {
        // mass at geometric (1, 1) and (-1, -1)
        let mut k = RealImage::zeros(5, 5);
        k.set(3, 1, 0.5);
        k.set(1, 3, 0.5);
        let m = kernel_moments(&k);
        assert_eq!(m.mass, 1.0);
        assert_eq!(m.covariance.xy, 1.0);
        assert_eq!(m.covariance.xx, 1.0);
    }

    #[test]
    fn eigenvalues_of_diagonal() {
        let m = SecondMoments {
            xx: 1.0,
            xy: 0.0,
            yy: 4.0,
        };
        assert_eq!(m.eigenvalues(), (4.0, 1.0));
    }
}
