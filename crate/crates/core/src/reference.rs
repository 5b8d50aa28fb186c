//! Continuous affine Gaussian kernels and their directional derivatives,
//! sampled on a grid, plus numerical Lp norms of the continuous
//! derivatives. These serve as the oracle for every discrete path.

use std::f64::consts::PI;

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::image::RealImage;

/// Largest number of dyadic refinements before giving up.
pub const MAX_QUADRATURE_LEVELS: u32 = 12;
/// Relative agreement required between successive refinements.
pub const QUADRATURE_TOL: f64 = 1e-8;

/// Unit vectors along `phi` and `phi + pi/2`.
pub fn direction_pair(phi: f64) -> ([f64; 2], [f64; 2]) {
    let (s, c) = phi.sin_cos();
    ([c, s], [-s, c])
}

pub(crate) fn check_order(m: u32, n: u32) -> Result<()> {
    if m + n > 2 {
        Err(Error::UnsupportedOrder { m, n })
    } else {
        Ok(())
    }
}

/// Pointwise evaluation of `d_phi^m d_perp^n g(x, y; Sigma)`.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeField {
    inv: (f64, f64, f64),
    norm: f64,
    vectors: [[f64; 2]; 2],
    m: u32,
    n: u32,
}

impl DerivativeField {
    pub fn new(spec: &CovarianceSpec, phi: f64, m: u32, n: u32) -> Result<Self> {
        check_order(m, n)?;
        let (v, w) = direction_pair(phi);
        // the first m operands are v, the remaining n are w
        let vectors = match (m, n) {
            (2, 0) => [v, v],
            (0, 2) => [w, w],
            (1, 1) => [v, w],
            (1, 0) => [v, v],
            _ => [w, w],
        };
        Ok(Self {
            inv: spec.inverse(),
            norm: 1.0 / (2.0 * PI * spec.det().sqrt()),
            vectors,
            m,
            n,
        })
    }

    fn form(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let (ixx, ixy, iyy) = self.inv;
        a[0] * (ixx * b[0] + ixy * b[1]) + a[1] * (ixy * b[0] + iyy * b[1])
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let p = [x, y];
        let g = self.norm * (-0.5 * self.form(p, p)).exp();
        match self.m + self.n {
            0 => g,
            1 => -self.form(self.vectors[0], p) * g,
            _ => {
                let [a, b] = self.vectors;
                (self.form(a, p) * self.form(b, p) - self.form(a, b)) * g
            }
        }
    }
}

fn check_odd(width: usize, height: usize) -> Result<()> {
    if width.is_multiple_of(2) || height.is_multiple_of(2) {
        Err(Error::EvenSize { width, height })
    } else {
        Ok(())
    }
}

fn sample(field: &DerivativeField, width: usize, height: usize) -> RealImage {
    let (cc, cr) = ((width / 2) as f64, (height / 2) as f64);
    RealImage::from_fn(width, height, |col, row| {
        field.value(col as f64 - cc, cr - row as f64)
    })
}

/// `g(x; Sigma)` sampled at integer offsets from the grid center; not
/// renormalized.
pub fn continuous_kernel(spec: &CovarianceSpec, width: usize, height: usize) -> Result<RealImage> {
    continuous_directional_derivative(spec, 0.0, 0, 0, width, height)
}

pub fn continuous_directional_derivative(
    spec: &CovarianceSpec,
    phi: f64,
    m: u32,
    n: u32,
    width: usize,
    height: usize,
) -> Result<RealImage> {
    check_odd(width, height)?;
    Ok(sample(
        &DerivativeField::new(spec, phi, m, n)?,
        width,
        height,
    ))
}

/// `||d_phi^m d_perp^n g||_p` over the plane.
///
/// In whitened coordinates the derivative is a polynomial of degree at most
/// two times a standard Gaussian. After a rotation the polynomial reads
/// `A y1^2 + B y1 + mu2 y2^2 + c0`, so the kinks of `|P|^p` are known in
/// closed form and the iterated integral is split there.
pub fn lp_norm_continuous(spec: &CovarianceSpec, phi: f64, m: u32, n: u32, p: f64) -> Result<f64> {
    check_order(m, n)?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::OutOfRange {
            value: p,
            what: "p must be at least 1",
        });
    }
    let poly = whitened_polynomial(spec, phi, m, n);
    let det = spec.det();
    let prefactor = (2.0 * PI * det.sqrt()).powf(-p) * det.sqrt();
    let radius = 12.0 / p.sqrt();

    let inner_failure = std::cell::RefCell::new(None);
    let outer = |y2: f64| match poly.inner_integral(y2, p, radius) {
        Ok(v) => v * (-0.5 * p * y2 * y2).exp(),
        Err(e) => {
            inner_failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let mut total = 0.0;
    for w in poly.outer_breakpoints(radius).windows(2) {
        let piece = romberg_midpoint(outer, w[0], w[1], QUADRATURE_TOL * 1e-2);
        if let Some(e) = inner_failure.borrow_mut().take() {
            return Err(e);
        }
        total += piece?;
    }
    Ok((prefactor * total).powf(1.0 / p))
}

/// `A y1^2 + B y1 + mu2 y2^2 + c0`.
#[derive(Debug, Clone, Copy)]
struct RotatedQuadratic {
    a: f64,
    b: f64,
    mu2: f64,
    c0: f64,
}

/// `inverse(L) * v` for the Cholesky factor `Sigma = L L^T`.
fn whiten(spec: &CovarianceSpec, v: [f64; 2]) -> [f64; 2] {
    let l11 = spec.cxx().sqrt();
    let l21 = spec.cxy() / l11;
    let l22 = (spec.det() / spec.cxx()).sqrt();
    let z0 = v[0] / l11;
    [z0, (v[1] - l21 * z0) / l22]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn whitened_polynomial(spec: &CovarianceSpec, phi: f64, m: u32, n: u32) -> RotatedQuadratic {
    let (v, w) = direction_pair(phi);
    match (m, n) {
        (0, 0) => RotatedQuadratic {
            a: 0.0,
            b: 0.0,
            mu2: 0.0,
            c0: 1.0,
        },
        (1, 0) | (0, 1) => {
            let a = whiten(spec, if m == 1 { v } else { w });
            RotatedQuadratic {
                a: 0.0,
                b: dot(a, a).sqrt(),
                mu2: 0.0,
                c0: 0.0,
            }
        }
        _ => {
            let (first, second) = match (m, n) {
                (2, 0) => (v, v),
                (0, 2) => (w, w),
                _ => (v, w),
            };
            let (a, b) = (whiten(spec, first), whiten(spec, second));
            // eigenvalues of (a b^T + b a^T) / 2
            let ab = dot(a, b);
            let r = dot(a, a).sqrt() * dot(b, b).sqrt();
            let (e1, e2) = (0.5 * (ab + r), 0.5 * (ab - r));
            let (big, small) = if e1.abs() >= e2.abs() {
                (e1, e2)
            } else {
                (e2, e1)
            };
            RotatedQuadratic {
                a: big,
                b: 0.0,
                mu2: small,
                c0: -ab,
            }
        }
    }
}

fn push_if_inside(points: &mut Vec<f64>, x: f64, lo: f64, hi: f64) {
    if x.is_finite() && x > lo && x < hi {
        points.push(x);
    }
}

fn finish_breaks(mut points: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    points.push(lo);
    points.push(hi);
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    points
}

impl RotatedQuadratic {
    fn constant(&self, y2: f64) -> f64 {
        self.mu2 * y2 * y2 + self.c0
    }

    /// Values of `y2` where the number of real roots in `y1` changes.
    fn outer_breakpoints(&self, radius: f64) -> Vec<f64> {
        let mut pts = vec![0.0];
        if self.mu2 != 0.0 {
            // A != 0: discriminant b^2 - 4 A C(y2) changes sign.
            // A == 0, B == 0: C(y2) itself changes sign.
            let target = if self.a != 0.0 {
                (self.b * self.b / (4.0 * self.a) - self.c0) / self.mu2
            } else if self.b == 0.0 {
                -self.c0 / self.mu2
            } else {
                f64::NAN
            };
            if target > 0.0 {
                let r = target.sqrt();
                push_if_inside(&mut pts, r, -radius, radius);
                push_if_inside(&mut pts, -r, -radius, radius);
            }
        }
        finish_breaks(pts, -radius, radius)
    }

    /// `int |P(y1, y2)|^p exp(-p y1^2 / 2) dy1` over `[-radius, radius]`.
    fn inner_integral(&self, y2: f64, p: f64, radius: f64) -> Result<f64> {
        let c = self.constant(y2);
        let mut pts = vec![0.0];
        if self.a != 0.0 {
            let disc = self.b * self.b - 4.0 * self.a * c;
            if disc > 0.0 {
                let sq = disc.sqrt();
                push_if_inside(&mut pts, (-self.b + sq) / (2.0 * self.a), -radius, radius);
                push_if_inside(&mut pts, (-self.b - sq) / (2.0 * self.a), -radius, radius);
            }
        } else if self.b != 0.0 {
            push_if_inside(&mut pts, -c / self.b, -radius, radius);
        }
        let pts = finish_breaks(pts, -radius, radius);
        let f = |y1: f64| {
            let v = (self.a * y1 + self.b) * y1 + c;
            let mag = if p == 1.0 { v.abs() } else { v.abs().powf(p) };
            mag * (-0.5 * p * y1 * y1).exp()
        };
        pts.windows(2)
            .map(|w| romberg_midpoint(f, w[0], w[1], QUADRATURE_TOL * 1e-4))
            .sum()
    }
}

/// Midpoint rule with dyadic refinement and Romberg extrapolation on
/// `[lo, hi]`, after the endpoint-smoothing substitution
/// `x = lo + (hi - lo)(3u^2 - 2u^3)`.
pub(crate) fn romberg_midpoint(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    rel_tol: f64,
) -> Result<f64> {
    let width = hi - lo;
    if width == 0.0 {
        return Ok(0.0);
    }
    let g = |u: f64| {
        let x = lo + width * u * u * (3.0 - 2.0 * u);
        f(x) * width * 6.0 * u * (1.0 - u)
    };
    let midpoint = |n: usize| {
        let h = 1.0 / n as f64;
        (0..n).map(|i| g((i as f64 + 0.5) * h)).sum::<f64>() * h
    };
    let mut n = 8;
    let mut prev_row = vec![midpoint(n)];
    for level in 1..=MAX_QUADRATURE_LEVELS {
        n *= 2;
        let mut row = vec![midpoint(n)];
        for j in 1..=level as usize {
            let factor = 4f64.powi(j as i32);
            let value = row[j - 1] + (row[j - 1] - prev_row[j - 1]) / (factor - 1.0);
            row.push(value);
        }
        let (previous, current) = (prev_row[level as usize - 1], row[level as usize]);
        let scale = current.abs().max(f64::MIN_POSITIVE);
        if (current - previous).abs() <= rel_tol * scale {
            return Ok(current);
        }
        if level == MAX_QUADRATURE_LEVELS {
            return Err(Error::QuadratureNonConvergence {
                levels: level,
                previous,
                current,
            });
        }
        prev_row = row;
    }
    unreachable!("loop returns on its last level")
}
