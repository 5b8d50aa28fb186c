//! Difference operators, directional derivative masks and scale
//! normalization of derivative responses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::image::{RealImage, Tap};
use crate::reference::{check_order, lp_norm_continuous};

/// A sparse correlation mask in geometric offsets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Mask {
    entries: BTreeMap<(isize, isize), f64>,
}

impl Mask {
    pub fn from_entries(entries: &[((isize, isize), f64)]) -> Self {
        let mut mask = Mask::default();
        for &(offset, weight) in entries {
            mask.add(offset, weight);
        }
        mask
    }

    pub fn identity() -> Self {
        Self::from_entries(&[((0, 0), 1.0)])
    }

    fn add(&mut self, offset: (isize, isize), weight: f64) {
        *self.entries.entry(offset).or_insert(0.0) += weight;
    }

    /// Coefficient at geometric offset `(dx, dy)`.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        self.entries.get(&(dx, dy)).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Largest `|dx|` or `|dy|` with a nonzero entry.
    pub fn radius(&self) -> usize {
        self.entries
            .iter()
            .filter(|(_, w)| **w != 0.0)
            .map(|((dx, dy), _)| dx.unsigned_abs().max(dy.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn scaled(&self, factor: f64) -> Mask {
        Mask {
            entries: self
                .entries
                .iter()
                .map(|(&k, &w)| (k, w * factor))
                .collect(),
        }
    }

    pub fn plus(&self, other: &Mask) -> Mask {
        let mut out = self.clone();
        for (&k, &w) in &other.entries {
            out.add(k, w);
        }
        out
    }

    /// Composition of two correlation operators (applying `self` after
    /// `other`).
    pub fn compose(&self, other: &Mask) -> Mask {
        let mut out = Mask::default();
        for (&(ax, ay), &wa) in &self.entries {
            for (&(bx, by), &wb) in &other.entries {
                out.add((ax + bx, ay + by), wa * wb);
            }
        }
        out
    }

    pub fn taps(&self) -> Vec<Tap> {
        self.entries
            .iter()
            .filter(|(_, w)| **w != 0.0)
            .map(|(&(dx, dy), &weight)| Tap { dx, dy, weight })
            .collect()
    }

    /// Periodic correlation.
    pub fn apply(&self, image: &RealImage) -> RealImage {
        image.correlate(&self.taps())
    }

    /// Dense `(2r+1)^2` matrix, row 0 at `dy = +r`.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        let r = self.radius() as isize;
        (-r..=r)
            .rev()
            .map(|dy| (-r..=r).map(|dx| self.at(dx, dy)).collect())
            .collect()
    }
}

/// The basic central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMasks {
    pub dx: Mask,
    pub dy: Mask,
    pub dxx: Mask,
    pub dyy: Mask,
    pub dxy: Mask,
    pub dxxyy: Mask,
}

pub fn central_difference_masks() -> DifferenceMasks {
    let dx = Mask::from_entries(&[((1, 0), 0.5), ((-1, 0), -0.5)]);
    let dy = Mask::from_entries(&[((0, 1), 0.5), ((0, -1), -0.5)]);
    let dxx = Mask::from_entries(&[((1, 0), 1.0), ((0, 0), -2.0), ((-1, 0), 1.0)]);
    let dyy = Mask::from_entries(&[((0, 1), 1.0), ((0, 0), -2.0), ((0, -1), 1.0)]);
    let dxy = dx.compose(&dy);
    let dxxyy = dxx.compose(&dyy);
    DifferenceMasks {
        dx,
        dy,
        dxx,
        dyy,
        dxy,
        dxxyy,
    }
}

/// Discrete derivative of order `m` along `phi` and `n` across it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalOperator {
    pub phi: f64,
    pub order_m: u32,
    pub order_n: u32,
    pub mask: Mask,
}

impl DirectionalOperator {
    pub fn new(phi: f64, order_m: u32, order_n: u32) -> Result<Self> {
        check_order(order_m, order_n)?;
        let d = central_difference_masks();
        let (s, c) = phi.sin_cos();
        let mask = match (order_m, order_n) {
            (0, 0) => Mask::identity(),
            (1, 0) => d.dx.scaled(c).plus(&d.dy.scaled(s)),
            (0, 1) => d.dx.scaled(-s).plus(&d.dy.scaled(c)),
            (2, 0) => d
                .dxx
                .scaled(c * c)
                .plus(&d.dxy.scaled(2.0 * c * s))
                .plus(&d.dyy.scaled(s * s)),
            // the composition of the two first-order operators
            (1, 1) => d
                .dxx
                .scaled(-c * s)
                .plus(&d.dxy.scaled(c * c - s * s))
                .plus(&d.dyy.scaled(c * s)),
            _ => d
                .dxx
                .scaled(s * s)
                .plus(&d.dxy.scaled(-2.0 * c * s))
                .plus(&d.dyy.scaled(c * c)),
        };
        Ok(Self {
            phi,
            order_m,
            order_n,
            mask,
        })
    }

    pub fn total_order(&self) -> u32 {
        self.order_m + self.order_n
    }

    /// Applies the mask and rescales to original-grid units.
    pub fn apply(&self, image: &RealImage, spacing_h: f64) -> RealImage {
        if self.total_order() == 0 {
            return image.clone();
        }
        self.mask
            .apply(image)
            .scaled(spacing_h.powi(-(self.total_order() as i32)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Variance,
    Lp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub gamma1: f64,
    pub gamma2: f64,
    pub mode: NormMode,
    pub p: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            gamma1: 1.0,
            gamma2: 1.0,
            mode: NormMode::Variance,
            p: 1.0,
        }
    }
}

impl NormalizationSpec {
    pub fn variance(gamma1: f64, gamma2: f64) -> Self {
        Self {
            gamma1,
            gamma2,
            mode: NormMode::Variance,
            p: 1.0,
        }
    }

    pub fn lp(gamma1: f64, gamma2: f64, p: f64) -> Self {
        Self {
            gamma1,
            gamma2,
            mode: NormMode::Lp,
            p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1.is_finite() && self.gamma2.is_finite()) {
            return Err(Error::InvalidParameter(
                "normalization exponents must be finite".into(),
            ));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::OutOfRange {
                value: self.p,
                what: "p must be at least 1",
            });
        }
        Ok(())
    }
}

/// `lambda1^(m gamma1 / 2) * lambda2^(n gamma2 / 2)`.
pub fn variance_factor(spec: &CovarianceSpec, gamma1: f64, gamma2: f64, m: u32, n: u32) -> f64 {
    spec.lambda1().powf(m as f64 * gamma1 / 2.0) * spec.lambda2().powf(n as f64 * gamma2 / 2.0)
}

pub fn variance_normalize(
    response: &RealImage,
    spec: &CovarianceSpec,
    norm: &NormalizationSpec,
    m: u32,
    n: u32,
) -> RealImage {
    response
        .clone()
        .scaled(variance_factor(spec, norm.gamma1, norm.gamma2, m, n))
}

/// Factor that gives the discrete derivative kernel the Lp norm of the
/// variance-normalized continuous derivative of `g(.; spec)`.
///
/// `discrete_kernel` is the impulse response of smoothing followed by the
/// difference operator, in original-grid units.
pub fn lp_norm_factor(
    discrete_kernel: &RealImage,
    spec: &CovarianceSpec,
    norm: &NormalizationSpec,
    phi: f64,
    m: u32,
    n: u32,
) -> Result<f64> {
    norm.validate()?;
    let discrete = discrete_kernel.lp_norm(norm.p);
    if !(discrete > 0.0) {
        return Err(Error::ZeroDiscreteNorm);
    }
    let continuous = lp_norm_continuous(spec, phi, m, n, norm.p)?;
    Ok(variance_factor(spec, norm.gamma1, norm.gamma2, m, n) * continuous / discrete)
}

/// Scales `response` by [`lp_norm_factor`]; returns the factor too.
pub fn lp_normalize(
    response: &RealImage,
    discrete_kernel: &RealImage,
    spec: &CovarianceSpec,
    norm: &NormalizationSpec,
    phi: f64,
    m: u32,
    n: u32,
) -> Result<(RealImage, f64)> {
    let factor = lp_norm_factor(discrete_kernel, spec, norm, phi, m, n)?;
    Ok((response.clone().scaled(factor), factor))
}
