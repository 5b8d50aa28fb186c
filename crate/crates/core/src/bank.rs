//! Receptive-field filter banks over size, eccentricity and orientation.
//!
//! Entries sharing a covariance share one smoothing pass; only the
//! difference operators are applied per derivative order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::derivatives::{DirectionalOperator, NormalizationSpec};
use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::smoothing::{derivative_response, normalization_factor, PathOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSpec {
    /// Largest eigenvalue of each size.
    pub sizes: Vec<f64>,
    /// `lambda_min / lambda_max` ratios in `(0, 1]`.
    pub eccentricities: Vec<f64>,
    pub num_orientations: usize,
    pub orders: Vec<(u32, u32)>,
    #[serde(default)]
    pub path: PathOptions,
    #[serde(default)]
    pub norm: Option<NormalizationSpec>,
}

impl Default for BankSpec {
    fn default() -> Self {
        Self {
            sizes: vec![4.0, 16.0],
            eccentricities: vec![1.0, 0.5, 0.25],
            num_orientations: 6,
            orders: vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)],
            path: PathOptions::default(),
            norm: None,
        }
    }
}

fn geometric(first: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| first * ratio.powi(i as i32)).collect()
}

impl BankSpec {
    /// Geometric size and eccentricity sequences.
    #[allow(clippy::too_many_arguments)]
    pub fn geometric(
        first_size: f64,
        size_ratio: f64,
        num_sizes: usize,
        first_eccentricity: f64,
        eccentricity_ratio: f64,
        num_eccentricities: usize,
        num_orientations: usize,
        orders: Vec<(u32, u32)>,
    ) -> Self {
        Self {
            sizes: geometric(first_size, size_ratio, num_sizes),
            eccentricities: geometric(first_eccentricity, eccentricity_ratio, num_eccentricities),
            num_orientations,
            orders,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty()
            || self.eccentricities.is_empty()
            || self.num_orientations == 0
            || self.orders.is_empty()
        {
            return Err(Error::EmptyBank);
        }
        for &s in &self.sizes {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::OutOfRange {
                    value: s,
                    what: "bank sizes must be positive",
                });
            }
        }
        for &e in &self.eccentricities {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::OutOfRange {
                    value: e,
                    what: "eccentricity ratios must lie in (0, 1]",
                });
            }
        }
        for &(m, n) in &self.orders {
            DirectionalOperator::new(0.0, m, n)?;
        }
        if let Some(norm) = &self.norm {
            norm.validate()?;
        }
        Ok(())
    }

    /// `j * pi / num_orientations`.
    pub fn orientation(&self, j: usize) -> f64 {
        j as f64 * PI / self.num_orientations as f64
    }
}

/// Response key; ordering makes result assembly order-independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BankKey {
    pub size: usize,
    pub eccentricity: usize,
    pub orientation: usize,
    pub m: u32,
    pub n: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub key: BankKey,
    pub lambda_max: f64,
    pub eccentricity: f64,
    pub phi: f64,
    pub covariance: CovarianceSpec,
    /// Whether a non-negative `Cxxyy` exists for this covariance.
    pub feasible: bool,
}

impl BankEntry {
    /// Identifies the smoothing shared by entries with equal covariance;
    /// isotropic entries ignore orientation.
    fn smoothing_group(&self) -> (usize, usize, usize) {
        let k = &self.key;
        let orientation = if self.eccentricity == 1.0 {
            0
        } else {
            k.orientation
        };
        (k.size, k.eccentricity, orientation)
    }
}

fn covariance_for(lambda_max: f64, ratio: f64, phi: f64) -> Result<CovarianceSpec> {
    if ratio == 1.0 {
        CovarianceSpec::isotropic(lambda_max)
    } else {
        CovarianceSpec::from_eigen(lambda_max, lambda_max * ratio, phi)
    }
}

pub fn enumerate_bank(spec: &BankSpec) -> Result<Vec<BankEntry>> {
    spec.validate()?;
    let mut entries = Vec::new();
    for (si, &size) in spec.sizes.iter().enumerate() {
        for (ei, &ecc) in spec.eccentricities.iter().enumerate() {
            for oi in 0..spec.num_orientations {
                let phi = spec.orientation(oi);
                let covariance = covariance_for(size, ecc, phi)?;
                let f = covariance.cxxyy_feasibility();
                let feasible = f.lower <= f.upper + 1e-12 * covariance.lambda_max();
                for &(m, n) in &spec.orders {
                    entries.push(BankEntry {
                        key: BankKey {
                            size: si,
                            eccentricity: ei,
                            orientation: oi,
                            m,
                            n,
                        },
                        lambda_max: size,
                        eccentricity: ecc,
                        phi,
                        covariance,
                        feasible,
                    });
                }
            }
        }
    }
    Ok(entries)
}

/// Angle from the pole of the hemisphere of shapes, in degrees, for the
/// ratio `lambda_min / lambda_max`.
pub fn hemisphere_angle(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::OutOfRange {
            value: ratio,
            what: "eccentricity ratio must lie in (0, 1]",
        });
    }
    Ok(ratio.sqrt().acos().to_degrees())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub key: BankKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankResponse {
    pub entry: BankEntry,
    pub factor: f64,
    pub image: RealImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankResponses {
    pub responses: BTreeMap<BankKey, BankResponse>,
    pub skipped: Vec<SkippedEntry>,
    /// Number of smoothing passes performed.
    pub smoothing_passes: usize,
}

pub fn apply_bank(image: &RealImage, spec: &BankSpec) -> Result<BankResponses> {
    let entries = enumerate_bank(spec)?;
    let mut skipped = Vec::new();
    let mut groups: BTreeMap<(usize, usize, usize), Vec<BankEntry>> = BTreeMap::new();
    for e in entries {
        if e.feasible {
            groups.entry(e.smoothing_group()).or_default().push(e);
        } else {
            skipped.push(SkippedEntry {
                key: e.key,
                reason: format!(
                    "eccentricity {} at orientation {:.6} exceeds the non-negativity bound",
                    1.0 / e.eccentricity,
                    e.phi
                ),
            });
        }
    }
    let passes = AtomicUsize::new(0);
    let results: Vec<std::result::Result<Vec<BankResponse>, Vec<SkippedEntry>>> = groups
        .into_values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|group| {
            let fail = |err: Error| -> Vec<SkippedEntry> {
                group
                    .iter()
                    .map(|e| SkippedEntry {
                        key: e.key,
                        reason: err.to_string(),
                    })
                    .collect()
            };
            let path = spec.path.build(&group[0].covariance).map_err(fail)?;
            passes.fetch_add(1, Ordering::Relaxed);
            let smoothed = path.smooth(image).map_err(fail)?;
            group
                .iter()
                .map(|e| {
                    let op = DirectionalOperator::new(e.phi, e.key.m, e.key.n)?;
                    let factor = normalization_factor(&path, &op, spec.norm.as_ref())?;
                    Ok(BankResponse {
                        entry: *e,
                        factor,
                        image: derivative_response(&smoothed, &op, factor),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(fail)
        })
        .collect();
    let mut responses = BTreeMap::new();
    for r in results {
        match r {
            Ok(list) => responses.extend(list.into_iter().map(|b| (b.entry.key, b))),
            Err(list) => skipped.extend(list),
        }
    }
    skipped.sort_by_key(|s| s.key);
    Ok(BankResponses {
        responses,
        skipped,
        smoothing_passes: passes.into_inner(),
    })
}
