//! A single entry point over the three smoothing implementations, so that
//! derivative, colour and bank code can stay path-agnostic.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::derivatives::{
    lp_norm_factor, variance_factor, DirectionalOperator, NormMode, NormalizationSpec,
};
use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::iterkernel::{iterate, plan_iterations, IterationPlan};
use crate::pyramid::{
    accumulated_scale, equivalent_derivative_kernel, equivalent_kernel, equivalent_kernel_size,
    state_at, state_for_scale, PyramidConfig,
};
use crate::semidiscrete::{generate_kernel_with, smooth_with, FeasibilityMode, SemiDiscreteParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    #[default]
    Fourier,
    Iter3x3,
    Pyramid,
}

impl std::str::FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourier" => Ok(Self::Fourier),
            "iter3x3" => Ok(Self::Iter3x3),
            "pyramid" => Ok(Self::Pyramid),
            other => Err(Error::InvalidParameter(format!(
                "unknown smoothing path '{other}'"
            ))),
        }
    }
}

/// Settings that turn a total covariance into a [`SmoothingPath`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathOptions {
    pub kind: PathKind,
    pub mode: FeasibilityMode,
    /// Stencil step for the 3x3 and pyramid paths.
    pub delta_s: f64,
    pub pyramid_k: u32,
    pub rho: f64,
    pub max_levels: u32,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            kind: PathKind::Fourier,
            mode: FeasibilityMode::Strict,
            delta_s: 0.5,
            pyramid_k: 3,
            rho: 1.0,
            max_levels: 8,
        }
    }
}

impl PathOptions {
    pub fn with_kind(kind: PathKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Path realizing the total covariance `sigma`.
    pub fn build(&self, sigma: &CovarianceSpec) -> Result<SmoothingPath> {
        let (unit, s) = sigma.normalize();
        match self.kind {
            PathKind::Fourier => {
                let params = SemiDiscreteParams::minimal(unit, s)?;
                if self.mode == FeasibilityMode::Strict {
                    params.check_feasible()?;
                }
                Ok(SmoothingPath::Fourier {
                    params,
                    mode: self.mode,
                })
            }
            PathKind::Iter3x3 => Ok(SmoothingPath::Iter3x3 {
                plan: plan_iterations(&unit, s, self.delta_s)?,
            }),
            PathKind::Pyramid => {
                let config = PyramidConfig::new(
                    self.pyramid_k,
                    self.delta_s,
                    unit,
                    self.rho,
                    self.max_levels,
                )?;
                let (level, k) = state_for_scale(&config, s)?;
                Ok(SmoothingPath::Pyramid { config, level, k })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "lowercase")]
pub enum SmoothingPath {
    Fourier {
        params: SemiDiscreteParams,
        mode: FeasibilityMode,
    },
    Iter3x3 {
        plan: IterationPlan,
    },
    Pyramid {
        config: PyramidConfig,
        level: u32,
        k: usize,
    },
}

impl SmoothingPath {
    pub fn kind(&self) -> PathKind {
        match self {
            Self::Fourier { .. } => PathKind::Fourier,
            Self::Iter3x3 { .. } => PathKind::Iter3x3,
            Self::Pyramid { .. } => PathKind::Pyramid,
        }
    }

    /// Covariance actually realized, which for the pyramid path is the
    /// nearest reachable scale.
    pub fn covariance(&self) -> Result<CovarianceSpec> {
        match self {
            Self::Fourier { params, .. } => params.spec.scaled(params.s),
            Self::Iter3x3 { plan } => {
                let st = &plan.stencil;
                let total = plan.total_s();
                CovarianceSpec::new(st.cxx * total, st.cxy * total, st.cyy * total)
            }
            Self::Pyramid { config, level, k } => {
                config.spec.scaled(accumulated_scale(config, *level, *k)?)
            }
        }
    }

    /// Smoothed field; on the pyramid path it lives on the coarse grid and
    /// carries that grid's spacing.
    pub fn smooth(&self, image: &RealImage) -> Result<RealImage> {
        match self {
            Self::Fourier { params, mode } => Ok(smooth_with(image, params, *mode)?.image),
            Self::Iter3x3 { plan } => iterate(image, plan),
            Self::Pyramid { config, level, k } => Ok(state_at(image, config, *level, *k)?.image),
        }
    }

    /// Even grid size that holds the kernel with negligible truncation.
    pub fn natural_kernel_size(&self) -> Result<usize> {
        match self {
            Self::Pyramid { config, level, k } => {
                Ok(equivalent_kernel_size(config, *level, *k)? + (4usize << level))
            }
            _ => {
                let radius = (8.0 * self.covariance()?.lambda_max().sqrt()).ceil() as usize + 4;
                Ok(2 * radius)
            }
        }
    }

    /// Full-resolution impulse response centered on a `width` x `height` grid.
    pub fn impulse_response(&self, width: usize, height: usize) -> Result<RealImage> {
        match self {
            Self::Fourier { params, mode } => {
                Ok(generate_kernel_with(params, width, height, *mode)?.image)
            }
            Self::Iter3x3 { plan } => iterate(&RealImage::impulse(width, height), plan),
            Self::Pyramid { config, level, k } => {
                Ok(equivalent_kernel(config, *level, *k)?.recentered(width, height))
            }
        }
    }

    /// Impulse response of smoothing followed by `op`, in original-grid
    /// derivative units.
    pub fn derivative_impulse_response(
        &self,
        op: &DirectionalOperator,
        width: usize,
        height: usize,
    ) -> Result<RealImage> {
        match self {
            Self::Pyramid { config, level, k } => Ok(equivalent_derivative_kernel(
                config, *level, *k, op.phi, op.order_m, op.order_n,
            )?
            .recentered(width, height)),
            _ => Ok(op.apply(&self.impulse_response(width, height)?, 1.0)),
        }
    }
}

/// Scale-normalization factor for `op` applied after `path`; `None` means
/// raw responses (factor 1).
pub fn normalization_factor(
    path: &SmoothingPath,
    op: &DirectionalOperator,
    norm: Option<&NormalizationSpec>,
) -> Result<f64> {
    let Some(norm) = norm else { return Ok(1.0) };
    norm.validate()?;
    let sigma = path.covariance()?;
    match norm.mode {
        NormMode::Variance => Ok(variance_factor(
            &sigma,
            norm.gamma1,
            norm.gamma2,
            op.order_m,
            op.order_n,
        )),
        NormMode::Lp => {
            let n = path.natural_kernel_size()?;
            let kernel = path.derivative_impulse_response(op, n, n)?;
            lp_norm_factor(&kernel, &sigma, norm, op.phi, op.order_m, op.order_n)
        }
    }
}

/// Applies `op` to an already smoothed field and scales by `factor`.
pub fn derivative_response(
    smoothed: &RealImage,
    op: &DirectionalOperator,
    factor: f64,
) -> RealImage {
    op.apply(smoothed, smoothed.spacing_h()).scaled(factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::kernel_moments;
    use std::f64::consts::PI;

    fn sigma() -> CovarianceSpec {
        CovarianceSpec::from_eigen(8.0, 2.0, PI / 3.0).unwrap()
    }

    #[test]
    fn path_kind_parsing() {
        assert_eq!("iter3x3".parse::<PathKind>().unwrap(), PathKind::Iter3x3);
        assert!("gaussian".parse::<PathKind>().is_err());
    }

    #[test]
    fn impulse_covariance_matches_each_path() {
        for kind in [PathKind::Fourier, PathKind::Iter3x3] {
            let path = PathOptions::with_kind(kind).build(&sigma()).unwrap();
            assert_eq!(path.kind(), kind);
            let n = path.natural_kernel_size().unwrap();
            let m = kernel_moments(&path.impulse_response(n, n).unwrap());
            let expected = path.covariance().unwrap();
            assert!((m.mass - 1.0).abs() < 1e-12);
            assert!((m.covariance.xx - expected.cxx()).abs() < 1e-8, "{kind:?}");
            assert!((m.covariance.xy - expected.cxy()).abs() < 1e-8, "{kind:?}");
        }
        let opts = PathOptions {
            kind: PathKind::Pyramid,
            rho: 2.0,
            ..PathOptions::default()
        };
        let path = opts.build(&sigma().scaled(4.0).unwrap()).unwrap();
        let SmoothingPath::Pyramid { level, .. } = path else {
            panic!()
        };
        assert!(level >= 1);
        let n = path.natural_kernel_size().unwrap();
        let m = kernel_moments(&path.impulse_response(n, n).unwrap());
        let expected = path.covariance().unwrap();
        assert!((m.covariance.yy - expected.cyy()).abs() < 1e-8);
        assert!((expected.lambda1() - 32.0).abs() <= 2.0);
    }

    #[test]
    fn smooth_agrees_with_impulse_response() {
        let n = 48;
        let img = RealImage::from_fn(n, n, |c, r| ((c * 7 + r * 3) % 11) as f64);
        for kind in [PathKind::Fourier, PathKind::Iter3x3] {
            let path = PathOptions::with_kind(kind).build(&sigma()).unwrap();
            let kernel = path.impulse_response(n, n).unwrap();
            let smoothed = path.smooth(&img).unwrap();
            let (cc, cr) = (n / 2, n / 2);
            // out(center) = sum_x in(x) kernel(2 center - x) for a convolution
            let direct: f64 = (0..n)
                .flat_map(|r| (0..n).map(move |c| (c, r)))
                .map(|(c, r)| {
                    img.get(c, r) * kernel.get((2 * cc + n - c) % n, (2 * cr + n - r) % n)
                })
                .sum();
            assert!((smoothed.get(cc, cr) - direct).abs() < 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn strict_fourier_rejects_infeasible() {
        let bad = CovarianceSpec::from_eigen(1.0, 1.0 / 6.0, PI / 8.0).unwrap();
        assert!(PathOptions::default().build(&bad).is_err());
        let permissive = PathOptions {
            mode: FeasibilityMode::Permissive,
            ..PathOptions::default()
        };
        assert!(permissive.build(&bad).is_ok());
    }

    #[test]
    fn normalization_factor_modes() {
        let path = PathOptions::default()
            .build(&CovarianceSpec::isotropic(16.0).unwrap())
            .unwrap();
        let op = DirectionalOperator::new(0.0, 1, 0).unwrap();
        assert_eq!(normalization_factor(&path, &op, None).unwrap(), 1.0);
        let var =
            normalization_factor(&path, &op, Some(&NormalizationSpec::variance(1.0, 1.0))).unwrap();
        assert!((var - 4.0).abs() < 1e-12);
        let lp =
            normalization_factor(&path, &op, Some(&NormalizationSpec::lp(1.0, 1.0, 1.0))).unwrap();
        assert!((lp / var - 1.0).abs() < 0.05, "{lp}");
    }

    #[test]
    fn serializes_with_path_tag() {
        let path = PathOptions::with_kind(PathKind::Iter3x3)
            .build(&sigma())
            .unwrap();
        let json = serde_json::to_value(path).unwrap();
        assert_eq!(json["path"], "iter3x3");
    }
}
