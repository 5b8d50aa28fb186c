//! Spatial covariance matrices of affine Gaussian kernels.
//!
//! A [`CovarianceSpec`] is a symmetric positive-definite 2x2 matrix
//! `[[cxx, cxy], [cxy, cyy]]`, cached together with its eigen form
//! `(lambda1, lambda2, alpha)` where `lambda1 >= lambda2 > 0` and `alpha` in
//! `[0, pi)` is the direction of the `lambda1` eigenvector.
//!
//! On a square grid the 3x3 generator of the semi-discrete diffusion only has
//! non-negative coefficients when the free fourth-order weight `Cxxyy` lies in
//! `[|Cxy|, min(Cxx, Cyy)]`. That interval is empty for eccentricities above
//! `3 + 2*sqrt(2)` at the worst orientation `pi/8`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `det` used by the definiteness check.
const DEFINITENESS_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovarianceRepr", into = "MatrixForm")]
pub struct CovarianceSpec {
    cxx: f64,
    cxy: f64,
    cyy: f64,
    lambda1: f64,
    lambda2: f64,
    alpha: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct MatrixForm {
    cxx: f64,
    cxy: f64,
    cyy: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct EigenForm {
    lambda1: f64,
    lambda2: f64,
    alpha: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum CovarianceRepr {
    Matrix(MatrixForm),
    Eigen(EigenForm),
}

impl TryFrom<CovarianceRepr> for CovarianceSpec {
    type Error = Error;

    fn try_from(repr: CovarianceRepr) -> Result<Self> {
        match repr {
            CovarianceRepr::Matrix(m) => CovarianceSpec::new(m.cxx, m.cxy, m.cyy),
            CovarianceRepr::Eigen(e) => CovarianceSpec::from_eigen(e.lambda1, e.lambda2, e.alpha),
        }
    }
}

impl From<CovarianceSpec> for MatrixForm {
    fn from(c: CovarianceSpec) -> Self {
        MatrixForm {
            cxx: c.cxx,
            cxy: c.cxy,
            cyy: c.cyy,
        }
    }
}

/// The non-negativity interval for `Cxxyy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityInterval {
    pub lower: f64,
    pub upper: f64,
    pub feasible: bool,
}

impl FeasibilityInterval {
    pub fn contains(&self, cxxyy: f64) -> bool {
        self.feasible && cxxyy >= self.lower && cxxyy <= self.upper
    }
}

fn is_positive_definite(cxx: f64, cxy: f64, cyy: f64) -> bool {
    let det = cxx * cyy - cxy * cxy;
    cxx > 0.0 && cyy > 0.0 && det > DEFINITENESS_TOL * (cxx * cyy)
}

impl CovarianceSpec {
    /// Builds a covariance from its matrix entries.
    pub fn new(cxx: f64, cxy: f64, cyy: f64) -> Result<Self> {
        if !(cxx.is_finite() && cxy.is_finite() && cyy.is_finite())
            || !is_positive_definite(cxx, cxy, cyy)
        {
            return Err(Error::NotPositiveDefinite { cxx, cxy, cyy });
        }
        let (lambda1, lambda2, alpha) = eigen_decompose(cxx, cxy, cyy);
        Ok(Self {
            cxx,
            cxy,
            cyy,
            lambda1,
            lambda2,
            alpha,
        })
    }

    /// `Cxx = l1 cos^2 a + l2 sin^2 a`, `Cxy = (l1 - l2) cos a sin a`,
    /// `Cyy = l1 sin^2 a + l2 cos^2 a`.
    pub fn from_eigen(lambda1: f64, lambda2: f64, alpha: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda2 > 0.0) {
            return Err(Error::NonPositiveEigenvalue { lambda1, lambda2 });
        }
        let (s, c) = alpha.sin_cos();
        let cxx = lambda1 * c * c + lambda2 * s * s;
        let cxy = (lambda1 - lambda2) * c * s;
        let cyy = lambda1 * s * s + lambda2 * c * c;
        Self::new(cxx, cxy, cyy)
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0).expect("identity is positive definite")
    }

    pub fn isotropic(variance: f64) -> Result<Self> {
        Self::new(variance, 0.0, variance)
    }

    pub fn cxx(&self) -> f64 {
        self.cxx
    }

    pub fn cxy(&self) -> f64 {
        self.cxy
    }

    pub fn cyy(&self) -> f64 {
        self.cyy
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda2
    }

    pub fn det(&self) -> f64 {
        self.cxx * self.cyy - self.cxy * self.cxy
    }

    /// `(lambda1, lambda2, alpha)` with `lambda1 >= lambda2` and
    /// `alpha in [0, pi)`; `alpha = 0` when the eigenvalues coincide.
    pub fn to_eigen(&self) -> (f64, f64, f64) {
        (self.lambda1, self.lambda2, self.alpha)
    }

    /// `[[cxx, cxy], [cxy, cyy]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.cxx, self.cxy], [self.cxy, self.cyy]]
    }

    /// Inverse matrix entries `(ixx, ixy, iyy)`.
    pub fn inverse(&self) -> (f64, f64, f64) {
        let det = self.det();
        (self.cyy / det, -self.cxy / det, self.cxx / det)
    }

    /// Multiplies every entry by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "covariance scale factor must be positive, got {factor}"
            )));
        }
        Self::new(self.cxx * factor, self.cxy * factor, self.cyy * factor)
    }

    /// `A * Sigma * A^T` for `A = [[a11, a12], [a21, a22]]`.
    pub fn affine_transform(&self, a11: f64, a12: f64, a21: f64, a22: f64) -> Result<Self> {
        let det = a11 * a22 - a12 * a21;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularTransform { det });
        }
        // A * Sigma
        let m11 = a11 * self.cxx + a12 * self.cxy;
        let m12 = a11 * self.cxy + a12 * self.cyy;
        let m21 = a21 * self.cxx + a22 * self.cxy;
        let m22 = a21 * self.cxy + a22 * self.cyy;
        // (A * Sigma) * A^T
        let cxx = m11 * a11 + m12 * a12;
        let cxy = 0.5 * ((m11 * a21 + m12 * a22) + (m21 * a11 + m22 * a12));
        let cyy = m21 * a21 + m22 * a22;
        Self::new(cxx, cxy, cyy)
    }

    /// `[|Cxy|, min(Cxx, Cyy)]`.
    pub fn cxxyy_feasibility(&self) -> FeasibilityInterval {
        let lower = self.cxy.abs();
        let upper = self.cxx.min(self.cyy);
        FeasibilityInterval {
            lower,
            upper,
            feasible: lower <= upper,
        }
    }

    /// `lambda_max / lambda_min`.
    pub fn eccentricity(&self) -> f64 {
        self.lambda1 / self.lambda2
    }

    /// Rescales so that the largest eigenvalue is 1, returning the unit
    /// covariance and the removed factor.
    pub fn normalize(&self) -> (CovarianceSpec, f64) {
        let factor = self.lambda1;
        let unit = CovarianceSpec::new(self.cxx / factor, self.cxy / factor, self.cyy / factor)
            .expect("rescaling preserves definiteness");
        (unit, factor)
    }
}

fn eigen_decompose(cxx: f64, cxy: f64, cyy: f64) -> (f64, f64, f64) {
    let half_trace = 0.5 * (cxx + cyy);
    let half_diff = 0.5 * (cxx - cyy);
    let radius = half_diff.hypot(cxy);
    let lambda1 = half_trace + radius;
    let lambda2 = (cxx * cyy - cxy * cxy) / lambda1;
    let alpha = if radius == 0.0 {
        0.0
    } else {
        let a = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
        if a < 0.0 {
            a + PI
        } else {
            a
        }
    };
    // atan2 may round up to exactly pi
    let alpha = if alpha >= PI { alpha - PI } else { alpha };
    (lambda1, lambda2, alpha)
}

/// Largest `lambda_max / lambda_min` whose `Cxxyy` interval is non-empty at
/// orientation `alpha`; `f64::INFINITY` for axis-aligned orientations.
pub fn max_feasible_eccentricity(alpha: f64) -> f64 {
    let c = (2.0 * alpha).cos().abs() + (2.0 * alpha).sin().abs();
    if c - 1.0 <= 1e-12 {
        f64::INFINITY
    } else {
        (c + 1.0) / (c - 1.0)
    }
}

/// Positivity bound at the worst-case orientation, `3 + 2 sqrt 2`.
pub fn worst_case_eccentricity_bound() -> f64 {
    3.0 + 2.0 * std::f64::consts::SQRT_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn assert_matrix_close(a: &CovarianceSpec, b: &CovarianceSpec, tol: f64) {
        let scale = a.cxx().abs().max(a.cyy().abs()).max(1e-300);
        assert!((a.cxx() - b.cxx()).abs() <= tol * scale, "{a:?} vs {b:?}");
        assert!((a.cxy() - b.cxy()).abs() <= tol * scale, "{a:?} vs {b:?}");
        assert!((a.cyy() - b.cyy()).abs() <= tol * scale, "{a:?} vs {b:?}");
    }

    #[test]
    fn from_eigen_examples() {
        let c = CovarianceSpec::from_eigen(64.0, 16.0, 0.0).unwrap();
        assert_eq!((c.cxx(), c.cxy(), c.cyy()), (64.0, 0.0, 16.0));

        let c = CovarianceSpec::from_eigen(1.0, 1.0, 0.7).unwrap();
        assert_relative_eq!(c.cxx(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(c.cxy(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(c.cyy(), 1.0, epsilon = 1e-15);

        let c = CovarianceSpec::from_eigen(2.0, 1.0, FRAC_PI_4).unwrap();
        assert_relative_eq!(c.cxx(), 1.5, epsilon = 1e-15);
        assert_relative_eq!(c.cxy(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.cyy(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn from_eigen_rejects_non_positive() {
        assert!(matches!(
            CovarianceSpec::from_eigen(0.0, 1.0, 0.0),
            Err(Error::NonPositiveEigenvalue { .. })
        ));
        assert!(matches!(
            CovarianceSpec::from_eigen(1.0, -2.0, 0.3),
            Err(Error::NonPositiveEigenvalue { .. })
        ));
    }

    #[test]
    fn to_eigen_examples() {
        let c = CovarianceSpec::new(64.0, 0.0, 16.0).unwrap();
        assert_eq!(c.to_eigen(), (64.0, 16.0, 0.0));

        let c = CovarianceSpec::new(1.5, 0.5, 1.5).unwrap();
        let (l1, l2, a) = c.to_eigen();
        assert_relative_eq!(l1, 2.0, epsilon = 1e-15);
        assert_relative_eq!(l2, 1.0, epsilon = 1e-15);
        assert_relative_eq!(a, FRAC_PI_4, epsilon = 1e-15);

        // isotropic tie-break
        assert_eq!(CovarianceSpec::identity().to_eigen(), (1.0, 1.0, 0.0));
    }

    #[test]
    fn vertical_major_axis_gets_alpha_half_pi() {
        let c = CovarianceSpec::new(1.0, 0.0, 4.0).unwrap();
        let (l1, l2, a) = c.to_eigen();
        assert_eq!((l1, l2), (4.0, 1.0));
        assert_relative_eq!(a, PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_indefinite_matrices() {
        assert!(CovarianceSpec::new(1.0, 1.0, 1.0).is_err());
        assert!(CovarianceSpec::new(-1.0, 0.0, 1.0).is_err());
        assert!(CovarianceSpec::new(1.0, 2.0, 1.0).is_err());
        assert!(CovarianceSpec::new(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn affine_transform_examples() {
        let rot = |t: f64| (t.cos(), -t.sin(), t.sin(), t.cos());
        let d = CovarianceSpec::new(4.0, 0.0, 1.0).unwrap();
        let (a, b, c, e) = rot(PI / 2.0);
        let r = d.affine_transform(a, b, c, e).unwrap();
        assert_relative_eq!(r.cxx(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.cxy(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(r.cyy(), 4.0, epsilon = 1e-14);

        let id = CovarianceSpec::identity();
        assert_eq!(id.affine_transform(1.0, 0.0, 0.0, 1.0).unwrap(), id);

        let r = id.affine_transform(2.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!((r.cxx(), r.cxy(), r.cyy()), (4.0, 0.0, 1.0));

        assert!(matches!(
            id.affine_transform(1.0, 2.0, 2.0, 4.0),
            Err(Error::SingularTransform { .. })
        ));
    }

    #[test]
    fn feasibility_examples() {
        let f = CovarianceSpec::identity().cxxyy_feasibility();
        assert_eq!((f.lower, f.upper, f.feasible), (0.0, 1.0, true));

        let f = CovarianceSpec::from_eigen(6.0, 1.0, PI / 8.0)
            .unwrap()
            .cxxyy_feasibility();
        assert!(!f.feasible);

        let f = CovarianceSpec::from_eigen(worst_case_eccentricity_bound(), 1.0, PI / 8.0)
            .unwrap()
            .cxxyy_feasibility();
        assert!((f.lower - f.upper).abs() < 1e-9);
    }

    #[test]
    fn max_eccentricity_examples() {
        assert_relative_eq!(
            max_feasible_eccentricity(PI / 8.0),
            3.0 + 2.0 * 2f64.sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            max_feasible_eccentricity(PI / 8.0),
            5.828427,
            epsilon = 1e-6
        );
        assert_eq!(max_feasible_eccentricity(0.0), f64::INFINITY);
        assert_eq!(max_feasible_eccentricity(PI / 2.0), f64::INFINITY);
        let eps = max_feasible_eccentricity(PI / 8.0);
        let theta = (1.0 / eps.sqrt()).acos().to_degrees();
        assert!((theta - 65.5).abs() < 0.05, "theta = {theta}");
    }

    #[test]
    fn max_eccentricity_is_minimal_at_pi_over_8() {
        let n = 1000;
        let (argmin, min) = (0..=n)
            .map(|i| {
                let a = i as f64 / n as f64 * PI / 2.0;
                (a, max_feasible_eccentricity(a))
            })
            .fold(
                (0.0, f64::INFINITY),
                |acc, (a, e)| if e < acc.1 { (a, e) } else { acc },
            );
        assert!(
            (argmin - PI / 8.0).abs() <= PI / 2.0 / n as f64,
            "argmin {argmin}"
        );
        assert_relative_eq!(min, worst_case_eccentricity_bound(), max_relative = 1e-5);
        // symmetric worst case at 3 pi / 8
        assert_relative_eq!(
            max_feasible_eccentricity(3.0 * PI / 8.0),
            worst_case_eccentricity_bound(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn max_eccentricity_agrees_with_interval_sign_change() {
        // the interval collapses exactly at the bound for any non-aligned alpha
        for &alpha in &[0.1, 0.3, PI / 8.0, 1.0, 1.4] {
            let eps = max_feasible_eccentricity(alpha);
            let inside = CovarianceSpec::from_eigen(eps * 0.999, 1.0, alpha).unwrap();
            let outside = CovarianceSpec::from_eigen(eps * 1.001, 1.0, alpha).unwrap();
            assert!(inside.cxxyy_feasibility().feasible, "alpha {alpha}");
            assert!(!outside.cxxyy_feasibility().feasible, "alpha {alpha}");
        }
    }

    #[test]
    fn feasible_is_strictly_stronger_than_definite() {
        let witness = CovarianceSpec::from_eigen(8.0, 1.0, PI / 8.0).unwrap();
        assert!(witness.cxy().abs() < (witness.cxx() * witness.cyy()).sqrt());
        assert!(!witness.cxxyy_feasibility().feasible);
    }

    #[test]
    fn eigen_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let l1 = 10f64.powf(rng.random_range(-3.0..3.0));
            let l2 = l1 * rng.random_range(1e-3..1.0);
            let alpha = rng.random_range(0.0..PI);
            let c = CovarianceSpec::from_eigen(l1, l2, alpha).unwrap();
            let (m1, m2, ma) = c.to_eigen();
            let back = CovarianceSpec::from_eigen(m1, m2, ma).unwrap();
            assert_matrix_close(&c, &back, 1e-12);
            assert!(m1 >= m2 && (0.0..PI).contains(&ma));
        }
    }

    #[test]
    fn json_accepts_both_forms_and_emits_matrix() {
        let c: CovarianceSpec = serde_json::from_str(r#"{"cxx":2,"cxy":0.5,"cyy":1}"#).unwrap();
        assert_eq!((c.cxx(), c.cxy(), c.cyy()), (2.0, 0.5, 1.0));
        let e: CovarianceSpec =
            serde_json::from_str(r#"{"lambda1":64,"lambda2":16,"alpha":0}"#).unwrap();
        assert_eq!((e.cxx(), e.cyy()), (64.0, 16.0));
        let out = serde_json::to_value(e).unwrap();
        assert_eq!(
            out,
            serde_json::json!({"cxx": 64.0, "cxy": 0.0, "cyy": 16.0})
        );
        assert!(serde_json::from_str::<CovarianceSpec>(r#"{"cxx":1,"cxy":2,"cyy":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn congruence_preserves_definiteness(
            l1 in 1e-2f64..1e2, ratio in 1e-2f64..1.0, alpha in 0.0f64..PI,
            a11 in -3.0f64..3.0, a12 in -3.0f64..3.0, a21 in -3.0f64..3.0, a22 in -3.0f64..3.0,
        ) {
            let det = a11 * a22 - a12 * a21;
            prop_assume!(det.abs() > 1e-2);
            let c = CovarianceSpec::from_eigen(l1, l1 * ratio, alpha).unwrap();
            let t = c.affine_transform(a11, a12, a21, a22);
            prop_assert!(t.is_ok(), "{:?}", t);
            let t = t.unwrap();
            // det(A S A^T) = det(A)^2 det(S)
            let expected = det * det * c.det();
            prop_assert!((t.det() - expected).abs() <= 1e-9 * expected.abs().max(1e-12));
        }

        #[test]
        fn every_feasible_covariance_is_definite(
            cxx in 1e-3f64..10.0, cyy in 1e-3f64..10.0, t in -1.0f64..1.0,
        ) {
            let cxy = t * cxx.min(cyy);
            // |cxy| <= min(cxx, cyy) implies cxy^2 <= cxx * cyy
            prop_assert!(cxy * cxy <= cxx * cyy);
        }
    }
}
