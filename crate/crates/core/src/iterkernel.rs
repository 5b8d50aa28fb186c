//! Fully discrete scale stepping with a 3x3 forward-Euler stencil.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::image::{RealImage, Tap};
use crate::moments::SecondMoments;

/// Slack on the step-size inequalities, which are met with equality at the
/// canonical isotropic step.
const STEP_SLACK: f64 = 1e-12;

/// Coefficients are laid out `taps[row][col]` with row 0 at `y = +1` and
/// column 0 at `x = -1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stencil3x3 {
    pub taps: [[f64; 3]; 3],
    pub cxx: f64,
    pub cxy: f64,
    pub cyy: f64,
    pub cxxyy: f64,
    pub delta_s: f64,
}

fn raw_stencil(cxx: f64, cxy: f64, cyy: f64, cxxyy: f64, ds: f64) -> [[f64; 3]; 3] {
    let minus_diag = 0.25 * (-cxy + cxxyy) * ds;
    let plus_diag = 0.25 * (cxy + cxxyy) * ds;
    let vertical = 0.5 * (cyy - cxxyy) * ds;
    let horizontal = 0.5 * (cxx - cxxyy) * ds;
    let off = 2.0 * (minus_diag + plus_diag + vertical + horizontal);
    [
        [minus_diag, vertical, plus_diag],
        [horizontal, 1.0 - off, horizontal],
        [plus_diag, vertical, minus_diag],
    ]
}

/// Builds the forward-iteration stencil for one step of size `delta_s`.
///
/// Fails with the offending entry when a coefficient is negative; the
/// center is `1 - sum(others)` so the taps always sum to one.
pub fn build_stencil(cxx: f64, cxy: f64, cyy: f64, cxxyy: f64, delta_s: f64) -> Result<Stencil3x3> {
    if !(delta_s > 0.0 && delta_s.is_finite()) {
        return Err(Error::InvalidStep(format!(
            "step size must be positive, got {delta_s}"
        )));
    }
    let taps = raw_stencil(cxx, cxy, cyy, cxxyy, delta_s);
    for (row, line) in taps.iter().enumerate() {
        for (col, &value) in line.iter().enumerate() {
            if value < 0.0 {
                return Err(Error::NegativeCoefficient { row, col, value });
            }
        }
    }
    Ok(Stencil3x3 {
        taps,
        cxx,
        cxy,
        cyy,
        cxxyy,
        delta_s,
    })
}

impl Stencil3x3 {
    pub fn for_spec(spec: &CovarianceSpec, cxxyy: f64, delta_s: f64) -> Result<Self> {
        build_stencil(spec.cxx(), spec.cxy(), spec.cyy(), cxxyy, delta_s)
    }

    /// The identity (no smoothing).
    pub fn identity() -> Self {
        Self {
            taps: [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]],
            cxx: 0.0,
            cxy: 0.0,
            cyy: 0.0,
            cxxyy: 0.0,
            delta_s: 0.0,
        }
    }

    /// Coefficient at geometric offset `(dx, dy)` in `{-1, 0, 1}^2`.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        self.taps[(1 - dy) as usize][(dx + 1) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().flatten().sum()
    }

    /// Nonzero taps as correlation offsets. The stencil is point-symmetric,
    /// so correlation and convolution coincide.
    pub fn as_taps(&self) -> Vec<Tap> {
        let mut out = Vec::with_capacity(9);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let weight = self.at(dx, dy);
                if weight != 0.0 {
                    out.push(Tap { dx, dy, weight });
                }
            }
        }
        out
    }

    /// One periodic application.
    pub fn apply(&self, image: &RealImage) -> RealImage {
        image.correlate(&self.as_taps())
    }

    /// The stencil as a 3x3 image centered at `(1, 1)`.
    pub fn to_image(&self) -> RealImage {
        RealImage::from_fn(3, 3, |col, row| self.taps[row][col])
    }
}

/// Second moments of the stencil taken directly from its coefficients.
pub fn stencil_covariance(stencil: &Stencil3x3) -> SecondMoments {
    let mut m = SecondMoments::ZERO;
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let w = stencil.at(dx, dy);
            m.xx += w * (dx * dx) as f64;
            m.xy += w * (dx * dy) as f64;
            m.yy += w * (dy * dy) as f64;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub nonneg: bool,
    pub center_dominance: bool,
    pub corner_condition: bool,
    pub ok: bool,
}

fn check_normalized(cxx: f64, cxy: f64, cyy: f64) -> Result<()> {
    let (lambda_max, _) = SecondMoments {
        xx: cxx,
        xy: cxy,
        yy: cyy,
    }
    .eigenvalues();
    if (lambda_max - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized { lambda_max });
    }
    Ok(())
}

/// Checks one step against non-negativity, the center-dominance bound and
/// the corner bound. Requires a covariance with largest eigenvalue 1.
pub fn validate_step(
    cxx: f64,
    cxy: f64,
    cyy: f64,
    cxxyy: f64,
    delta_s: f64,
) -> Result<ValidityReport> {
    check_normalized(cxx, cxy, cyy)?;
    let taps = raw_stencil(cxx, cxy, cyy, cxxyy, delta_s);
    let nonneg = taps.iter().flatten().all(|&v| v >= -STEP_SLACK);
    let center_dominance = (cxx + cyy + cxx.max(cyy) - 2.0 * cxxyy) * delta_s <= 1.0 + STEP_SLACK;
    let corner_condition = (cxx + cyy + cxy.abs()) * delta_s <= 1.0 + STEP_SLACK;
    Ok(ValidityReport {
        nonneg,
        center_dominance,
        corner_condition,
        ok: nonneg && center_dominance && corner_condition,
    })
}

/// Smallest `Cxxyy` meeting both non-negativity and center dominance at
/// step `delta_s = 1/2`.
pub fn choose_cxxyy_iter(spec: &CovarianceSpec) -> Result<f64> {
    choose_cxxyy_for_step(spec, 0.5)
}

/// Same choice for a general step: `max(|Cxy|, (Cxx + Cyy + max - 1/ds) / 2)`.
pub fn choose_cxxyy_for_step(spec: &CovarianceSpec, delta_s: f64) -> Result<f64> {
    check_normalized(spec.cxx(), spec.cxy(), spec.cyy())?;
    if !(delta_s > 0.0) {
        return Err(Error::InvalidStep(format!(
            "step size must be positive, got {delta_s}"
        )));
    }
    let (cxx, cyy) = (spec.cxx(), spec.cyy());
    let value = spec
        .cxy()
        .abs()
        .max(0.5 * (cxx + cyy + cxx.max(cyy) - 1.0 / delta_s));
    let upper = cxx.min(cyy);
    if value > upper + STEP_SLACK {
        return Err(Error::FeasibilityViolation {
            value,
            lower: spec.cxy().abs(),
            upper,
        });
    }
    Ok(value)
}

/// `steps` full steps followed by an optional shorter residual step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub stencil: Stencil3x3,
    pub steps: usize,
    pub residual_ds: f64,
    pub residual: Option<Stencil3x3>,
}

impl IterationPlan {
    /// `steps` applications of `stencil` with no residual and no validation.
    pub fn repeat(stencil: Stencil3x3, steps: usize) -> Self {
        Self {
            stencil,
            steps,
            residual_ds: 0.0,
            residual: None,
        }
    }

    pub fn total_s(&self) -> f64 {
        self.steps as f64 * self.stencil.delta_s + self.residual_ds
    }

    pub fn applications(&self) -> usize {
        self.steps + usize::from(self.residual.is_some())
    }

    /// Second moments of the composed kernel.
    pub fn covariance(&self) -> SecondMoments {
        let mut m = stencil_covariance(&self.stencil).scaled(self.steps as f64);
        if let Some(r) = &self.residual {
            m = m + stencil_covariance(r);
        }
        m
    }
}

/// Splits `total_s` into steps of `delta_s_max` plus a residual, using the
/// [`choose_cxxyy_for_step`] weight for both step sizes.
pub fn plan_iterations(
    spec: &CovarianceSpec,
    total_s: f64,
    delta_s_max: f64,
) -> Result<IterationPlan> {
    let cxxyy = choose_cxxyy_for_step(spec, delta_s_max)?;
    plan_iterations_with(spec, cxxyy, total_s, delta_s_max)
}

/// As [`plan_iterations`] with an explicit `Cxxyy`; both steps are validated.
pub fn plan_iterations_with(
    spec: &CovarianceSpec,
    cxxyy: f64,
    total_s: f64,
    delta_s_max: f64,
) -> Result<IterationPlan> {
    if !(total_s >= 0.0 && total_s.is_finite()) {
        return Err(Error::InvalidStep(format!(
            "total scale must be non-negative, got {total_s}"
        )));
    }
    if !(delta_s_max > 0.0) {
        return Err(Error::InvalidStep(format!(
            "step size must be positive, got {delta_s_max}"
        )));
    }
    let validate = |ds: f64| -> Result<Stencil3x3> {
        let report = validate_step(spec.cxx(), spec.cxy(), spec.cyy(), cxxyy, ds)?;
        if !report.ok {
            return Err(Error::InvalidStep(format!(
                "step {ds} with Cxxyy = {cxxyy} fails validation: {report:?}"
            )));
        }
        Stencil3x3::for_spec(spec, cxxyy, ds)
    };
    let stencil = validate(delta_s_max)?;
    let mut steps = (total_s / delta_s_max).floor() as usize;
    let mut residual_ds = total_s - steps as f64 * delta_s_max;
    if residual_ds > delta_s_max - 1e-12 {
        steps += 1;
        residual_ds = 0.0;
    }
    if residual_ds < 1e-12 {
        residual_ds = 0.0;
    }
    let residual = if residual_ds > 0.0 {
        Some(validate(residual_ds)?)
    } else {
        None
    };
    Ok(IterationPlan {
        stencil,
        steps,
        residual_ds,
        residual,
    })
}

pub fn iterate(image: &RealImage, plan: &IterationPlan) -> Result<RealImage> {
    if image.width() < 3 || image.height() < 3 {
        return Err(Error::InvalidParameter(format!(
            "stencil iteration needs at least 3x3, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let taps = plan.stencil.as_taps();
    let mut out = image.clone();
    for _ in 0..plan.steps {
        out = out.correlate(&taps);
    }
    if let Some(r) = &plan.residual {
        out = r.apply(&out);
    }
    Ok(out)
}

/// Numerical rank one: `sigma2 < 1e-12 * sigma1`.
pub fn is_separable(stencil: &Stencil3x3) -> bool {
    let m = Matrix3::from_fn(|r, c| stencil.taps[r][c]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv[1] < 1e-12 * sv[0]
}

/// Number of strict interior local maxima that increased plus strict local
/// minima that decreased between `before` and `after` (8-neighbourhood).
pub fn extremum_violations(before: &RealImage, after: &RealImage) -> usize {
    let (w, h) = (before.width(), before.height());
    let mut violations = 0;
    for row in 1..h.saturating_sub(1) {
        for col in 1..w.saturating_sub(1) {
            let v = before.get(col, row);
            let mut is_max = true;
            let mut is_min = true;
            for dr in 0..3 {
                for dc in 0..3 {
                    if dr == 1 && dc == 1 {
                        continue;
                    }
                    let n = before.get(col + dc - 1, row + dr - 1);
                    is_max &= v > n;
                    is_min &= v < n;
                }
            }
            let a = after.get(col, row);
            if (is_max && a > v) || (is_min && a < v) {
                violations += 1;
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::kernel_moments;
    use crate::semidiscrete::{generate_kernel, SemiDiscreteParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn canonical() -> Stencil3x3 {
        build_stencil(1.0, 0.0, 1.0, 0.5, 0.5).unwrap()
    }

    #[test]
    fn canonical_stencil_is_binomial_product() {
        let expected =
            [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]].map(|r| r.map(|v| v / 16.0));
        assert_eq!(canonical().taps, expected);
    }

    #[test]
    fn cross_stencil_builds_but_fails_validation() {
        let s = build_stencil(1.0, 0.0, 1.0, 0.0, 0.5).unwrap();
        assert_eq!(
            s.taps,
            [[0.0, 0.25, 0.0], [0.25, 0.0, 0.25], [0.0, 0.25, 0.0]]
        );
        let r = validate_step(1.0, 0.0, 1.0, 0.0, 0.5).unwrap();
        assert!(r.nonneg && !r.center_dominance && !r.ok);
    }

    #[test]
    fn negative_entries_are_reported() {
        match build_stencil(1.0, 0.0, 1.0, 0.5, 2.0) {
            Err(Error::NegativeCoefficient {
                row: 1,
                col: 1,
                value,
            }) => assert!(value < 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            build_stencil(1.0, 0.0, 1.0, 0.5, 0.0),
            Err(Error::InvalidStep(_))
        ));
    }

    #[test]
    fn covariance_examples() {
        let m = stencil_covariance(&canonical());
        assert_eq!((m.xx, m.xy, m.yy), (0.5, 0.0, 0.5));
        let s = build_stencil(2.0, 0.5, 1.0, 0.5, 0.25).unwrap();
        let m = stencil_covariance(&s);
        assert_relative_eq!(m.xx, 0.5, epsilon = 1e-15);
        assert_relative_eq!(m.xy, 0.125, epsilon = 1e-15);
        assert_relative_eq!(m.yy, 0.25, epsilon = 1e-15);
        // cross-check with the image moment routine
        let km = kernel_moments(&s.to_image()).covariance;
        assert_relative_eq!(km.xy, 0.125, epsilon = 1e-15);
        assert_eq!(
            stencil_covariance(&Stencil3x3::identity()),
            SecondMoments::ZERO
        );
    }

    #[test]
    fn validation_examples() {
        let r = validate_step(1.0, 0.0, 1.0, 0.5, 0.5).unwrap();
        assert!(r.ok);
        let r = validate_step(1.0, 0.0, 1.0, 0.0, 0.5).unwrap();
        assert!(!r.center_dominance);
        // corner bound met with equality
        assert!(
            validate_step(1.0, 0.0, 1.0, 0.5, 0.5)
                .unwrap()
                .corner_condition
        );
        assert!(matches!(
            validate_step(2.0, 0.0, 1.0, 0.5, 0.5),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn cxxyy_iter_examples() {
        assert_eq!(choose_cxxyy_iter(&CovarianceSpec::identity()).unwrap(), 0.5);
        let s = CovarianceSpec::from_eigen(1.0, 0.25, 0.0).unwrap();
        assert_eq!(choose_cxxyy_iter(&s).unwrap(), 0.125);
        let bad = CovarianceSpec::from_eigen(1.0, 1.0 / 6.0, PI / 8.0).unwrap();
        assert!(matches!(
            choose_cxxyy_iter(&bad),
            Err(Error::FeasibilityViolation { .. })
        ));
        let unnormalized = CovarianceSpec::from_eigen(2.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            choose_cxxyy_iter(&unnormalized),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn plan_examples() {
        let id = CovarianceSpec::identity();
        let p = plan_iterations(&id, 2.0, 0.5).unwrap();
        assert_eq!(
            (p.steps, p.residual_ds, p.residual.is_none()),
            (4, 0.0, true)
        );
        let p = plan_iterations(&id, 1.7, 0.5).unwrap();
        assert_eq!(p.steps, 3);
        assert_relative_eq!(p.residual_ds, 0.2, epsilon = 1e-12);
        assert!(p.residual.is_some());
        assert_relative_eq!(p.total_s(), 1.7, epsilon = 1e-12);
        let p = plan_iterations(&id, 0.0, 0.5).unwrap();
        assert_eq!((p.steps, p.applications()), (0, 0));
        assert!(plan_iterations(&id, -1.0, 0.5).is_err());
        assert!(plan_iterations(&id, 1.0, 0.75).is_err());
    }

    #[test]
    fn iterate_examples() {
        let id = CovarianceSpec::identity();
        let c = RealImage::constant(9, 7, 1.25);
        let p = plan_iterations(&id, 1.7, 0.5).unwrap();
        assert!(iterate(&c, &p).unwrap().max_abs_diff(&c).unwrap() < 1e-15);

        let one = iterate(
            &RealImage::impulse(7, 7),
            &IterationPlan::repeat(canonical(), 1),
        )
        .unwrap();
        for dy in -1..=1 {
            for dx in -1..=1 {
                assert_eq!(one.at_offset(dx, dy), canonical().at(dx, dy));
            }
        }

        let two = iterate(
            &RealImage::impulse(9, 9),
            &IterationPlan::repeat(canonical(), 2),
        )
        .unwrap();
        let b = [1.0, 4.0, 6.0, 4.0, 1.0];
        for dy in -2..=2isize {
            for dx in -2..=2isize {
                let e = b[(dx + 2) as usize] * b[(dy + 2) as usize] / 256.0;
                assert_eq!(two.at_offset(dx, dy), e);
            }
        }
        assert!(iterate(&RealImage::zeros(2, 5), &p).is_err());
    }

    #[test]
    fn composed_covariance_is_additive() {
        let spec = CovarianceSpec::from_eigen(1.0, 0.25, PI / 6.0).unwrap();
        let st = Stencil3x3::for_spec(&spec, choose_cxxyy_iter(&spec).unwrap(), 0.5).unwrap();
        let single = stencil_covariance(&st);
        for k in 1..=8 {
            let img = iterate(&RealImage::impulse(21, 21), &IterationPlan::repeat(st, k)).unwrap();
            let m = kernel_moments(&img);
            assert_relative_eq!(m.mass, 1.0, epsilon = 1e-13);
            assert!((m.covariance.xx - k as f64 * single.xx).abs() < 1e-12);
            assert!((m.covariance.xy - k as f64 * single.xy).abs() < 1e-12);
            assert!((m.covariance.yy - k as f64 * single.yy).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_plan_reaches_exact_covariance() {
        let spec = CovarianceSpec::from_eigen(1.0, 0.4, 1.1).unwrap();
        let p = plan_iterations(&spec, 2.3, 0.5).unwrap();
        let m = kernel_moments(&iterate(&RealImage::impulse(25, 25), &p).unwrap()).covariance;
        assert!((m.xx - 2.3 * spec.cxx()).abs() < 1e-12);
        assert!((m.xy - 2.3 * spec.cxy()).abs() < 1e-12);
        assert!((m.yy - 2.3 * spec.cyy()).abs() < 1e-12);
    }

    #[test]
    fn iterated_kernel_approaches_fourier_kernel() {
        let spec = CovarianceSpec::from_eigen(1.0, 0.25, PI / 3.0).unwrap();
        let cxxyy = spec.cxy().abs();
        let fourier =
            generate_kernel(&SemiDiscreteParams::new(spec, cxxyy, 4.0).unwrap(), 48, 48).unwrap();
        let dist: Vec<f64> = [4usize, 8, 16, 32]
            .iter()
            .map(|&k| {
                let st = Stencil3x3::for_spec(&spec, cxxyy, 4.0 / k as f64).unwrap();
                let it =
                    iterate(&RealImage::impulse(48, 48), &IterationPlan::repeat(st, k)).unwrap();
                it.l1_distance(&fourier).unwrap()
            })
            .collect();
        assert!(dist.windows(2).all(|w| w[1] < w[0]), "{dist:?}");
    }

    #[test]
    fn separability_examples() {
        assert!(is_separable(&canonical()));
        assert!(!is_separable(
            &build_stencil(1.0, 0.0, 1.0, 0.25, 0.5).unwrap()
        ));
        assert!(is_separable(&Stencil3x3::identity()));
    }

    #[test]
    fn iteration_is_deterministic_across_thread_counts() {
        let img = RealImage::from_fn(37, 29, |c, r| ((c * 31 + r * 17) % 13) as f64);
        let p = IterationPlan::repeat(canonical(), 5);
        let a = iterate(&img, &p).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| iterate(&img, &p).unwrap());
        assert_eq!(a, b);
    }

    fn random_valid_stencil(l2: f64, alpha: f64, t: f64, ds_frac: f64) -> Option<Stencil3x3> {
        let spec = CovarianceSpec::from_eigen(1.0, l2, alpha).ok()?;
        let lower = choose_cxxyy_iter(&spec).ok()?;
        let upper = spec.cxx().min(spec.cyy());
        let cxxyy = lower + t * (upper - lower);
        let ds = 0.5 * ds_frac;
        let r = validate_step(spec.cxx(), spec.cxy(), spec.cyy(), cxxyy, ds).ok()?;
        if !r.ok {
            return None;
        }
        Stencil3x3::for_spec(&spec, cxxyy, ds).ok()
    }

    proptest! {
        #[test]
        fn stencil_invariants(
            cxx in 0.0f64..2.0, cyy in 0.0f64..2.0, cxy in -1.0f64..1.0, cxxyy in -1.0f64..2.0, ds in 0.01f64..1.0,
        ) {
            let taps = raw_stencil(cxx, cxy, cyy, cxxyy, ds);
            let sum: f64 = taps.iter().flatten().sum();
            prop_assert!((sum - 1.0).abs() < 1e-14);
            for r in 0..3 {
                for c in 0..3 {
                    prop_assert_eq!(taps[r][c], taps[2 - r][2 - c]);
                }
            }
            if let Ok(st) = build_stencil(cxx, cxy, cyy, cxxyy, ds) {
                // generator: off-center entries non-negative, zero sum
                let mut generator = st.taps;
                generator[1][1] -= 1.0;
                let gsum: f64 = generator.iter().flatten().sum();
                prop_assert!(gsum.abs() < 1e-14);
                let m = stencil_covariance(&st);
                prop_assert!((m.xx - cxx * ds).abs() < 1e-14);
                prop_assert!((m.xy - cxy * ds).abs() < 1e-14);
                prop_assert!((m.yy - cyy * ds).abs() < 1e-14);
            }
        }

        #[test]
        fn valid_steps_do_not_enhance_extrema(
            l2 in 0.2f64..1.0, alpha in 0.0f64..PI, t in 0.0f64..1.0, ds_frac in 0.1f64..1.0, seed in 0u64..1000,
        ) {
            let st = random_valid_stencil(l2, alpha, t, ds_frac);
            prop_assume!(st.is_some());
            let st = st.unwrap();
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = RealImage::from_fn(16, 16, |_, _| rng.random::<f64>());
            let out = st.apply(&img);
            prop_assert_eq!(extremum_violations(&img, &out), 0);
        }
    }
}
