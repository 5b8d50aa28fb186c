//! Semi-discrete affine Gaussian scale space computed in the Fourier domain.
//!
//! The transfer function of the semi-discrete diffusion with generator
//! `Cxx dxx + 2 Cxy dxy + Cyy dyy + Cxxyy dxxyy` (scaled by `s`) is known in
//! closed form, so kernels and smoothed images are exact up to round-off
//! on a periodic grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::fft::{fft2d, to_complex, Direction};
use crate::image::RealImage;

/// How an out-of-interval `Cxxyy` is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeasibilityMode {
    /// Reject parameters that can produce negative kernel values.
    #[default]
    Strict,
    /// Compute anyway and tag the result.
    Permissive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiDiscreteParams {
    pub spec: CovarianceSpec,
    pub cxxyy: f64,
    pub s: f64,
}

impl SemiDiscreteParams {
    pub fn new(spec: CovarianceSpec, cxxyy: f64, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {s}"
            )));
        }
        if !cxxyy.is_finite() {
            return Err(Error::InvalidParameter("Cxxyy must be finite".into()));
        }
        Ok(Self { spec, cxxyy, s })
    }

    /// Parameters with the minimal non-negative choice `Cxxyy = |Cxy|`.
    pub fn minimal(spec: CovarianceSpec, s: f64) -> Result<Self> {
        Self::new(spec, spec.cxy().abs(), s)
    }

    /// Same covariance and `Cxxyy`, different scale.
    pub fn with_scale(&self, s: f64) -> Result<Self> {
        Self::new(self.spec, self.cxxyy, s)
    }

    /// True when `Cxxyy` lies inside the non-negativity interval.
    pub fn is_feasible(&self) -> bool {
        let f = self.spec.cxxyy_feasibility();
        let tol = 1e-12 * self.spec.cxx().max(self.spec.cyy());
        f.lower <= f.upper + tol && self.cxxyy >= f.lower - tol && self.cxxyy <= f.upper + tol
    }

    pub fn check_feasible(&self) -> Result<()> {
        if self.is_feasible() {
            Ok(())
        } else {
            let f = self.spec.cxxyy_feasibility();
            Err(Error::FeasibilityViolation {
                value: self.cxxyy,
                lower: f.lower,
                upper: f.upper,
            })
        }
    }

    /// Exponent of the transfer function at angular frequencies `(u, v)`.
    pub fn log_transfer(&self, u: f64, v: f64) -> f64 {
        let (cu, cv) = (1.0 - u.cos(), 1.0 - v.cos());
        self.s
            * (-self.spec.cxx() * cu - self.spec.cyy() * cv
                + self.spec.cxy() * u.sin() * v.sin()
                + self.cxxyy * cu * cv)
    }
}

/// Real, even transfer samples `psi(m, n)` on an `M x N` frequency grid,
/// stored row-major with `m` along the width.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SpectrumGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[n * self.width + m]
    }

    /// `log10 |psi|` as an image, with the zero frequency at the grid center.
    pub fn log_magnitude(&self) -> RealImage {
        let (w, h) = (self.width, self.height);
        RealImage::from_fn(w, h, |col, row| {
            let m = (col + w - w / 2) % w;
            let n = (row + h - h / 2) % h;
            self.get(m, n).abs().max(f64::MIN_POSITIVE).log10()
        })
    }
}

fn check_grid(width: usize, height: usize) -> Result<()> {
    if width < 4 || height < 4 {
        return Err(Error::InvalidParameter(format!(
            "frequency grid must be at least 4x4, got {width}x{height}"
        )));
    }
    Ok(())
}

pub fn transfer_function(
    params: &SemiDiscreteParams,
    width: usize,
    height: usize,
) -> Result<SpectrumGrid> {
    check_grid(width, height)?;
    let mut values = Vec::with_capacity(width * height);
    for n in 0..height {
        let v = 2.0 * PI * n as f64 / height as f64;
        for m in 0..width {
            let u = 2.0 * PI * m as f64 / width as f64;
            values.push(params.log_transfer(u, v).exp());
        }
    }
    Ok(SpectrumGrid {
        width,
        height,
        values,
    })
}

/// An image produced by the Fourier path, tagged when the kernel may have
/// negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierOutput {
    pub image: RealImage,
    pub non_positive_kernel: bool,
}

fn gate(params: &SemiDiscreteParams, mode: FeasibilityMode) -> Result<bool> {
    let feasible = params.is_feasible();
    if !feasible && mode == FeasibilityMode::Strict {
        params.check_feasible()?;
    }
    Ok(!feasible)
}

/// Kernel on a `width x height` grid with its origin at `(width/2, height/2)`.
pub fn generate_kernel(
    params: &SemiDiscreteParams,
    width: usize,
    height: usize,
) -> Result<RealImage> {
    generate_kernel_with(params, width, height, FeasibilityMode::Strict).map(|o| o.image)
}

pub fn generate_kernel_with(
    params: &SemiDiscreteParams,
    width: usize,
    height: usize,
    mode: FeasibilityMode,
) -> Result<FourierOutput> {
    let non_positive_kernel = gate(params, mode)?;
    let spectrum = transfer_function(params, width, height)?;
    let mut data = to_complex(spectrum.values());
    fft2d(&mut data, width, height, Direction::Inverse);
    let (cc, cr) = (width / 2, height / 2);
    let mut image = RealImage::zeros(width, height);
    for row in 0..height {
        for col in 0..width {
            image.set(
                (col + cc) % width,
                (row + cr) % height,
                data[row * width + col].re,
            );
        }
    }
    Ok(FourierOutput {
        image,
        non_positive_kernel,
    })
}

/// Periodic convolution with the semi-discrete kernel.
pub fn smooth(image: &RealImage, params: &SemiDiscreteParams) -> Result<RealImage> {
    smooth_with(image, params, FeasibilityMode::Strict).map(|o| o.image)
}

pub fn smooth_with(
    image: &RealImage,
    params: &SemiDiscreteParams,
    mode: FeasibilityMode,
) -> Result<FourierOutput> {
    let non_positive_kernel = gate(params, mode)?;
    let (w, h) = (image.width(), image.height());
    let spectrum = transfer_function(params, w, h)?;
    Ok(FourierOutput {
        image: apply_spectrum(image, &spectrum)?,
        non_positive_kernel,
    })
}

/// Multiplies the image spectrum by `spectrum` and transforms back.
pub fn apply_spectrum(image: &RealImage, spectrum: &SpectrumGrid) -> Result<RealImage> {
    let (w, h) = (image.width(), image.height());
    if spectrum.width != w || spectrum.height != h {
        return Err(Error::DimensionMismatch(format!(
            "spectrum {}x{} vs image {w}x{h}",
            spectrum.width, spectrum.height
        )));
    }
    let mut data = to_complex(image.samples());
    fft2d(&mut data, w, h, Direction::Forward);
    data.iter_mut()
        .zip(&spectrum.values)
        .for_each(|(d, &p)| *d *= p);
    fft2d(&mut data, w, h, Direction::Inverse);
    RealImage::new(w, h, image.spacing_h(), data.iter().map(|c| c.re).collect())
}

/// `Cxxyy = |Cxy|`, the smallest value giving a non-negative kernel.
pub fn choose_cxxyy_minimal(spec: &CovarianceSpec) -> Result<f64> {
    let f = spec.cxxyy_feasibility();
    if f.feasible {
        Ok(f.lower)
    } else {
        Err(Error::FeasibilityViolation {
            value: f.lower,
            lower: f.lower,
            upper: f.upper,
        })
    }
}

/// `Cxxyy = (Cxx + Cyy) / 6`, which makes the fourth-order low-frequency
/// term share the angular profile of the second-order term. Axis-aligned
/// covariances only.
pub fn choose_cxxyy_lowfreq(spec: &CovarianceSpec) -> Result<f64> {
    if spec.cxy() != 0.0 {
        return Err(Error::UnsupportedForNonzeroCxy { cxy: spec.cxy() });
    }
    Ok((spec.cxx() + spec.cyy()) / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::kernel_moments;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iso() -> SemiDiscreteParams {
        SemiDiscreteParams::new(CovarianceSpec::identity(), 0.0, 1.0).unwrap()
    }

    #[test]
    fn transfer_examples() {
        let t = transfer_function(&iso(), 8, 8).unwrap();
        assert_eq!(t.get(0, 0), 1.0);
        assert_relative_eq!(t.get(4, 0), (-2.0f64).exp(), max_relative = 1e-15);
        assert!(transfer_function(&iso(), 3, 8).is_err());
    }

    #[test]
    fn kernel_of_isotropic_case_is_even_and_separable() {
        let k = generate_kernel(&iso(), 17, 17).unwrap();
        assert_relative_eq!(k.sum(), 1.0, epsilon = 1e-12);
        for dy in -8..=8 {
            for dx in -8..=8 {
                assert!((k.at_offset(dx, dy) - k.at_offset(-dx, -dy)).abs() < 1e-15);
                assert!((k.at_offset(dx, dy) - k.at_offset(dy, dx)).abs() < 1e-15);
            }
        }
        // product of 1-D marginals
        let row = |dx: isize| (-8..=8).map(|dy| k.at_offset(dx, dy)).sum::<f64>();
        let g0 = row(0);
        let g1 = row(1);
        assert_relative_eq!(k.at_offset(1, 1), g1 * g1, epsilon = 1e-14);
        assert_relative_eq!(k.at_offset(0, 0), g0 * g0, epsilon = 1e-14);
    }

    #[test]
    fn isotropic_marginal_matches_bessel_series() {
        // T(n; s) = exp(-s) I_n(s) for the 1-D discrete analogue
        fn bessel_i(n: u32, x: f64) -> f64 {
            let mut term = (x / 2.0).powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
            let mut sum = term;
            for k in 1..60 {
                term *= (x / 2.0).powi(2) / (k as f64 * (k + n) as f64);
                sum += term;
            }
            sum
        }
        let k = generate_kernel(&iso(), 33, 33).unwrap();
        for n in 0..4 {
            let expected = (-1.0f64).exp() * bessel_i(n, 1.0);
            let got =
                k.at_offset(n as isize, 0) / k.at_offset(0, 0) * (-1.0f64).exp() * bessel_i(0, 1.0);
            assert_relative_eq!(got, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn kernel_sum_and_covariance_fig5_setting() {
        let spec = CovarianceSpec::from_eigen(64.0, 16.0, PI / 6.0).unwrap();
        let p = SemiDiscreteParams::minimal(spec, 1.0).unwrap();
        let k = generate_kernel(&p, 64, 64).unwrap();
        assert_relative_eq!(k.sum(), 1.0, epsilon = 1e-12);
        assert!(k.min() > -1e-12);
    }

    #[test]
    fn imaginary_residue_is_negligible() {
        let spec = CovarianceSpec::from_eigen(4.0, 1.0, 1.0).unwrap();
        let p = SemiDiscreteParams::minimal(spec, 1.3).unwrap();
        let t = transfer_function(&p, 24, 20).unwrap();
        let mut data = to_complex(t.values());
        fft2d(&mut data, 24, 20, Direction::Inverse);
        assert!(data.iter().all(|c| c.im.abs() < 1e-12));
    }

    #[test]
    fn covariance_accuracy_improves_with_grid_size() {
        let spec = CovarianceSpec::from_eigen(4.0, 1.0, PI / 3.0).unwrap();
        let p = SemiDiscreteParams::minimal(spec, 4.0).unwrap();
        let err = |n: usize| {
            let m = kernel_moments(&generate_kernel(&p, n, n).unwrap()).covariance;
            (m.xx - 4.0 * spec.cxx()).abs()
                + (m.xy - 4.0 * spec.cxy()).abs()
                + (m.yy - 4.0 * spec.cyy()).abs()
        };
        let (e16, e32, e64) = (err(16), err(32), err(64));
        assert!(e16 > e32 && e32 >= e64, "{e16} {e32} {e64}");
        assert!(e64 < 1e-9);
    }

    #[test]
    fn smooth_examples() {
        let p =
            SemiDiscreteParams::minimal(CovarianceSpec::from_eigen(3.0, 1.0, 0.4).unwrap(), 1.0)
                .unwrap();
        let c = RealImage::constant(16, 12, 2.5);
        assert!(smooth(&c, &p).unwrap().max_abs_diff(&c).unwrap() < 1e-12);

        let k = generate_kernel(&p, 16, 12).unwrap();
        let imp = RealImage::impulse(16, 12);
        assert!(smooth(&imp, &p).unwrap().max_abs_diff(&k).unwrap() < 1e-14);
    }

    #[test]
    fn cascade_equals_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = RealImage::from_fn(40, 36, |_, _| rng.random::<f64>());
        let spec = CovarianceSpec::from_eigen(2.0, 0.5, 2.0).unwrap();
        let a = SemiDiscreteParams::minimal(spec, 0.7).unwrap();
        let b = a.with_scale(1.3).unwrap();
        let c = a.with_scale(2.0).unwrap();
        let two = smooth(&smooth(&img, &a).unwrap(), &b).unwrap();
        let one = smooth(&img, &c).unwrap();
        assert!(two.max_abs_diff(&one).unwrap() <= 1e-10);
        assert!((one.mean() - img.mean()).abs() < 1e-12);
    }

    #[test]
    fn strict_mode_rejects_and_permissive_tags() {
        let spec = CovarianceSpec::from_eigen(6.0, 1.0, PI / 8.0).unwrap();
        let p = SemiDiscreteParams::new(spec, spec.cxy().abs(), 1.0).unwrap();
        assert!(matches!(
            generate_kernel(&p, 16, 16),
            Err(Error::FeasibilityViolation { .. })
        ));
        let out = generate_kernel_with(&p, 16, 16, FeasibilityMode::Permissive).unwrap();
        assert!(out.non_positive_kernel);
        let ok = SemiDiscreteParams::minimal(CovarianceSpec::identity(), 1.0).unwrap();
        assert!(
            !generate_kernel_with(&ok, 16, 16, FeasibilityMode::Permissive)
                .unwrap()
                .non_positive_kernel
        );
    }

    #[test]
    fn infeasible_cxxyy_yields_negative_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let spec = CovarianceSpec::from_eigen(
                1.0,
                rng.random_range(0.3..1.0),
                rng.random_range(0.0..PI),
            )
            .unwrap();
            let f = spec.cxxyy_feasibility();
            let margin = rng.random_range(0.05..0.3);
            let cxxyy = if rng.random::<bool>() {
                f.lower - margin
            } else {
                f.upper + margin
            };
            let p = SemiDiscreteParams::new(spec, cxxyy, 0.1).unwrap();
            let k = generate_kernel_with(&p, 32, 32, FeasibilityMode::Permissive)
                .unwrap()
                .image;
            assert!(
                k.min() < -1e-8,
                "cxxyy {cxxyy} for {spec:?} gave min {}",
                k.min()
            );
        }
    }

    #[test]
    fn feasible_parameters_give_non_negative_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 100 {
            let l2 = rng.random_range(0.2..1.0);
            let spec = CovarianceSpec::from_eigen(1.0, l2, rng.random_range(0.0..PI)).unwrap();
            let f = spec.cxxyy_feasibility();
            if !f.feasible {
                continue;
            }
            let cxxyy = rng.random_range(f.lower..=f.upper);
            let s = rng.random_range(0.05..4.0);
            let k =
                generate_kernel(&SemiDiscreteParams::new(spec, cxxyy, s).unwrap(), 32, 32).unwrap();
            assert!(k.min() >= -1e-12, "min {}", k.min());
            checked += 1;
        }
    }

    #[test]
    fn minimal_choice_examples() {
        assert_eq!(
            choose_cxxyy_minimal(&CovarianceSpec::identity()).unwrap(),
            0.0
        );
        let spec = CovarianceSpec::from_eigen(64.0, 16.0, PI / 6.0).unwrap();
        assert_relative_eq!(
            choose_cxxyy_minimal(&spec).unwrap(),
            12.0 * 3f64.sqrt(),
            max_relative = 1e-14
        );
        let bad = CovarianceSpec::from_eigen(6.0, 1.0, PI / 8.0).unwrap();
        assert!(matches!(
            choose_cxxyy_minimal(&bad),
            Err(Error::FeasibilityViolation { .. })
        ));
    }

    #[test]
    fn lowfreq_choice_examples() {
        assert_relative_eq!(
            choose_cxxyy_lowfreq(&CovarianceSpec::identity()).unwrap(),
            1.0 / 3.0
        );
        assert_eq!(
            choose_cxxyy_lowfreq(&CovarianceSpec::new(2.0, 0.0, 4.0).unwrap()).unwrap(),
            1.0
        );
        assert!(matches!(
            choose_cxxyy_lowfreq(&CovarianceSpec::new(1.0, 0.5, 1.0).unwrap()),
            Err(Error::UnsupportedForNonzeroCxy { .. })
        ));
    }

    /// Taylor coefficients of `log psi(w cos b, w sin b)` at orders 2 and 4,
    /// extracted numerically from an even polynomial fit.
    fn radial_coefficients(p: &SemiDiscreteParams, beta: f64) -> (f64, f64) {
        let f = |w: f64| p.log_transfer(w * beta.cos(), w * beta.sin());
        // f(w) = a w^2 + b w^4 + c w^6 + ...; eliminate c with three radii
        let hs = [0.02, 0.04, 0.06];
        let ys: Vec<f64> = hs.iter().map(|&h| f(h) / (h * h)).collect();
        // ys = a + b t + c t^2 with t = h^2
        let t: Vec<f64> = hs.iter().map(|h| h * h).collect();
        let d01 = (ys[1] - ys[0]) / (t[1] - t[0]);
        let d12 = (ys[2] - ys[1]) / (t[2] - t[1]);
        let c = (d12 - d01) / (t[2] - t[0]);
        let b = d01 - c * (t[0] + t[1]);
        let a = ys[0] - b * t[0] - c * t[0] * t[0];
        (a, b)
    }

    #[test]
    fn lowfreq_choice_gives_matching_angular_profile() {
        for (cxx, cyy) in [(1.0, 1.0), (2.0, 0.5), (1.0, 0.25)] {
            let spec = CovarianceSpec::new(cxx, 0.0, cyy).unwrap();
            let p =
                SemiDiscreteParams::new(spec, choose_cxxyy_lowfreq(&spec).unwrap(), 1.0).unwrap();
            let ratios: Vec<f64> = (0..16)
                .map(|i| {
                    let (a, b) = radial_coefficients(&p, i as f64 * PI / 16.0);
                    b / a
                })
                .collect();
            for r in &ratios {
                assert!((r - ratios[0]).abs() < 1e-6, "{ratios:?}");
            }
            // the ratio of the fourth- to the second-order term is -1/12
            assert!((ratios[0] + 1.0 / 12.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn spectra_multiply_under_scale_addition(
            l2 in 0.2f64..1.0, alpha in 0.0f64..PI, s1 in 0.01f64..3.0, s2 in 0.01f64..3.0,
        ) {
            let spec = CovarianceSpec::from_eigen(1.0, l2, alpha).unwrap();
            let a = SemiDiscreteParams::minimal(spec, s1).unwrap();
            let b = a.with_scale(s2).unwrap();
            let c = a.with_scale(s1 + s2).unwrap();
            let (ta, tb, tc) = (
                transfer_function(&a, 12, 10).unwrap(),
                transfer_function(&b, 12, 10).unwrap(),
                transfer_function(&c, 12, 10).unwrap(),
            );
            for i in 0..120 {
                let prod = ta.values()[i] * tb.values()[i];
                prop_assert!((prod - tc.values()[i]).abs() <= 1e-15 * tc.values()[i].max(1e-300) * 4.0 + 1e-300);
            }
        }

        #[test]
        fn spectrum_is_reflection_symmetric(
            cxx in 0.1f64..3.0, cyy in 0.1f64..3.0, t in -0.9f64..0.9, cxxyy in -1.0f64..3.0, s in 0.1f64..3.0,
        ) {
            let spec = CovarianceSpec::new(cxx, t * (cxx * cyy).sqrt(), cyy).unwrap();
            let p = SemiDiscreteParams::new(spec, cxxyy, s).unwrap();
            let (w, h) = (10, 7);
            let g = transfer_function(&p, w, h).unwrap();
            prop_assert_eq!(g.get(0, 0), 1.0);
            for n in 0..h {
                for m in 0..w {
                    let a = g.get(m, n);
                    let b = g.get((w - m) % w, (h - n) % h);
                    prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(b.abs()));
                }
            }
        }

        #[test]
        fn feasible_spectrum_lies_in_unit_interval(
            l2 in 0.2f64..1.0, alpha in 0.0f64..PI, s in 0.01f64..5.0, t in 0.0f64..1.0,
        ) {
            let spec = CovarianceSpec::from_eigen(1.0, l2, alpha).unwrap();
            let f = spec.cxxyy_feasibility();
            prop_assume!(f.feasible);
            let p = SemiDiscreteParams::new(spec, f.lower + t * (f.upper - f.lower), s).unwrap();
            let g = transfer_function(&p, 9, 8).unwrap();
            prop_assert!(g.values().iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }
}
