//! C ABI over `affscale`.
//!
//! Images and pyramids are opaque heap handles released with their `_free`
//! function. Every call returns an [`AffStatus`]; on failure a message is
//! available from [`aff_last_error`] on the same thread. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use affscale::derivatives::{DirectionalOperator, NormalizationSpec};
use affscale::pyramid::{build_pyramid, Pyramid, PyramidConfig};
use affscale::smoothing::{derivative_response, normalization_factor, PathKind, PathOptions};
use affscale::verify::run_criteria;
use affscale::{CovarianceSpec, Error, RealImage};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Infeasible = 3,
    DimensionError = 4,
    NumericalFailure = 5,
    Io = 6,
    Panic = 7,
    VerificationFailed = 8,
}

/// Smoothing implementation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffPath {
    Fourier = 0,
    Iter3x3 = 1,
    Pyramid = 2,
}

/// Scale normalization of derivative responses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffNorm {
    None = 0,
    Variance = 1,
    Lp = 2,
}

/// Covariance in eigen form: eigenvalues and major-axis angle (radians).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AffCovariance {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
}

/// Opaque image handle.
pub struct AffImage(RealImage);

/// Opaque pyramid handle.
pub struct AffPyramid(Pyramid);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AffStatus {
    match err {
        Error::FeasibilityViolation { .. }
        | Error::NegativeCoefficient { .. }
        | Error::InvalidStep(_) => AffStatus::Infeasible,
        Error::EvenSize { .. }
        | Error::DimensionMismatch(_)
        | Error::OddDimensions { .. }
        | Error::DimensionNotDivisible { .. } => AffStatus::DimensionError,
        Error::QuadratureNonConvergence { .. } | Error::ZeroDiscreteNorm => {
            AffStatus::NumericalFailure
        }
        Error::Io(_) | Error::Format(_) | Error::Json(_) => AffStatus::Io,
        _ => AffStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (AffStatus, String)>) -> AffStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AffStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            AffStatus::Panic
        }
    }
}

fn lib<T>(r: affscale::Result<T>) -> Result<T, (AffStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (AffStatus, String) {
    (AffStatus::NullPointer, format!("{what} is null"))
}

unsafe fn image_ref<'a>(img: *const AffImage) -> Result<&'a RealImage, (AffStatus, String)> {
    // SAFETY: the caller passes a handle obtained from this library or null.
    unsafe { img.as_ref() }
        .map(|i| &i.0)
        .ok_or_else(|| null("image"))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), (AffStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller provides writable storage.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn covariance(c: &AffCovariance) -> Result<CovarianceSpec, (AffStatus, String)> {
    lib(CovarianceSpec::from_eigen(c.lambda1, c.lambda2, c.alpha))
}

fn path_options(path: AffPath) -> PathOptions {
    PathOptions::with_kind(match path {
        AffPath::Fourier => PathKind::Fourier,
        AffPath::Iter3x3 => PathKind::Iter3x3,
        AffPath::Pyramid => PathKind::Pyramid,
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `width * height` row-major samples (row 0 at the top) into a new image.
///
/// # Safety
/// `data` must point to `width * height` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aff_image_new(
    width: usize,
    height: usize,
    data: *const f64,
    out: *mut *mut AffImage,
) -> AffStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = width
            .checked_mul(height)
            .ok_or((AffStatus::InvalidArgument, "size overflow".to_string()))?;
        // SAFETY: the caller guarantees `len` readable doubles.
        let samples = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        let img = lib(RealImage::new(width, height, 1.0, samples))?;
        unsafe { write_out(out, AffImage(img)) }
    })
}

/// Releases an image; null is ignored.
///
/// # Safety
/// `img` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aff_image_free(img: *mut AffImage) {
    if !img.is_null() {
        // SAFETY: handle came from Box::into_raw in this library.
        drop(unsafe { Box::from_raw(img) });
    }
}

/// Width, height and grid spacing of an image.
///
/// # Safety
/// `img` must be a live handle; output pointers may be null to skip them.
#[no_mangle]
pub unsafe extern "C" fn aff_image_shape(
    img: *const AffImage,
    width: *mut usize,
    height: *mut usize,
    spacing: *mut f64,
) -> AffStatus {
    guard(|| {
        let img = unsafe { image_ref(img) }?;
        // SAFETY: each pointer is checked before the write.
        unsafe {
            if let Some(w) = width.as_mut() {
                *w = img.width();
            }
            if let Some(h) = height.as_mut() {
                *h = img.height();
            }
            if let Some(s) = spacing.as_mut() {
                *s = img.spacing_h();
            }
        }
        Ok(())
    })
}

/// Copies the samples into `buf`, which must hold `len >= width * height` doubles.
///
/// # Safety
/// `img` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn aff_image_copy(
    img: *const AffImage,
    buf: *mut f64,
    len: usize,
) -> AffStatus {
    guard(|| {
        let img = unsafe { image_ref(img) }?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let samples = img.samples();
        if len < samples.len() {
            return Err((
                AffStatus::DimensionError,
                format!("buffer holds {len} values, image has {}", samples.len()),
            ));
        }
        // SAFETY: bounds checked above; regions cannot overlap (fresh caller buffer).
        unsafe { ptr::copy_nonoverlapping(samples.as_ptr(), buf, samples.len()) };
        Ok(())
    })
}

/// Impulse response of the chosen smoothing path on a `width x height` grid.
///
/// # Safety
/// `cov` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aff_kernel(
    cov: *const AffCovariance,
    path: AffPath,
    width: usize,
    height: usize,
    out: *mut *mut AffImage,
) -> AffStatus {
    guard(|| {
        let cov = unsafe { cov.as_ref() }.ok_or_else(|| null("covariance"))?;
        let p = lib(path_options(path).build(&covariance(cov)?))?;
        let k = lib(p.impulse_response(width, height))?;
        unsafe { write_out(out, AffImage(k)) }
    })
}

/// Smooths `img` to total covariance `cov`. On the pyramid path the result
/// is on the coarse grid; its spacing is reported by [`aff_image_shape`].
///
/// # Safety
/// `img` and `cov` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aff_smooth(
    img: *const AffImage,
    cov: *const AffCovariance,
    path: AffPath,
    out: *mut *mut AffImage,
) -> AffStatus {
    guard(|| {
        let img = unsafe { image_ref(img) }?;
        let cov = unsafe { cov.as_ref() }.ok_or_else(|| null("covariance"))?;
        let p = lib(path_options(path).build(&covariance(cov)?))?;
        let smoothed = lib(p.smooth(img))?;
        unsafe { write_out(out, AffImage(smoothed)) }
    })
}

/// Scale-normalized directional derivative of order `(m, n)` along `phi`.
/// `gamma` and `p` are used by the variance and lp modes; `factor_out` may
/// be null.
///
/// # Safety
/// `img` and `cov` must be valid, `out` writable, `factor_out` null or writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn aff_derivative(
    img: *const AffImage,
    cov: *const AffCovariance,
    path: AffPath,
    phi: f64,
    m: u32,
    n: u32,
    norm: AffNorm,
    gamma: f64,
    p: f64,
    out: *mut *mut AffImage,
    factor_out: *mut f64,
) -> AffStatus {
    guard(|| {
        let img = unsafe { image_ref(img) }?;
        let cov = unsafe { cov.as_ref() }.ok_or_else(|| null("covariance"))?;
        let sp = lib(path_options(path).build(&covariance(cov)?))?;
        let op = lib(DirectionalOperator::new(phi, m, n))?;
        let spec = match norm {
            AffNorm::None => None,
            AffNorm::Variance => Some(NormalizationSpec::variance(gamma, gamma)),
            AffNorm::Lp => Some(NormalizationSpec::lp(gamma, gamma, p)),
        };
        let factor = lib(normalization_factor(&sp, &op, spec.as_ref()))?;
        let smoothed = lib(sp.smooth(img))?;
        let resp = derivative_response(&smoothed, &op, factor);
        // SAFETY: optional output, checked for null.
        if let Some(f) = unsafe { factor_out.as_mut() } {
            *f = factor;
        }
        unsafe { write_out(out, AffImage(resp)) }
    })
}

/// Builds `num_levels` reduce cycles with unit covariance of eigenvalue
/// ratio `eccentricity` at angle `alpha`.
///
/// # Safety
/// `img` must be valid and `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn aff_pyramid_build(
    img: *const AffImage,
    k_param: u32,
    delta_s: f64,
    eccentricity: f64,
    alpha: f64,
    rho: f64,
    num_levels: u32,
    out: *mut *mut AffPyramid,
) -> AffStatus {
    guard(|| {
        let img = unsafe { image_ref(img) }?;
        let spec = lib(CovarianceSpec::from_eigen(1.0, eccentricity, alpha))?;
        let config = lib(PyramidConfig::new(k_param, delta_s, spec, rho, num_levels))?;
        let pyr = lib(build_pyramid(img, &config, num_levels))?;
        unsafe { write_out(out, AffPyramid(pyr)) }
    })
}

/// Releases a pyramid; null is ignored.
///
/// # Safety
/// `pyr` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aff_pyramid_free(pyr: *mut AffPyramid) {
    if !pyr.is_null() {
        // SAFETY: handle came from Box::into_raw in this library.
        drop(unsafe { Box::from_raw(pyr) });
    }
}

/// Number of stored levels (reduce cycles plus one).
///
/// # Safety
/// `pyr` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn aff_pyramid_level_count(
    pyr: *const AffPyramid,
    count: *mut usize,
) -> AffStatus {
    guard(|| {
        let pyr = unsafe { pyr.as_ref() }.ok_or_else(|| null("pyramid"))?;
        let count = unsafe { count.as_mut() }.ok_or_else(|| null("count"))?;
        *count = pyr.0.levels.len();
        Ok(())
    })
}

/// Copy of level `level` plus its accumulated eigen-scales.
///
/// # Safety
/// `pyr` must be a live handle, `out` writable, the scale pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn aff_pyramid_level(
    pyr: *const AffPyramid,
    level: usize,
    out: *mut *mut AffImage,
    lambda1: *mut f64,
    lambda2: *mut f64,
) -> AffStatus {
    guard(|| {
        let pyr = unsafe { pyr.as_ref() }.ok_or_else(|| null("pyramid"))?;
        let l = pyr.0.levels.get(level).ok_or_else(|| {
            (
                AffStatus::InvalidArgument,
                format!("level {level} out of range ({} levels)", pyr.0.levels.len()),
            )
        })?;
        // SAFETY: optional outputs, checked for null.
        unsafe {
            if let Some(v) = lambda1.as_mut() {
                *v = l.accumulated_lambda1;
            }
            if let Some(v) = lambda2.as_mut() {
                *v = l.accumulated_lambda2;
            }
        }
        unsafe { write_out(out, AffImage(l.image.clone())) }
    })
}

/// Runs the acceptance checks (all when `only` is null) and stores the
/// number of failures. Returns `VerificationFailed` when any fails.
///
/// # Safety
/// `only` must be null or a NUL-terminated string; `failures` null or writable.
#[no_mangle]
pub unsafe extern "C" fn aff_verify(
    only: *const c_char,
    seed: u64,
    failures: *mut usize,
) -> AffStatus {
    let mut failed = 0usize;
    let status = guard(|| {
        let slug = if only.is_null() {
            None
        } else {
            // SAFETY: caller passes a NUL-terminated string.
            Some(unsafe { CStr::from_ptr(only) }.to_str().map_err(|_| {
                (
                    AffStatus::InvalidArgument,
                    "criterion name is not UTF-8".to_string(),
                )
            })?)
        };
        let results = lib(run_criteria(slug, seed))?;
        failed = results.iter().filter(|r| !r.passed).count();
        if failed > 0 {
            let names: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.slug.as_str())
                .collect();
            return Err((
                AffStatus::VerificationFailed,
                format!("failed: {}", names.join(", ")),
            ));
        }
        Ok(())
    });
    // SAFETY: optional output, checked for null.
    if let Some(f) = unsafe { failures.as_mut() } {
        *f = failed;
    }
    status
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_mapping() {
        assert_eq!(status_of(&Error::EmptyBank), AffStatus::InvalidArgument);
        assert_eq!(
            status_of(&Error::OddDimensions {
                width: 3,
                height: 4
            }),
            AffStatus::DimensionError
        );
        assert_eq!(
            status_of(&Error::ZeroDiscreteNorm),
            AffStatus::NumericalFailure
        );
        assert_eq!(
            status_of(&Error::FeasibilityViolation {
                value: 1.0,
                lower: 0.0,
                upper: 0.5
            }),
            AffStatus::Infeasible
        );
    }

    #[test]
    fn panics_become_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, AffStatus::Panic);
        let msg = unsafe { CStr::from_ptr(aff_last_error()) }
            .to_str()
            .unwrap();
        assert!(msg.contains("boom"));
    }
}
