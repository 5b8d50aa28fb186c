//! Affine hybrid pyramids: a fixed number of 3x3 smoothing steps per level
//! followed by subsampling by two, with exact scale bookkeeping.
//!
//! Level `l` has grid spacing `h = 2^l` in original-grid units; a stencil
//! step with covariance `delta_s * Sigma` at that level contributes
//! `h^2 * delta_s * Sigma` to the accumulated covariance.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::derivatives::DirectionalOperator;
use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::iterkernel::{choose_cxxyy_for_step, validate_step, Stencil3x3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    /// Smoothing parameter: at most `K / (2 delta_s lambda2)` steps per level.
    pub k_param: u32,
    pub delta_s: f64,
    /// Unit covariance (largest eigenvalue 1).
    pub spec: CovarianceSpec,
    pub rho: f64,
    pub max_levels: u32,
}

impl PyramidConfig {
    /// Validated configuration; `K > 2` is required.
    pub fn new(
        k_param: u32,
        delta_s: f64,
        spec: CovarianceSpec,
        rho: f64,
        max_levels: u32,
    ) -> Result<Self> {
        if k_param <= 2 {
            return Err(Error::InvalidParameter(format!(
                "K must exceed 2 for adequate smoothing before subsampling, got {k_param}"
            )));
        }
        Self::new_unchecked_k(k_param, delta_s, spec, rho, max_levels)
    }

    /// As [`PyramidConfig::new`] without the `K > 2` requirement.
    pub fn new_unchecked_k(
        k_param: u32,
        delta_s: f64,
        spec: CovarianceSpec,
        rho: f64,
        max_levels: u32,
    ) -> Result<Self> {
        if k_param == 0 {
            return Err(Error::InvalidParameter("K must be positive".into()));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::OutOfRange {
                value: rho,
                what: "subsampling rate must be non-negative",
            });
        }
        let config = Self {
            k_param,
            delta_s,
            spec,
            rho,
            max_levels,
        };
        config.stencil()?;
        Ok(config)
    }

    /// Defaults: `K = 3`, `delta_s = 1/2`, `rho = 1`.
    pub fn with_defaults(spec: CovarianceSpec, max_levels: u32) -> Result<Self> {
        Self::new(3, 0.5, spec, 1.0, max_levels)
    }

    /// The within-level smoothing stencil.
    pub fn stencil(&self) -> Result<Stencil3x3> {
        let cxxyy = choose_cxxyy_for_step(&self.spec, self.delta_s)?;
        let report = validate_step(
            self.spec.cxx(),
            self.spec.cxy(),
            self.spec.cyy(),
            cxxyy,
            self.delta_s,
        )?;
        if !report.ok {
            return Err(Error::InvalidStep(format!(
                "pyramid step {} fails validation: {report:?}",
                self.delta_s
            )));
        }
        Stencil3x3::for_spec(&self.spec, cxxyy, self.delta_s)
    }
}

/// `floor(K / (2 delta_s lambda2))`.
pub fn max_iterations_per_level(config: &PyramidConfig) -> Result<usize> {
    let lambda2 = config.spec.lambda2();
    if !(lambda2 > 0.0) {
        return Err(Error::DegenerateEccentricity);
    }
    // the small offset keeps exact quotients such as 3 / 0.25 from rounding down
    Ok((config.k_param as f64 / (2.0 * config.delta_s * lambda2) + 1e-9).floor() as usize)
}

/// Accumulated scale multiplier of state `(level, k)`: the covariance there
/// is this value times the unit covariance.
pub fn accumulated_scale(config: &PyramidConfig, level: u32, k: usize) -> Result<f64> {
    let per_level = max_iterations_per_level(config)? as f64 * config.delta_s;
    let completed: f64 = (0..level).map(|l| per_level * 4f64.powi(l as i32)).sum();
    Ok(completed + k as f64 * config.delta_s * 4f64.powi(level as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidLevel {
    pub level: u32,
    pub spacing_h: f64,
    pub image: RealImage,
    pub iterations_done: usize,
    /// Accumulated scale multiplier `s`, so the covariance is `s * Sigma`.
    pub accumulated_s: f64,
    pub accumulated_lambda1: f64,
    pub accumulated_lambda2: f64,
}

impl PyramidLevel {
    /// Level-0 state for an input image.
    pub fn base(image: RealImage, config: &PyramidConfig) -> Self {
        Self::at(0, image.with_spacing(1.0), 0, 0.0, config)
    }

    fn at(level: u32, image: RealImage, k: usize, s: f64, config: &PyramidConfig) -> Self {
        Self {
            level,
            spacing_h: 2f64.powi(level as i32),
            image,
            iterations_done: k,
            accumulated_s: s,
            accumulated_lambda1: s * config.spec.lambda1(),
            accumulated_lambda2: s * config.spec.lambda2(),
        }
    }

    /// Accumulated covariance in original-grid units.
    pub fn covariance(&self, config: &PyramidConfig) -> Option<CovarianceSpec> {
        config.spec.scaled(self.accumulated_s).ok()
    }
}

/// Keeps the samples at even indices; the spacing doubles.
pub fn subsample(image: &RealImage) -> Result<RealImage> {
    let (w, h) = (image.width(), image.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::OddDimensions {
            width: w,
            height: h,
        });
    }
    let out = RealImage::from_fn(w / 2, h / 2, |c, r| image.get(2 * c, 2 * r));
    Ok(out.with_spacing(image.spacing_h() * 2.0))
}

/// Zero-interleaved upsampling; the spacing halves.
pub fn enlarge(image: &RealImage) -> RealImage {
    let (w, h) = (image.width(), image.height());
    let mut out = RealImage::zeros(2 * w, 2 * h).with_spacing(image.spacing_h() / 2.0);
    for r in 0..h {
        for c in 0..w {
            out.set(2 * c, 2 * r, image.get(c, r));
        }
    }
    out
}

/// Runs `k` further stencil steps within the current level.
pub fn smooth_within_level(
    state: &PyramidLevel,
    config: &PyramidConfig,
    k: usize,
) -> Result<PyramidLevel> {
    let taps = config.stencil()?.as_taps();
    let mut image = state.image.clone();
    for _ in 0..k {
        image = image.correlate(&taps);
    }
    let ds = k as f64 * config.delta_s * state.spacing_h * state.spacing_h;
    Ok(PyramidLevel::at(
        state.level,
        image,
        state.iterations_done + k,
        state.accumulated_s + ds,
        config,
    ))
}

/// Completes the level's smoothing budget and subsamples.
pub fn reduce_cycle(state: &PyramidLevel, config: &PyramidConfig) -> Result<PyramidLevel> {
    let kmax = max_iterations_per_level(config)?;
    if state.iterations_done > kmax {
        return Err(Error::UnreachableTarget {
            level: state.level,
            k: state.iterations_done as u32,
            reason: format!("more than {kmax} iterations before subsampling"),
        });
    }
    let (w, h) = (state.image.width(), state.image.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::OddDimensions {
            width: w,
            height: h,
        });
    }
    let smoothed = smooth_within_level(state, config, kmax - state.iterations_done)?;
    Ok(PyramidLevel::at(
        state.level + 1,
        subsample(&smoothed.image)?,
        0,
        smoothed.accumulated_s,
        config,
    ))
}

/// A built pyramid: `levels[l]` is state `(l, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub config: PyramidConfig,
    pub iterations_per_level: usize,
    pub levels: Vec<PyramidLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelManifest {
    pub level: u32,
    pub spacing_h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    /// Stencil steps taken at this level before subsampling; `None` on the
    /// top level.
    pub steps_before_subsampling: Option<usize>,
    pub accumulated_s: f64,
    pub accumulated_lambda1: f64,
    pub accumulated_lambda2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidManifest {
    pub config: PyramidConfig,
    pub iterations_per_level: usize,
    pub levels: Vec<LevelManifest>,
}

/// Manifest of levels `0..=num_levels`, with sizes when the base size is known.
pub fn manifest_for(
    config: &PyramidConfig,
    num_levels: u32,
    base: Option<(usize, usize)>,
) -> Result<PyramidManifest> {
    let kmax = max_iterations_per_level(config)?;
    let levels = (0..=num_levels)
        .map(|l| {
            let s = accumulated_scale(config, l, 0)?;
            Ok(LevelManifest {
                level: l,
                spacing_h: 2f64.powi(l as i32),
                width: base.map(|(w, _)| w >> l),
                height: base.map(|(_, h)| h >> l),
                steps_before_subsampling: (l < num_levels).then_some(kmax),
                accumulated_s: s,
                accumulated_lambda1: s * config.spec.lambda1(),
                accumulated_lambda2: s * config.spec.lambda2(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(PyramidManifest {
        config: *config,
        iterations_per_level: kmax,
        levels,
    })
}

impl Pyramid {
    pub fn manifest(&self) -> PyramidManifest {
        let base = &self.levels[0].image;
        let top = self.levels.len() as u32 - 1;
        manifest_for(&self.config, top, Some((base.width(), base.height())))
            .expect("validated at build time")
    }
}

pub fn build_pyramid(
    image: &RealImage,
    config: &PyramidConfig,
    num_levels: u32,
) -> Result<Pyramid> {
    let divisor = 1usize << num_levels;
    if !image.width().is_multiple_of(divisor) || !image.height().is_multiple_of(divisor) {
        return Err(Error::DimensionNotDivisible {
            width: image.width(),
            height: image.height(),
            divisor,
        });
    }
    let mut levels = vec![PyramidLevel::base(image.clone(), config)];
    for _ in 0..num_levels {
        let next = reduce_cycle(levels.last().expect("non-empty"), config)?;
        levels.push(next);
    }
    Ok(Pyramid {
        config: *config,
        iterations_per_level: max_iterations_per_level(config)?,
        levels,
    })
}

/// State `(level, k)` reached from a full-resolution image.
pub fn state_at(
    image: &RealImage,
    config: &PyramidConfig,
    level: u32,
    k: usize,
) -> Result<PyramidLevel> {
    check_reachable(config, level, k)?;
    let pyramid = build_pyramid(image, config, level)?;
    let top = pyramid.levels.last().expect("non-empty");
    smooth_within_level(top, config, k)
}

fn check_reachable(config: &PyramidConfig, level: u32, k: usize) -> Result<()> {
    if level > config.max_levels {
        return Err(Error::UnreachableTarget {
            level,
            k: k as u32,
            reason: format!("configuration allows at most {} levels", config.max_levels),
        });
    }
    Ok(())
}

/// Spacing `h` allowed at accumulated scale `total_s`: the largest power of
/// two not exceeding `rho * sqrt(total_s * lambda_min)`, and at least 1.
pub fn subsampling_gate(total_s: f64, spec: &CovarianceSpec, rho: f64) -> f64 {
    let h_max = rho * (total_s.max(0.0)).sqrt() * spec.lambda1().sqrt().min(spec.lambda2().sqrt());
    if !(h_max >= 1.0) || !h_max.is_finite() {
        return 1.0;
    }
    let mut h = 1.0;
    while h * 2.0 <= h_max {
        h *= 2.0;
    }
    h
}

/// State `(level, k)` whose accumulated scale is nearest to `total_s` with
/// the spacing kept within [`subsampling_gate`]. Once the gate stops
/// further subsampling, `k` may exceed the per-level budget.
pub fn state_for_scale(config: &PyramidConfig, total_s: f64) -> Result<(u32, usize)> {
    if !(total_s >= 0.0 && total_s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale must be non-negative, got {total_s}"
        )));
    }
    let gate = subsampling_gate(total_s, &config.spec, config.rho);
    let mut level = (gate.log2().round() as u32).min(config.max_levels);
    while level > 0 && accumulated_scale(config, level, 0)? > total_s {
        level -= 1;
    }
    let base = accumulated_scale(config, level, 0)?;
    let per_step = config.delta_s * 4f64.powi(level as i32);
    Ok((level, ((total_s - base) / per_step).round() as usize))
}

/// Smallest square grid that holds the equivalent kernel of `(level, k)`
/// without wrap-around and keeps every level's size even.
pub fn equivalent_kernel_size(config: &PyramidConfig, level: u32, k: usize) -> Result<usize> {
    let kmax = max_iterations_per_level(config)?;
    let radius: usize = (0..level).map(|l| kmax << l).sum::<usize>() + (k << level);
    let step = 1usize << (level + 1);
    let needed = 2 * radius + 2 + (1usize << level);
    Ok(needed.div_ceil(step) * step)
}

fn expand_all(seed: RealImage, config: &PyramidConfig, level: u32, k: usize) -> Result<RealImage> {
    let kmax = max_iterations_per_level(config)?;
    let taps = config.stencil()?.as_taps();
    let mut image = seed;
    for _ in 0..k {
        image = image.correlate(&taps);
    }
    for _ in 0..level {
        image = enlarge(&image);
        for _ in 0..kmax {
            image = image.correlate(&taps);
        }
    }
    Ok(image.with_spacing(1.0))
}

/// Full-resolution kernel whose inner product with the input gives the
/// value of state `(level, k)` at the grid center.
pub fn equivalent_kernel(config: &PyramidConfig, level: u32, k: usize) -> Result<RealImage> {
    check_reachable(config, level, k)?;
    let n = equivalent_kernel_size(config, level, k)? >> level;
    expand_all(RealImage::impulse(n, n), config, level, k)
}

/// Equivalent kernel of a directional derivative taken at state
/// `(level, k)`, including the `1 / h^(m+n)` factor.
pub fn equivalent_derivative_kernel(
    config: &PyramidConfig,
    level: u32,
    k: usize,
    phi: f64,
    m: u32,
    n: u32,
) -> Result<RealImage> {
    check_reachable(config, level, k)?;
    let op = DirectionalOperator::new(phi, m, n)?;
    let size = (equivalent_kernel_size(config, level, k)? + (2usize << level)) >> level;
    let seed = op.apply(&RealImage::impulse(size, size), 1.0);
    let h = 2f64.powi(level as i32);
    Ok(expand_all(seed, config, level, k)?.scaled(h.powi(-((m + n) as i32))))
}
