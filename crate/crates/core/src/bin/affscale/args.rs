use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use affscale::derivatives::NormalizationSpec;
use affscale::semidiscrete::FeasibilityMode;
use affscale::smoothing::{PathKind, PathOptions};
use affscale::{CovarianceSpec, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "affscale",
    version,
    about = "Discrete affine Gaussian scale space"
)]
pub struct Cli {
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true, env = "AFFSCALE_THREADS")]
    pub threads: Option<usize>,

    /// Write the run report here instead of standard output.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    /// Zero wall-time fields so identical runs give identical reports.
    #[arg(long, global = true)]
    pub no_timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a smoothing or derivative kernel.
    Kernel(KernelArgs),
    /// Smooth an image.
    Smooth(SmoothArgs),
    /// Scale-normalized directional derivative of an image.
    Derive(DeriveArgs),
    /// Build an affine hybrid pyramid.
    Pyramid(PyramidArgs),
    /// Apply a receptive-field filter bank.
    Bank(BankArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
}

/// Covariance of the total smoothing; the result is multiplied by `--s`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CovArgs {
    /// Larger eigenvalue.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Smaller eigenvalue (default: lambda1 * ecc).
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Orientation of the major axis in radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    /// Eigenvalue ratio lambda2 / lambda1 in (0, 1].
    #[arg(long)]
    pub ecc: Option<f64>,
    /// Covariance entry xx (give all three instead of eigenvalues).
    #[arg(long, requires_all = ["cxy", "cyy"], conflicts_with_all = ["lambda1", "lambda2", "ecc"])]
    pub cxx: Option<f64>,
    /// Covariance entry xy.
    #[arg(long, allow_hyphen_values = true)]
    pub cxy: Option<f64>,
    /// Covariance entry yy.
    #[arg(long)]
    pub cyy: Option<f64>,
    /// Identity covariance.
    #[arg(long, conflicts_with_all = ["lambda1", "lambda2", "ecc", "cxx"])]
    pub isotropic: bool,
    /// Scale multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
}

impl CovArgs {
    pub fn base(&self) -> Result<CovarianceSpec> {
        if self.isotropic {
            return Ok(CovarianceSpec::identity());
        }
        if let (Some(cxx), Some(cxy), Some(cyy)) = (self.cxx, self.cxy, self.cyy) {
            return CovarianceSpec::new(cxx, cxy, cyy);
        }
        let lambda1 = self.lambda1.unwrap_or(1.0);
        let lambda2 = match (self.lambda2, self.ecc) {
            (Some(l2), _) => l2,
            (None, Some(e)) => lambda1 * e,
            (None, None) => lambda1,
        };
        CovarianceSpec::from_eigen(lambda1, lambda2, self.alpha)
    }

    pub fn total(&self) -> Result<CovarianceSpec> {
        self.base()?.scaled(self.s)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PathArg {
    Fourier,
    Iter3x3,
    Pyramid,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PathArgs {
    /// Smoothing implementation.
    #[arg(long, value_enum, default_value = "fourier")]
    pub path: PathArg,
    /// Stencil step for the 3x3 and pyramid paths.
    #[arg(long, default_value_t = 0.5)]
    pub ds: f64,
    /// Pyramid smoothing parameter K.
    #[arg(long = "K", default_value_t = 3)]
    pub k_param: u32,
    /// Pyramid subsampling rate.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Deepest pyramid level the scale selector may use.
    #[arg(long, default_value_t = 8)]
    pub max_levels: u32,
    /// Allow Cxxyy outside the non-negativity interval (Fourier path).
    #[arg(long)]
    pub permissive: bool,
}

impl PathArgs {
    pub fn options(&self) -> PathOptions {
        PathOptions {
            kind: match self.path {
                PathArg::Fourier => PathKind::Fourier,
                PathArg::Iter3x3 => PathKind::Iter3x3,
                PathArg::Pyramid => PathKind::Pyramid,
            },
            mode: if self.permissive {
                FeasibilityMode::Permissive
            } else {
                FeasibilityMode::Strict
            },
            delta_s: self.ds,
            pyramid_k: self.k_param,
            rho: self.rho,
            max_levels: self.max_levels,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelArgs {
    #[command(flatten)]
    pub cov: CovArgs,
    #[command(flatten)]
    pub path: PathArgs,
    /// Number of `--ds` steps on the 3x3 path, replacing the `--s` scale.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Explicit Cxxyy (3x3 path with --steps).
    #[arg(long)]
    pub cxxyy: Option<f64>,
    /// Pyramid level and in-level iteration; both or neither.
    #[arg(long, requires = "k")]
    pub level: Option<u32>,
    /// Stencil iterations already applied within that level.
    #[arg(long, requires = "level")]
    pub k: Option<usize>,
    /// Square grid size (default: large enough for the kernel).
    #[arg(long)]
    pub size: Option<usize>,
    /// Output PFM; a JSON sidecar with the same stem is written alongside.
    #[arg(long, default_value = "kernel.pfm")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmoothArgs {
    /// Input image (PFM, PGM or PPM).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PFM.
    #[arg(long, default_value = "smoothed.pfm")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cov: CovArgs,
    #[command(flatten)]
    pub path: PathArgs,
    /// Also smooth in two steps `a,b` (scale multipliers summing to --s)
    /// and report the difference to the one-step result.
    #[arg(long, value_parser = parse_pair_f64)]
    pub split: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormArg {
    None,
    Variance,
    Lp,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NormArgs {
    /// Scale normalization of the response.
    #[arg(long, value_enum, default_value = "none")]
    pub norm: NormArg,
    /// One exponent for both directions, or `g1,g2`.
    #[arg(long, default_value = "1", value_parser = parse_gamma)]
    pub gamma: (f64, f64),
    /// Exponent of the Lp normalization.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
}

impl NormArgs {
    pub fn spec(&self) -> Option<NormalizationSpec> {
        let (g1, g2) = self.gamma;
        match self.norm {
            NormArg::None => None,
            NormArg::Variance => Some(NormalizationSpec::variance(g1, g2)),
            NormArg::Lp => Some(NormalizationSpec::lp(g1, g2, self.p)),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeriveArgs {
    /// Input image (PFM, PGM or PPM).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PFM; with --opponent, `<stem>_u` and `<stem>_v` are written instead.
    #[arg(long, default_value = "derivative.pfm")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cov: CovArgs,
    #[command(flatten)]
    pub path: PathArgs,
    /// Derivative direction in radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub phi: f64,
    /// Orders along and across the direction, `m,n`.
    #[arg(long, default_value = "1,0", value_parser = parse_order)]
    pub order: (u32, u32),
    #[command(flatten)]
    pub norm: NormArgs,
    /// Treat colour input as opponent channels and write the u and v responses.
    #[arg(long)]
    pub opponent: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PyramidArgs {
    /// Input image; without it only the manifest is written.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "pyramid")]
    pub out_dir: PathBuf,
    #[arg(long = "K", default_value_t = 3)]
    pub k_param: u32,
    #[arg(long, default_value_t = 0.5)]
    pub ds: f64,
    /// Eigenvalue ratio lambda2 / lambda1 of the unit covariance.
    #[arg(long, default_value_t = 1.0)]
    pub ecc: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Number of reduce cycles.
    #[arg(long, default_value_t = 3)]
    pub levels: u32,
    /// Accept K <= 2.
    #[arg(long)]
    pub allow_small_k: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BankArgs {
    /// Input image (PFM, PGM or PPM).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Bank description (JSON); the default bank is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "bank")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Run a single criterion by name.
    #[arg(long)]
    pub only: Option<String>,
    /// Seed for the randomized checks.
    #[arg(long, default_value_t = affscale::verify::DEFAULT_SEED)]
    pub seed: u64,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> std::result::Result<(T, T), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated values, got '{s}'"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<T>()
            .map_err(|_| format!("invalid value '{v}'"))
    };
    Ok((parse(a)?, parse(b)?))
}

fn parse_pair_f64(s: &str) -> std::result::Result<(f64, f64), String> {
    parse_pair(s)
}

fn parse_order(s: &str) -> std::result::Result<(u32, u32), String> {
    parse_pair(s)
}

fn parse_gamma(s: &str) -> std::result::Result<(f64, f64), String> {
    if s.contains(',') {
        parse_pair(s)
    } else {
        let g: f64 = s
            .trim()
            .parse()
            .map_err(|_| format!("invalid exponent '{s}'"))?;
        Ok((g, g))
    }
}

pub fn check_positive(value: f64, what: &'static str) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange { value, what })
    }
}
