use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use affscale::bank::{apply_bank, hemisphere_angle, BankKey, BankSpec};
use affscale::chroma::{opponent_receptive_field, rgb_to_opponent};
use affscale::derivatives::DirectionalOperator;
use affscale::io::{kernel_matrix, read_planes, write_json, write_pfm, write_pfm_rgb, Planes};
use affscale::iterkernel::{choose_cxxyy_for_step, validate_step, IterationPlan, Stencil3x3};
use affscale::pyramid::{build_pyramid, manifest_for, PyramidConfig};
use affscale::smoothing::{derivative_response, normalization_factor, PathKind, SmoothingPath};
use affscale::verify::{run_criteria, Check, RunReport};
use affscale::{kernel_moments, CovarianceSpec, Error, RealImage, Result};

use crate::args::{
    check_positive, BankArgs, DeriveArgs, KernelArgs, PyramidArgs, SmoothArgs, VerifyArgs,
};

fn check(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Check {
    Check {
        name: name.to_string(),
        passed: measured <= tolerance,
        measured,
        tolerance,
        detail: detail.into(),
    }
}

/// `dir/stem_suffix.ext` next to `path`.
fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Path for `kernel`, honouring the explicit-step and explicit-level flags.
fn kernel_path(
    args: &KernelArgs,
    sigma: &CovarianceSpec,
) -> Result<(SmoothingPath, Option<Stencil3x3>)> {
    let opts = args.path.options();
    match (opts.kind, args.steps, args.level) {
        (PathKind::Iter3x3, Some(steps), _) => {
            let (unit, _) = args.cov.base()?.normalize();
            let ds = opts.delta_s;
            let cxxyy = match args.cxxyy {
                Some(v) => v,
                None => choose_cxxyy_for_step(&unit, ds)?,
            };
            let report = validate_step(unit.cxx(), unit.cxy(), unit.cyy(), cxxyy, ds)?;
            if !report.ok && !args.path.permissive {
                return Err(Error::InvalidStep(format!(
                    "step {ds} with Cxxyy = {cxxyy} fails validation: {report:?}"
                )));
            }
            let stencil = Stencil3x3::for_spec(&unit, cxxyy, ds)?;
            Ok((
                SmoothingPath::Iter3x3 {
                    plan: IterationPlan::repeat(stencil, steps),
                },
                Some(stencil),
            ))
        }
        (PathKind::Pyramid, _, Some(level)) => {
            let (unit, _) = sigma.normalize();
            let config = PyramidConfig::new(
                opts.pyramid_k,
                opts.delta_s,
                unit,
                opts.rho,
                opts.max_levels,
            )?;
            let k = args.k.unwrap_or(0);
            Ok((SmoothingPath::Pyramid { config, level, k }, None))
        }
        _ => Ok((opts.build(sigma)?, None)),
    }
}

pub fn kernel(args: &KernelArgs, report: &mut RunReport) -> Result<()> {
    let sigma = args.cov.total()?;
    let (path, stencil) = kernel_path(args, &sigma)?;
    let size = match args.size {
        Some(n) => n,
        None => path.natural_kernel_size()?,
    };
    let kernel = report.time("kernel", || path.impulse_response(size, size))?;
    let realized = path.covariance()?;
    let m = kernel_moments(&kernel);
    let cov_err = [
        (m.covariance.xx, realized.cxx()),
        (m.covariance.xy, realized.cxy()),
        (m.covariance.yy, realized.cyy()),
    ]
    .iter()
    .map(|(got, want)| (got - want).abs() / realized.lambda_max())
    .fold(0.0, f64::max);
    report.checks.push(check(
        "mass",
        (m.mass - 1.0).abs(),
        1e-9,
        "|kernel sum - 1|",
    ));
    report.checks.push(check(
        "covariance",
        cov_err,
        1e-6,
        "max covariance entry error relative to lambda_max",
    ));
    let min = kernel.min();
    report.checks.push(check(
        "non-negative",
        (-min).max(0.0),
        1e-14,
        "largest negative kernel value",
    ));

    let feasibility = realized.cxxyy_feasibility();
    let meta = json!({
        "path": to_value(&path),
        "covariance": to_value(&realized),
        "width": size,
        "height": size,
        "moments": to_value(&m),
        "feasibility": to_value(&feasibility),
        "stencil": stencil.map(|s| s.taps),
        "matrix": kernel_matrix(&kernel).ok().map(|k| to_value(&k)),
    });
    report.time("write", || -> Result<()> {
        write_pfm(&args.out, &kernel)?;
        write_json(args.out.with_extension("json"), &meta)?;
        if let Some(st) = &stencil {
            let text: String = st
                .taps
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                        + "\n"
                })
                .collect();
            fs::write(sibling(&args.out, ".stencil", "txt"), text)?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Reads an image, naming the file in I/O errors.
fn read_input(path: &Path) -> Result<Planes> {
    read_planes(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn map_planes(planes: &Planes, f: impl Fn(&RealImage) -> Result<RealImage>) -> Result<Planes> {
    Ok(match planes {
        Planes::Grey(g) => Planes::Grey(f(g)?),
        Planes::Rgb([r, g, b]) => Planes::Rgb([f(r)?, f(g)?, f(b)?]),
    })
}

fn write_planes(path: &Path, planes: &Planes) -> Result<()> {
    match planes {
        Planes::Grey(g) => write_pfm(path, g),
        Planes::Rgb([r, g, b]) => write_pfm_rgb(path, [r, g, b]),
    }
}

fn max_diff(a: &Planes, b: &Planes) -> Result<f64> {
    match (a, b) {
        (Planes::Grey(x), Planes::Grey(y)) => x.max_abs_diff(y),
        (Planes::Rgb(x), Planes::Rgb(y)) => {
            let mut d: f64 = 0.0;
            for (p, q) in x.iter().zip(y) {
                d = d.max(p.max_abs_diff(q)?);
            }
            Ok(d)
        }
        _ => Err(Error::DimensionMismatch("plane counts differ".into())),
    }
}

pub fn smooth(args: &SmoothArgs, report: &mut RunReport) -> Result<()> {
    let input = report.time("read", || read_input(&args.input))?;
    let opts = args.path.options();
    let sigma = args.cov.total()?;
    let path = opts.build(&sigma)?;
    let out = report.time("smooth", || map_planes(&input, |p| path.smooth(p)))?;
    if let Some((a, b)) = args.split {
        check_positive(a, "split scales must be positive")?;
        check_positive(b, "split scales must be positive")?;
        if (a + b - args.cov.s).abs() > 1e-12 * args.cov.s.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "split {a} + {b} does not add up to s = {}",
                args.cov.s
            )));
        }
        if opts.kind == PathKind::Pyramid {
            return Err(Error::InvalidParameter(
                "two-step smoothing is not defined on the pyramid path".into(),
            ));
        }
        let base = args.cov.base()?;
        let first = opts.build(&base.scaled(a)?)?;
        let second = opts.build(&base.scaled(b)?)?;
        let two = report.time("two-step", || {
            map_planes(&input, |p| second.smooth(&first.smooth(p)?))
        })?;
        let diff = max_diff(&two, &out)?;
        report.checks.push(check(
            "semigroup",
            diff,
            1e-10,
            format!("max abs difference, split {a} + {b}"),
        ));
    }
    report.parameters["realized_covariance"] = to_value(&path.covariance()?);
    report.parameters["smoothing_path"] = to_value(&path);
    report.time("write", || write_planes(&args.out, &out))
}

pub fn derive(args: &DeriveArgs, report: &mut RunReport) -> Result<()> {
    let input = report.time("read", || read_input(&args.input))?;
    let sigma = args.cov.total()?;
    let path = args.path.options().build(&sigma)?;
    let op = DirectionalOperator::new(args.phi, args.order.0, args.order.1)?;
    let norm = args.norm.spec();
    report.parameters["smoothing_path"] = to_value(&path);
    report.parameters["mask"] = to_value(&op.mask.to_matrix());
    match (input, args.opponent) {
        (Planes::Rgb([r, g, b]), true) => {
            let opp = rgb_to_opponent(&r, &g, &b)?;
            let resp = report.time("derive", || {
                opponent_receptive_field(&opp, &path, &op, norm.as_ref())
            })?;
            report.parameters["norm_factor"] = json!(resp.factor);
            report.time("write", || -> Result<()> {
                write_pfm(sibling(&args.out, "_u", "pfm"), &resp.u)?;
                write_pfm(sibling(&args.out, "_v", "pfm"), &resp.v)
            })
        }
        (Planes::Grey(_), true) => Err(Error::InvalidParameter(
            "--opponent needs a colour input".into(),
        )),
        (planes, false) => {
            let factor = report.time("normalization", || {
                normalization_factor(&path, &op, norm.as_ref())
            })?;
            report.parameters["norm_factor"] = json!(factor);
            let out = report.time("derive", || {
                map_planes(&planes, |p| {
                    Ok(derivative_response(&path.smooth(p)?, &op, factor))
                })
            })?;
            report.time("write", || write_planes(&args.out, &out))
        }
    }
}

pub fn pyramid(args: &PyramidArgs, report: &mut RunReport) -> Result<()> {
    let spec = CovarianceSpec::from_eigen(1.0, args.ecc, args.alpha)?;
    let config = if args.allow_small_k {
        PyramidConfig::new_unchecked_k(args.k_param, args.ds, spec, args.rho, args.levels)?
    } else {
        PyramidConfig::new(args.k_param, args.ds, spec, args.rho, args.levels)?
    };
    fs::create_dir_all(&args.out_dir)?;
    let manifest = match &args.input {
        Some(input) => {
            let image = report.time("read", || read_input(input))?.into_grey();
            let pyr = report.time("build", || build_pyramid(&image, &config, args.levels))?;
            report.time("write", || -> Result<()> {
                for level in &pyr.levels {
                    write_pfm(
                        args.out_dir.join(format!("level_{}.pfm", level.level)),
                        &level.image,
                    )?;
                }
                Ok(())
            })?;
            pyr.manifest()
        }
        None => manifest_for(&config, args.levels, None)?,
    };
    write_json(args.out_dir.join("manifest.json"), &manifest)?;
    report.parameters["iterations_per_level"] = json!(manifest.iterations_per_level);
    Ok(())
}

#[derive(Serialize)]
struct IndexEntry {
    key: BankKey,
    file: String,
    lambda_max: f64,
    eccentricity: f64,
    hemisphere_angle_deg: f64,
    phi: f64,
    covariance: CovarianceSpec,
    norm_factor: f64,
}

fn response_name(k: &BankKey) -> String {
    format!(
        "s{}_e{}_o{}_m{}n{}.pfm",
        k.size, k.eccentricity, k.orientation, k.m, k.n
    )
}

pub fn bank(args: &BankArgs, report: &mut RunReport) -> Result<()> {
    let spec: BankSpec = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => BankSpec::default(),
    };
    let image = report.time("read", || read_input(&args.input))?.into_grey();
    let res = report.time("bank", || apply_bank(&image, &spec))?;
    fs::create_dir_all(&args.out_dir)?;
    let mut entries = Vec::with_capacity(res.responses.len());
    report.time("write", || -> Result<()> {
        for (key, r) in &res.responses {
            let file = response_name(key);
            write_pfm(args.out_dir.join(&file), &r.image)?;
            entries.push(IndexEntry {
                key: *key,
                file,
                lambda_max: r.entry.lambda_max,
                eccentricity: r.entry.eccentricity,
                hemisphere_angle_deg: hemisphere_angle(r.entry.eccentricity)?,
                phi: r.entry.phi,
                covariance: r.entry.covariance,
                norm_factor: r.factor,
            });
        }
        Ok(())
    })?;
    write_json(
        args.out_dir.join("index.json"),
        &json!({
            "spec": to_value(&spec),
            "responses": to_value(&entries),
            "skipped": to_value(&res.skipped),
            "smoothing_passes": res.smoothing_passes,
        }),
    )?;
    report.parameters["responses"] = json!(res.responses.len());
    report.parameters["skipped"] = json!(res.skipped.len());
    report.parameters["smoothing_passes"] = json!(res.smoothing_passes);
    Ok(())
}

pub fn verify(args: &VerifyArgs, report: &mut RunReport) -> Result<()> {
    let results = run_criteria(args.only.as_deref(), args.seed)?;
    for r in &results {
        eprintln!(
            "[{}] {:>2} {:<30} measured {:.6e} tolerance {:.3e} ({:.3} ms of {} ms)",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.slug,
            r.measured,
            r.tolerance,
            r.elapsed_ms,
            r.budget_ms
        );
        report.timing.push(affscale::verify::StageTiming {
            stage: r.slug.clone(),
            wall_ms: r.elapsed_ms,
        });
        report.checks.push(r.to_check());
    }
    Ok(())
}
