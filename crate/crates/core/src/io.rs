//! Image and metadata file formats: PFM for floating-point planes, binary
//! PGM/PPM for 8- and 16-bit input, JSON for everything else.
//!
//! PFM stores rows bottom to top; row 0 of a [`RealImage`] is the top row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::RealImage;

/// Largest kernel side exported as a JSON matrix.
pub const MAX_JSON_KERNEL_SIZE: usize = 33;

/// A decoded image: one plane or an RGB triple.
#[derive(Debug, Clone, PartialEq)]
pub enum Planes {
    Grey(RealImage),
    Rgb([RealImage; 3]),
}

impl Planes {
    /// Single plane; colour input is averaged.
    pub fn into_grey(self) -> RealImage {
        match self {
            Planes::Grey(g) => g,
            Planes::Rgb([r, g, b]) => RealImage::from_fn(r.width(), r.height(), |c, row| {
                (r.get(c, row) + g.get(c, row) + b.get(c, row)) / 3.0
            }),
        }
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_pfm_to(mut w: impl Write, planes: &[&RealImage]) -> Result<()> {
    let first = planes
        .first()
        .ok_or_else(|| format_err("no planes to write"))?;
    for p in planes {
        first.check_shape(p)?;
    }
    let magic = match planes.len() {
        1 => "Pf",
        3 => "PF",
        n => return Err(format_err(format!("PFM holds 1 or 3 planes, got {n}"))),
    };
    write!(w, "{magic}\n{} {}\n-1.0\n", first.width(), first.height())?;
    let mut buf = Vec::with_capacity(first.width() * planes.len() * 4);
    for row in (0..first.height()).rev() {
        buf.clear();
        for col in 0..first.width() {
            for p in planes {
                buf.extend_from_slice(&(p.get(col, row) as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pfm(path: impl AsRef<Path>, image: &RealImage) -> Result<()> {
    write_pfm_to(BufWriter::new(File::create(path)?), &[image])
}

pub fn write_pfm_rgb(path: impl AsRef<Path>, planes: [&RealImage; 3]) -> Result<()> {
    write_pfm_to(BufWriter::new(File::create(path)?), &planes)
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            b => token.push(b),
        }
    }
    if token.is_empty() {
        return Err(format_err("truncated header"));
    }
    String::from_utf8(token).map_err(|_| format_err("non-ASCII header"))
}

fn header_number<T: std::str::FromStr>(r: &mut impl BufRead, what: &str) -> Result<T> {
    let tok = header_token(r)?;
    tok.parse()
        .map_err(|_| format_err(format!("bad {what} '{tok}'")))
}

fn dimensions(r: &mut impl BufRead) -> Result<(usize, usize)> {
    let width: usize = header_number(r, "width")?;
    let height: usize = header_number(r, "height")?;
    if width == 0 || height == 0 {
        return Err(format_err("zero image dimension"));
    }
    Ok((width, height))
}

fn planes_from(
    width: usize,
    height: usize,
    channels: usize,
    values: &[f64],
    bottom_up: bool,
) -> Result<Planes> {
    let plane = |ch: usize| {
        RealImage::from_fn(width, height, |col, row| {
            let file_row = if bottom_up { height - 1 - row } else { row };
            values[(file_row * width + col) * channels + ch]
        })
    };
    Ok(match channels {
        1 => Planes::Grey(plane(0)),
        _ => Planes::Rgb([plane(0), plane(1), plane(2)]),
    })
}

fn read_pfm_body(r: &mut impl BufRead, channels: usize) -> Result<Planes> {
    let (width, height) = dimensions(r)?;
    let scale: f64 = header_number(r, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let count = width * height * channels;
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)
        .map_err(|_| format_err("truncated PFM data"))?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| {
            let bytes = [c[0], c[1], c[2], c[3]];
            f64::from(if little {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            })
        })
        .collect();
    planes_from(width, height, channels, &values, true)
}

fn read_pnm_body(r: &mut impl BufRead, channels: usize) -> Result<Planes> {
    let (width, height) = dimensions(r)?;
    let maxval: u32 = header_number(r, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("maxval {maxval} out of range")));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let count = width * height * channels;
    let mut raw = vec![0u8; count * bytes_per];
    r.read_exact(&mut raw)
        .map_err(|_| format_err("truncated PNM data"))?;
    let scale = 1.0 / f64::from(maxval);
    let values: Vec<f64> = if bytes_per == 1 {
        raw.iter().map(|&b| f64::from(b) * scale).collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) * scale)
            .collect()
    };
    planes_from(width, height, channels, &values, false)
}

/// Decodes PFM (`Pf`, `PF`) or binary PGM/PPM (`P5`, `P6`) by magic.
pub fn read_planes_from(r: impl Read) -> Result<Planes> {
    let mut r = BufReader::new(r);
    let magic = header_token(&mut r)?;
    match magic.as_str() {
        "Pf" => read_pfm_body(&mut r, 1),
        "PF" => read_pfm_body(&mut r, 3),
        "P5" => read_pnm_body(&mut r, 1),
        "P6" => read_pnm_body(&mut r, 3),
        other => Err(format_err(format!("unsupported image magic '{other}'"))),
    }
}

pub fn read_planes(path: impl AsRef<Path>) -> Result<Planes> {
    read_planes_from(File::open(path)?)
}

/// 8-bit binary PGM with values clamped to `[0, 1]`.
pub fn write_pgm(path: impl AsRef<Path>, image: &RealImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", image.width(), image.height())?;
    let bytes: Vec<u8> = image
        .samples()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelMatrix {
    pub width: usize,
    pub height: usize,
    /// Top row first.
    pub rows: Vec<Vec<f64>>,
}

/// Kernel as a JSON-ready matrix; limited to small kernels.
pub fn kernel_matrix(kernel: &RealImage) -> Result<KernelMatrix> {
    if kernel.width() > MAX_JSON_KERNEL_SIZE || kernel.height() > MAX_JSON_KERNEL_SIZE {
        return Err(Error::InvalidParameter(format!(
            "JSON kernel export is limited to {MAX_JSON_KERNEL_SIZE}x{MAX_JSON_KERNEL_SIZE}, got {}x{}",
            kernel.width(),
            kernel.height()
        )));
    }
    Ok(KernelMatrix {
        width: kernel.width(),
        height: kernel.height(),
        rows: (0..kernel.height())
            .map(|r| (0..kernel.width()).map(|c| kernel.get(c, r)).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn ramp(w: usize, h: usize) -> RealImage {
        RealImage::from_fn(w, h, |c, r| (c as f64) * 0.25 - (r as f64) * 1.5)
    }

    #[test]
    fn pfm_grey_round_trip_is_exact_for_f32_values() {
        let img = ramp(5, 3);
        let mut buf = Vec::new();
        write_pfm_to(&mut buf, &[&img]).unwrap();
        assert!(buf.starts_with(b"Pf\n5 3\n-1.0\n"));
        assert_eq!(buf.len(), 12 + 5 * 3 * 4);
        // first stored row is the bottom image row
        assert_eq!(&buf[12..16], &(img.get(0, 2) as f32).to_le_bytes());
        assert_eq!(
            read_planes_from(Cursor::new(buf)).unwrap(),
            Planes::Grey(img)
        );
    }

    #[test]
    fn pfm_rgb_round_trip_and_big_endian() {
        let planes = [ramp(4, 2), ramp(4, 2).scaled(2.0), ramp(4, 2).scaled(-1.0)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pfm");
        write_pfm_rgb(&path, [&planes[0], &planes[1], &planes[2]]).unwrap();
        assert_eq!(read_planes(&path).unwrap(), Planes::Rgb(planes.clone()));

        let mut be = b"Pf\n2 1\n1.0\n".to_vec();
        be.extend_from_slice(&0.5f32.to_be_bytes());
        be.extend_from_slice(&(-2.0f32).to_be_bytes());
        let Planes::Grey(g) = read_planes_from(Cursor::new(be)).unwrap() else {
            panic!()
        };
        assert_eq!((g.get(0, 0), g.get(1, 0)), (0.5, -2.0));
    }

    #[test]
    fn pnm_decoding() {
        let mut pgm = b"P5\n# comment\n3 2\n255\n".to_vec();
        pgm.extend_from_slice(&[0, 51, 255, 102, 153, 204]);
        let Planes::Grey(g) = read_planes_from(Cursor::new(pgm)).unwrap() else {
            panic!()
        };
        assert_eq!(g.get(1, 0), 0.2);
        assert_eq!(g.get(2, 0), 1.0);
        assert_eq!(g.get(0, 1), 0.4);

        let mut ppm = b"P6 1 1 255\n".to_vec();
        ppm.extend_from_slice(&[255, 0, 51]);
        let Planes::Rgb([r, gr, b]) = read_planes_from(Cursor::new(ppm)).unwrap() else {
            panic!()
        };
        assert_eq!((r.get(0, 0), gr.get(0, 0), b.get(0, 0)), (1.0, 0.0, 0.2));

        let mut wide = b"P5 1 1 1000\n".to_vec();
        wide.extend_from_slice(&500u16.to_be_bytes());
        let Planes::Grey(w) = read_planes_from(Cursor::new(wide)).unwrap() else {
            panic!()
        };
        assert_eq!(w.get(0, 0), 0.5);
    }

    #[test]
    fn malformed_inputs() {
        for bad in [
            &b"P3 1 1 255\n0"[..],
            b"Pf\n2 2\n-1.0\n\0\0",
            b"P5 0 3 255\n",
            b"P5 2 2 70000\n",
            b"",
        ] {
            assert!(
                matches!(
                    read_planes_from(Cursor::new(bad.to_vec())),
                    Err(Error::Format(_))
                ),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn pgm_writer_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        let img = RealImage::from_fn(4, 4, |c, r| (c + 4 * r) as f64 / 15.0);
        write_pgm(&path, &img).unwrap();
        let back = read_planes(&path).unwrap().into_grey();
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn kernel_matrix_limits() {
        let k = kernel_matrix(&ramp(3, 2)).unwrap();
        assert_eq!(k.rows, vec![vec![0.0, 0.25, 0.5], vec![-1.5, -1.25, -1.0]]);
        assert!(kernel_matrix(&RealImage::zeros(33, 33)).is_ok());
        assert!(kernel_matrix(&RealImage::zeros(34, 3)).is_err());
    }

    #[test]
    fn grey_conversion_averages() {
        let planes = Planes::Rgb([
            RealImage::constant(2, 2, 0.3),
            RealImage::constant(2, 2, 0.6),
            RealImage::zeros(2, 2),
        ]);
        assert!((planes.into_grey().get(1, 1) - 0.3).abs() < 1e-15);
    }
}
