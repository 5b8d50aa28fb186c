//! Colour-opponent channels and their receptive-field responses.
//!
//! Input RGB is taken as linear-light; no gamma handling is done here.

use crate::derivatives::{DirectionalOperator, NormalizationSpec};
use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::smoothing::{derivative_response, normalization_factor, SmoothingPath};

/// Intensity `f`, red/green `u` and yellow/blue `v` planes of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentImage {
    pub f: RealImage,
    pub u: RealImage,
    pub v: RealImage,
}

/// Rows of the RGB-to-opponent matrix, in `(f, u, v)` order.
pub const OPPONENT_MATRIX: [[f64; 3]; 3] = [
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [0.5, -0.5, 0.0],
    [0.5, 0.5, -1.0],
];

pub fn rgb_to_opponent(r: &RealImage, g: &RealImage, b: &RealImage) -> Result<OpponentImage> {
    r.check_shape(g)?;
    r.check_shape(b)?;
    let plane = |row: [f64; 3]| {
        let samples = r
            .samples()
            .iter()
            .zip(g.samples())
            .zip(b.samples())
            .map(|((&rv, &gv), &bv)| row[0] * rv + row[1] * gv + row[2] * bv)
            .collect();
        RealImage::new(r.width(), r.height(), r.spacing_h(), samples)
    };
    Ok(OpponentImage {
        f: plane(OPPONENT_MATRIX[0])?,
        u: plane(OPPONENT_MATRIX[1])?,
        v: plane(OPPONENT_MATRIX[2])?,
    })
}

/// Responses of the two chromatic planes; `factor` is the normalization
/// applied to both.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentResponse {
    pub u: RealImage,
    pub v: RealImage,
    pub factor: f64,
}

/// Smooths `u` and `v` independently along `path`, then applies `op`.
pub fn opponent_receptive_field(
    opp: &OpponentImage,
    path: &SmoothingPath,
    op: &DirectionalOperator,
    norm: Option<&NormalizationSpec>,
) -> Result<OpponentResponse> {
    if !opp.u.same_shape(&opp.v) || !opp.u.same_shape(&opp.f) {
        return Err(Error::DimensionMismatch(
            "opponent planes differ in shape".into(),
        ));
    }
    let factor = normalization_factor(path, op, norm)?;
    let (u, v) = rayon::join(|| path.smooth(&opp.u), || path.smooth(&opp.v));
    Ok(OpponentResponse {
        u: derivative_response(&u?, op, factor),
        v: derivative_response(&v?, op, factor),
        factor,
    })
}
