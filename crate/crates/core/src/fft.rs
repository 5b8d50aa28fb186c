//! Row/column 2-D DFT on top of `rustfft`, any size.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

/// In-place 2-D DFT of a row-major `width` x `height` buffer. The inverse
/// transform is normalized by `1 / (width * height)`.
pub(crate) fn fft2d(data: &mut [Complex64], width: usize, height: usize, dir: Direction) {
    debug_assert_eq!(data.len(), width * height);
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = match dir {
        Direction::Forward => (
            planner.plan_fft_forward(width),
            planner.plan_fft_forward(height),
        ),
        Direction::Inverse => (
            planner.plan_fft_inverse(width),
            planner.plan_fft_inverse(height),
        ),
    };

    data.par_chunks_mut(width)
        .for_each(|row| row_fft.process(row));

    let mut transposed = transpose(data, width, height);
    transposed
        .par_chunks_mut(height)
        .for_each(|col| col_fft.process(col));
    let back = transpose(&transposed, height, width);
    data.copy_from_slice(&back);

    if dir == Direction::Inverse {
        let norm = 1.0 / (width * height) as f64;
        data.iter_mut().for_each(|v| *v *= norm);
    }
}

fn transpose(data: &[Complex64], width: usize, height: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for row in 0..height {
        for col in 0..width {
            out[col * height + row] = data[row * width + col];
        }
    }
    out
}

pub(crate) fn to_complex(samples: &[f64]) -> Vec<Complex64> {
    samples.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}
