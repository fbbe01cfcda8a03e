//! Seeded parameter initializers.
//!
//! All randomness in the crate flows through [`seeded_rng`], a ChaCha8
//! stream cipher generator. ChaCha is counter-based and its output is
//! specified bit for bit, so a `(seed, stream)` pair yields the same values
//! on every platform.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;

pub type SeededRng = ChaCha8Rng;

/// Independent reproducible generator for a `(seed, stream)` pair.
pub fn seeded_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`, with `fan_in = cols` and
/// `fan_out = rows`.
pub fn init_xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Zero-mean normal with std `sqrt(2 / fan_in)`, `fan_in = cols`.
pub fn init_he(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let std = (2.0 / cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Orthogonal (square) or semi-orthogonal (rectangular) matrix from the QR
/// factorization of a Gaussian matrix. Columns are orthonormal when
/// `rows >= cols`, rows otherwise.
pub fn init_orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the distribution uniform over the orthogonal group
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out.set(i, j, v);
        }
    }
    out
}
