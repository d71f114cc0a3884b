#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spdinv::{LatentState, LinearModel, NoiseSchedule};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn latent(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> LatentState {
    LatentState::new((0..dim).map(|_| scale * normal(rng)).collect()).unwrap()
}

/// Haar-ish orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| normal(rng));
    g.qr().q()
}

/// Largest |c2| over the steps of a schedule.
pub fn max_c2(schedule: &NoiseSchedule) -> f64 {
    (1..=schedule.steps())
        .map(|t| schedule.coefficients(t).unwrap().c2.abs())
        .fold(0.0, f64::max)
}

/// `A = s Q`: every iteration of `z <- c2 A z + const` shrinks errors by exactly `|c2| s`.
pub fn scaled_orthogonal(rng: &mut ChaCha8Rng, d: usize, s: f64) -> LinearModel {
    let offset = (0..d).map(|_| 0.3 * normal(rng)).collect();
    LinearModel::new(random_orthogonal(rng, d) * s, offset).unwrap()
}

/// Symmetric `A = Q diag(s, l_2, ..) Q^T` with `|l_i| <= s / 2` for `i >= 2`.
pub fn symmetric_with_gap(rng: &mut ChaCha8Rng, d: usize, s: f64) -> LinearModel {
    let q = random_orthogonal(rng, d);
    let mut diag = DMatrix::zeros(d, d);
    diag[(0, 0)] = s;
    for i in 1..d {
        diag[(i, i)] = s * rng.random_range(-0.5..0.5);
    }
    let offset = (0..d).map(|_| 0.3 * normal(rng)).collect();
    LinearModel::new(&q * diag * q.transpose(), offset).unwrap()
}

/// Central differences of `f` at `z` with step `h`.
pub fn fd_gradient(f: impl Fn(&LatentState) -> f64, z: &LatentState, h: f64) -> Vec<f64> {
    (0..z.dim())
        .map(|i| {
            let mut plus = z.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = f(&LatentState::new(plus).unwrap());
            let fm = f(&LatentState::new(minus).unwrap());
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(exact: &[f64], approx: &[f64]) -> f64 {
    let diff: f64 = exact.iter().zip(approx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale: f64 = approx.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}
