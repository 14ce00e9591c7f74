//! Shared fixtures for the benchmarks in `benches/`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavepinn_core::pinn_trainer::{DataPoint, InputScaling, ResidualPoint};

/// `n` points uniformly spread over `[-1, 1]^3`.
pub fn inputs(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0))
}

/// Synthetic data and collocation sets in normalized coordinates.
pub fn point_sets(n: usize, seed: u64) -> (Vec<DataPoint>, Vec<ResidualPoint>, InputScaling) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n)
        .map(|_| {
            let (t, x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            DataPoint { t, x, y, u: (3.0 * x - 2.0 * t).sin() }
        })
        .collect();
    let residual = (0..n)
        .map(|_| ResidualPoint {
            t: rng.random_range(-1.0..1.0),
            x: rng.random_range(-1.0..1.0),
            y: rng.random_range(-1.0..1.0),
        })
        .collect();
    (data, residual, InputScaling::identity())
}

/// Rank-`r` matrix plus small noise, `n × d`.
pub fn low_rank(n: usize, d: usize, r: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Array2::from_shape_fn((n, r), |_| rng.random_range(-1.0..1.0));
    let b = Array2::from_shape_fn((r, d), |_| rng.random_range(-1.0..1.0));
    a.dot(&b) + Array2::from_shape_fn((n, d), |_| 0.01 * rng.random_range(-1.0..1.0))
}
