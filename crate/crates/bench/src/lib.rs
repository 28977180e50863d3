//! Seeded inputs shared by the benchmarks.

use imtinet_core::recurrent::{CellParams, ForgetMode, SLstmParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// sLSTM cell with weights drawn from `U(-0.5, 0.5)`.
pub fn slstm_params(input: usize, hidden: usize, seed: u64) -> SLstmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell = CellParams::zeros(input, hidden);
    for g in 0..4 {
        cell.w[g].mapv_inplace(|_| rng.random_range(-0.5..0.5));
        cell.r[g].mapv_inplace(|_| rng.random_range(-0.5..0.5));
        cell.b[g].mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    SLstmParams { cell, forget_mode: ForgetMode::Exponential }
}
