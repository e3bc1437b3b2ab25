use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// ChaCha8 seeded from a 64-bit seed; every stochastic step in the crate
/// draws from one of these.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Tensor {
    /// Uniform on `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`,
    /// taking `fan_in = cols` and `fan_out = rows`.
    pub fn glorot(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor {
        let b = glorot_bound(cols, rows);
        let data = (0..rows * cols).map(|_| rng.gen_range(-b..=b)).collect();
        Tensor::new(rows, cols, data).expect("shape matches data")
    }
}
