use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Glorot/Xavier uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Seeded parameter initializer. Each tensor draws from its own ChaCha stream
/// (seed, stream id), so adding a tensor never shifts the values of another.
#[derive(Debug, Clone)]
pub struct ParamRng {
    seed: u64,
    next_stream: u64,
}

impl ParamRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            next_stream: 0,
        }
    }

    pub fn stream(&mut self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.next_stream);
        self.next_stream += 1;
        rng
    }

    pub fn uniform(&mut self, shape: &[usize], limit: f64) -> Tensor {
        let mut rng = self.stream();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.random_range(-limit..=limit);
        }
        t
    }
}
