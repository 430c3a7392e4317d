use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;

/// Deterministic parameter source; each component draws from its own stream.
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub(crate) fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub(crate) fn uniform(&mut self, shape: &[usize], bound: f32) -> Tensor {
        Tensor::from_fn(shape, |_| self.rng.gen_range(-bound..=bound))
    }

    /// Variance-preserving uniform init for a layer with `fan_in` inputs.
    pub(crate) fn fan_in(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        self.uniform(shape, (3.0 / fan_in as f32).sqrt())
    }

    pub(crate) fn unit(&mut self) -> f32 {
        self.rng.gen_range(0.0..1.0)
    }
}

pub(crate) mod stream {
    pub const IMAGE_ENCODER: u64 = 1;
    pub const MASK_ENCODER: u64 = 2;
    pub const KEY_PROJECTION: u64 = 3;
    pub const READOUT: u64 = 4;
    pub const QUERIES: u64 = 5;
    pub const TRANSFORMER: u64 = 6;
    pub const DECODER: u64 = 7;
    pub const POOLING_WINDOWS: u64 = 8;
}
