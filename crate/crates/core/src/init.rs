//! Seeded parameter initialisation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Real, Tensor};

/// Seeded generator used for every initialisation in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform<T: Real>(dims: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(dims, bound, rng)
}

pub fn uniform<T: Real>(dims: &[usize], bound: f64, rng: &mut SeededRng) -> Tensor<T> {
    Tensor::from_fn(dims, |_| T::from_f64(rng.gen_range(-bound..=bound) as f32 as f64))
}
