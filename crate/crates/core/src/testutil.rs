//! Seeded fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Real, Tensor};

pub fn rand_tensor<T: Real>(dims: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| T::from_f64(rng.gen_range(-1.0..1.0)))
}

pub use crate::oracles::rel_diff as rel_err;
