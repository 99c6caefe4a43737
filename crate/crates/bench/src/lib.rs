//! Seeded inputs for the kernel benchmarks.

use fecanet_core::encoder4d::{CenterPivotKernel, Conv4dSpec, KERNEL};
use fecanet_core::init::{seeded, uniform};
use fecanet_core::io::fixtures::synthetic_episodes;
use fecanet_core::{Adam, Correlation4D, Episode, FecaModel, MemoryBank, ModelConfig, Tensor};

/// A `[c, h, h, h, h]` correlation and a `cout`-output kernel with support stride `stride_s`.
pub fn conv4d_case(c: usize, h: usize, cout: usize, stride_s: usize, seed: u64) -> (Correlation4D<f32>, CenterPivotKernel) {
    let mut rng = seeded(seed);
    let x = Correlation4D::new(uniform(&[c, h, h, h, h], 1.0, &mut rng)).expect("valid dims");
    let k = CenterPivotKernel {
        wq: uniform(&[cout, c, KERNEL, KERNEL], 1.0, &mut rng),
        ws: uniform(&[cout, c, KERNEL, KERNEL], 1.0, &mut rng),
        spec: Conv4dSpec::same(KERNEL, stride_s),
    };
    (x, k)
}

/// Query and support feature maps `[c, h, w]`.
pub fn feature_pair(c: usize, h: usize, w: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = seeded(seed);
    (uniform(&[c, h, w], 1.0, &mut rng), uniform(&[c, h, w], 1.0, &mut rng))
}

/// Everything one training step needs.
pub struct TrainCase {
    pub model: FecaModel,
    pub adam: Adam,
    pub bank: MemoryBank,
    pub batch: Vec<Episode>,
}

pub fn train_case(size: usize, batch: usize, seed: u64) -> TrainCase {
    let model = FecaModel::new(ModelConfig::default(), seed).expect("default config is valid");
    let adam = Adam::new(&model.params, Adam::DEFAULT_LR);
    TrainCase {
        model,
        adam,
        bank: MemoryBank::new(),
        batch: synthetic_episodes(batch, size, 1, seed),
    }
}
