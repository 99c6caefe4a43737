//! Frozen, seeded convolutional feature extractor.

use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, seeded};
use crate::ops;
use crate::tensor::{FeatureMap, Tensor};

/// Maps emitted per pyramid level, fine to coarse.
pub const MAPS_PER_LEVEL: [usize; 3] = [3, 4, 3];
/// Channel widths per level.
pub const LEVEL_WIDTHS: [usize; 3] = [16, 32, 32];
const STEM_WIDTH: usize = 16;

struct Conv {
    w: Tensor<f32>,
    b: Tensor<f32>,
    stride: usize,
}

impl Conv {
    fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        ops::conv2d(x, &self.w, Some(&self.b), self.stride, 1)
    }
}

/// A 3x3 conv stem at stride 2, then three stages at strides 4, 8 and 16.
/// Each stage opens with a stride-2 conv; every conv output (before its ReLU)
/// is one emitted feature map. Never trained.
pub struct ToyBackbone {
    seed: u64,
    stem: Conv,
    stages: [Vec<Conv>; 3],
}

impl ToyBackbone {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut conv = |cin: usize, cout: usize, stride: usize| Conv {
            w: fan_in_uniform(&[cout, cin, 3, 3], cin * 9, &mut rng),
            b: fan_in_uniform(&[cout], cin * 9, &mut rng),
            stride,
        };
        let stem = conv(3, STEM_WIDTH, 2);
        let mut cin = STEM_WIDTH;
        let stages = [0, 1, 2].map(|l| {
            let cout = LEVEL_WIDTHS[l];
            let layers = (0..MAPS_PER_LEVEL[l])
                .map(|i| conv(if i == 0 { cin } else { cout }, cout, if i == 0 { 2 } else { 1 }))
                .collect();
            cin = cout;
            layers
        });
        Self { seed, stem, stages }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `(map, level)` pairs in emission order.
    pub fn features(&self, image: &Tensor<f32>) -> Result<Vec<(FeatureMap<f32>, usize)>> {
        let (c, h, w) = image.chw()?;
        if c != 3 || h < 16 || w < 16 {
            return Err(Error::shape(format!(
                "backbone needs a [3, H, W] image with H, W >= 16, got {:?}",
                image.dims()
            )));
        }
        let mut x = ops::relu(&self.stem.apply(image)?);
        let mut out = Vec::new();
        for (level, stage) in self.stages.iter().enumerate() {
            for conv in stage {
                let y = conv.apply(&x)?;
                x = ops::relu(&y);
                out.push((y, level));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    #[test]
    fn level_resolutions_and_counts() {
        let bb = ToyBackbone::new(1);
        let feats = bb.features(&rand_tensor(&[3, 32, 32], 2)).unwrap();
        assert_eq!(feats.len(), 10);
        let dims: Vec<(Vec<usize>, usize)> = feats.iter().map(|(f, l)| (f.dims().to_vec(), *l)).collect();
        assert_eq!(dims[0], (vec![16, 8, 8], 0));
        assert_eq!(dims[3], (vec![32, 4, 4], 1));
        assert_eq!(dims[9], (vec![32, 2, 2], 2));
        let feats24 = bb.features(&rand_tensor(&[3, 24, 24], 2)).unwrap();
        assert_eq!(feats24[0].0.dims(), &[16, 6, 6]);
        assert_eq!(feats24[9].0.dims(), &[32, 2, 2]);
    }

    #[test]
    fn same_seed_same_features() {
        let img = rand_tensor(&[3, 16, 16], 3);
        let a = ToyBackbone::new(5).features(&img).unwrap();
        let b = ToyBackbone::new(5).features(&img).unwrap();
        assert_eq!(a, b);
    }
}
