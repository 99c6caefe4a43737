//! Few-shot segmentation with feature enhancement, correlation
//! reconstruction and center-pivot 4D encoding, on a small CPU tensor core.

pub mod autograd;
pub mod correlation;
pub mod crm;
pub mod decoder;
pub mod encoder4d;
pub mod error;
pub mod fem;
pub mod gradcheck;
pub mod init;
pub mod io;
pub mod mask;
pub mod ops;
pub mod oracles;
pub mod pipeline;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use correlation::{Correlation4D, CorrelationPyramid};
pub use decoder::{MemoryBank, PredictionMap};
pub use encoder4d::{center_pivot_conv4d, full_conv4d, CenterPivotKernel, Conv4dSpec};
pub use error::{Error, Result};
pub use fem::EnhancedFeaturePair;
pub use mask::BinaryMask;
pub use pipeline::{
    evaluate, kshot_fuse, Ablation, Adam, Episode, EvalReport, FecaModel, KShotConfig, MetricsAccumulator, ModelConfig,
    Shot,
};
pub use tensor::{FeatureMap, ParamId, ParamSet, Real, Tensor};
