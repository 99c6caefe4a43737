//! Episode execution, loss, metrics, K-shot fusion, training and evaluation.

pub mod backbone;
pub mod episode;
pub mod eval;
pub mod kshot;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod train;

pub use backbone::ToyBackbone;
pub use episode::{sample_episodes, Episode, KShotConfig, PoolItem, Shot};
pub use eval::{evaluate, EvalReport, Segmenter};
pub use kshot::kshot_fuse;
pub use loss::ce_loss;
pub use metrics::{fb_iou, miou, ClassCounts, MetricsAccumulator};
pub use model::{forward_episode, Ablation, EpisodeFeatures, FecaModel, ModelConfig, ModelLayout};
pub use train::{train, train_step, Adam};
