//! K-shot evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::MemoryBank;
use crate::error::{Error, Result};
use crate::pipeline::episode::{Episode, KShotConfig};
use crate::pipeline::kshot::kshot_fuse;
use crate::pipeline::metrics::MetricsAccumulator;
use crate::pipeline::model::FecaModel;
use crate::tensor::Tensor;

/// Anything that can produce a foreground-probability map for a query from
/// one of the episode's supports.
pub trait Segmenter {
    /// `[H, W]` foreground probabilities.
    fn foreground(&mut self, ep: &Episode, support: usize, bank: &mut MemoryBank) -> Result<Tensor<f32>>;
}

impl Segmenter for FecaModel {
    fn foreground(&mut self, ep: &Episode, support: usize, bank: &mut MemoryBank) -> Result<Tensor<f32>> {
        Ok(self.forward_support(ep, support, bank)?.foreground())
    }
}

impl Segmenter for &FecaModel {
    fn foreground(&mut self, ep: &Episode, support: usize, bank: &mut MemoryBank) -> Result<Tensor<f32>> {
        Ok(self.forward_support(ep, support, bank)?.foreground())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    pub fb_iou: f64,
    pub per_class_iou: BTreeMap<u32, f64>,
}

/// Runs the first `cfg.k` supports of every episode in order, fuses the
/// passes and scores the fused mask. The bank starts empty.
pub fn evaluate<S: Segmenter>(seg: &mut S, episodes: &[Episode], cfg: &KShotConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut bank = MemoryBank::new();
    let mut acc = MetricsAccumulator::new();
    for ep in episodes {
        if ep.shots() < cfg.k {
            return Err(Error::validation(format!(
                "episode {} has {} supports, {} requested",
                ep.query_id,
                ep.shots(),
                cfg.k
            )));
        }
        let maps = (0..cfg.k)
            .map(|s| seg.foreground(ep, s, &mut bank))
            .collect::<Result<Vec<_>>>()?;
        let fused = kshot_fuse(&maps, cfg)?;
        acc.add(ep.class_id, &fused, &ep.query.mask)?;
    }
    Ok(EvalReport {
        miou: acc.miou()?,
        fb_iou: acc.fb_iou()?,
        per_class_iou: acc.class_iou(),
    })
}
