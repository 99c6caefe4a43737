//! Pixel-count segmentation metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
}

impl ClassCounts {
    pub fn union(&self) -> u64 {
        self.tp + self.fn_ + self.fp
    }

    pub fn iou(&self) -> Option<f64> {
        (self.union() > 0).then(|| self.tp as f64 / self.union() as f64)
    }
}

/// Running counters for mIoU and FB-IoU.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub per_class: BTreeMap<u32, ClassCounts>,
    pub fg_inter: u64,
    pub fg_union: u64,
    pub bg_inter: u64,
    pub bg_union: u64,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, class_id: u32, pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape(format!(
                "prediction {:?} and ground truth {:?} differ",
                pred.dims(),
                gt.dims()
            )));
        }
        let counts = self.per_class.entry(class_id).or_default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (1, 1) => {
                    counts.tp += 1;
                    self.fg_inter += 1;
                    self.fg_union += 1;
                }
                (1, 0) => {
                    counts.fp += 1;
                    self.fg_union += 1;
                    self.bg_union += 1;
                }
                (0, 1) => {
                    counts.fn_ += 1;
                    self.fg_union += 1;
                    self.bg_union += 1;
                }
                _ => {
                    self.bg_inter += 1;
                    self.bg_union += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for (c, k) in &other.per_class {
            let e = self.per_class.entry(*c).or_default();
            e.tp += k.tp;
            e.fn_ += k.fn_;
            e.fp += k.fp;
        }
        self.fg_inter += other.fg_inter;
        self.fg_union += other.fg_union;
        self.bg_inter += other.bg_inter;
        self.bg_union += other.bg_union;
    }

    /// IoU of every class with a nonzero union.
    pub fn class_iou(&self) -> BTreeMap<u32, f64> {
        self.per_class
            .iter()
            .filter_map(|(c, k)| k.iou().map(|v| (*c, v)))
            .collect()
    }

    /// Mean of `TP / (TP + FN + FP)` over classes with a nonzero union.
    pub fn miou(&self) -> Result<f64> {
        let ious = self.class_iou();
        if ious.is_empty() {
            return Err(Error::UndefinedMetric("no class has a nonzero union".into()));
        }
        Ok(ious.values().sum::<f64>() / ious.len() as f64)
    }

    /// Mean of foreground and background IoU, ignoring class identity.
    pub fn fb_iou(&self) -> Result<f64> {
        let terms: Vec<f64> = [(self.fg_inter, self.fg_union), (self.bg_inter, self.bg_union)]
            .into_iter()
            .filter(|&(_, u)| u > 0)
            .map(|(i, u)| i as f64 / u as f64)
            .collect();
        if terms.is_empty() {
            return Err(Error::UndefinedMetric("no pixels accumulated".into()));
        }
        Ok(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

pub fn miou(acc: &MetricsAccumulator) -> Result<f64> {
    acc.miou()
}

pub fn fb_iou(acc: &MetricsAccumulator) -> Result<f64> {
    acc.fb_iou()
}
