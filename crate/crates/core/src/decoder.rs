//! Residual 2D decoder and the per-query memory bank that feeds it a prior.

use std::collections::BTreeMap;

use crate::autograd::{Bindings, Graph, Var};
use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, SeededRng};
use crate::mask::BinaryMask;
use crate::ops;
use crate::tensor::{ParamId, ParamSet, Real, Tensor};

/// Last foreground-probability map predicted for each query, at encoder
/// resolution. Entries never seen read as zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryBank {
    entries: BTreeMap<String, Tensor<f32>>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stored `[1, h, w]` map for `qid`, or zeros of that shape.
    pub fn fetch(&self, qid: &str, h: usize, w: usize) -> Tensor<f32> {
        self.entries
            .get(qid)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros([1, h, w]))
    }

    pub fn get(&self, qid: &str) -> Option<&Tensor<f32>> {
        self.entries.get(qid)
    }

    /// Replaces any previous entry.
    pub fn insert(&mut self, qid: impl Into<String>, map: Tensor<f32>) {
        self.entries.insert(qid.into(), map);
    }

    pub fn update(&mut self, qid: &str, pred: &PredictionMap) {
        self.insert(qid, pred.coarse_fg.clone());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

pub fn bank_fetch(bank: &MemoryBank, qid: &str, h: usize, w: usize) -> Tensor<f32> {
    bank.fetch(qid, h, w)
}

pub fn bank_update(bank: &mut MemoryBank, qid: &str, pred: &PredictionMap) {
    bank.update(qid, pred);
}

/// Two-class prediction at query-image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap<T = f32> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    /// `[1, h, w]` foreground probability at encoder resolution.
    pub coarse_fg: Tensor<f32>,
}

impl<T: Real> PredictionMap<T> {
    pub fn dims(&self) -> (usize, usize) {
        let d = self.probs.dims();
        (d[1], d[2])
    }

    /// `[h, w]` foreground probabilities.
    pub fn foreground(&self) -> Tensor<T> {
        let (h, w) = self.dims();
        Tensor::new([h, w], self.probs.data()[h * w..].to_vec()).expect("two-channel map")
    }

    /// Argmax over the two channels; ties go to background.
    pub fn hard_mask(&self) -> BinaryMask {
        let (h, w) = self.dims();
        let p = self.probs.data();
        BinaryMask::from_fn(h, w, |y, x| p[h * w + y * w + x] > p[y * w + x])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    pub channels: usize,
    pub res3: ParamId,
    pub res5: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl DecoderParams {
    /// `ctx_channels` excludes the prior channel, which is appended here.
    pub fn new<T: Real>(ps: &mut ParamSet<T>, prefix: &str, ctx_channels: usize, rng: &mut SeededRng) -> Self {
        let c = ctx_channels + 1;
        Self {
            channels: c,
            res3: ps.add(format!("{prefix}.res3"), fan_in_uniform(&[c, c, 3, 3], c * 9, rng)),
            res5: ps.add(format!("{prefix}.res5"), fan_in_uniform(&[c, c, 5, 5], c * 25, rng)),
            head_w: ps.add(format!("{prefix}.head_w"), fan_in_uniform(&[2, c, 3, 3], c * 9, rng)),
            head_b: ps.add(format!("{prefix}.head_b"), Tensor::zeros([2])),
        }
    }
}

/// Graph outputs of [`residual_decode_graph`].
pub struct DecodeVars {
    /// `[2, h, w]` logits at encoder resolution.
    pub coarse_logits: Var,
    /// `[2, H, W]` logits at image resolution.
    pub logits: Var,
    pub probs: Var,
}

pub fn residual_decode_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    p: &DecoderParams,
    ctx: Var,
    prior: Var,
    out_hw: (usize, usize),
) -> Result<DecodeVars> {
    let (_, h, w) = g.value(ctx).chw()?;
    let (pc, ph, pw) = g.value(prior).chw()?;
    if pc != 1 {
        return Err(Error::shape(format!("prior must have one channel, got {pc}")));
    }
    let prior = if (ph, pw) == (h, w) { prior } else { g.upsample(prior, h, w)? };
    let x = g.concat(&[ctx, prior])?;
    if g.dims(x)[0] != p.channels {
        return Err(Error::shape(format!(
            "decoder expects {} channels, got {}",
            p.channels,
            g.dims(x)[0]
        )));
    }
    let mut x = x;
    for (wid, pad) in [(p.res3, 1), (p.res5, 2)] {
        let y = g.conv2d(x, b.var(wid), None, 1, pad)?;
        let y = g.relu(y);
        x = g.add(x, y)?;
    }
    let coarse_logits = g.conv2d(x, b.var(p.head_w), Some(b.var(p.head_b)), 1, 1)?;
    let logits = g.upsample(coarse_logits, out_hw.0, out_hw.1)?;
    let probs = g.softmax(logits, 0)?;
    Ok(DecodeVars {
        coarse_logits,
        logits,
        probs,
    })
}

/// Assembles a [`PredictionMap`] from decoded graph values.
pub fn prediction_from<T: Real>(g: &Graph<T>, d: &DecodeVars) -> Result<PredictionMap<T>> {
    let coarse = ops::softmax_axis(g.value(d.coarse_logits), 0)?;
    let (_, h, w) = coarse.chw()?;
    let fg: Vec<f32> = coarse.data()[h * w..].iter().map(|v| v.as_f64() as f32).collect();
    Ok(PredictionMap {
        logits: g.value(d.logits).clone(),
        probs: g.value(d.probs).clone(),
        coarse_fg: Tensor::new([1, h, w], fg)?,
    })
}

pub fn residual_decode<T: Real>(
    ctx: &Tensor<T>,
    prior: &Tensor<T>,
    params: &DecoderParams,
    values: &ParamSet<T>,
    out_hw: (usize, usize),
) -> Result<PredictionMap<T>> {
    let mut g = Graph::new();
    let b = g.bind(values);
    let (c, p) = (g.constant(ctx.clone()), g.constant(prior.clone()));
    let d = residual_decode_graph(&mut g, &b, params, c, p, out_hw)?;
    prediction_from(&g, &d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded;
    use crate::testutil::rand_tensor;

    fn setup(ctx_c: usize) -> (ParamSet<f32>, DecoderParams) {
        let mut ps = ParamSet::new();
        let p = DecoderParams::new(&mut ps, "dec", ctx_c, &mut seeded(3));
        (ps, p)
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (ps, p) = setup(4);
        let ctx = rand_tensor(&[4, 6, 6], 1);
        let prior = rand_tensor::<f32>(&[1, 6, 6], 2).map(f32::abs);
        let pred = residual_decode(&ctx, &prior, &p, &ps, (24, 24)).unwrap();
        assert_eq!(pred.probs.dims(), &[2, 24, 24]);
        assert_eq!(pred.coarse_fg.dims(), &[1, 6, 6]);
        let n = 24 * 24;
        for i in 0..n {
            let s = pred.probs.data()[i] as f64 + pred.probs.data()[n + i] as f64;
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_residual_weights_pass_input_to_head() {
        let (mut ps, p) = setup(3);
        ps.get_mut(p.res3).data_mut().fill(0.0);
        ps.get_mut(p.res5).data_mut().fill(0.0);
        let ctx = rand_tensor(&[3, 4, 4], 5);
        let prior = Tensor::zeros([1, 4, 4]);
        let pred = residual_decode(&ctx, &prior, &p, &ps, (4, 4)).unwrap();
        let x = ops::concat0(&[&ctx, &prior]).unwrap();
        let head = ops::conv2d(&x, ps.get(p.head_w), Some(ps.get(p.head_b)), 1, 1).unwrap();
        assert!(pred.logits.max_abs_diff(&head) < 1e-6);
    }

    #[test]
    fn empty_bank_equals_zero_prior() {
        let (ps, p) = setup(2);
        let ctx = rand_tensor(&[2, 4, 4], 6);
        let bank = MemoryBank::new();
        let a = residual_decode(&ctx, &bank_fetch(&bank, "q", 4, 4), &p, &ps, (8, 8)).unwrap();
        let b = residual_decode(&ctx, &Tensor::zeros([1, 4, 4]), &p, &ps, (8, 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bank_store_overwrite_and_isolation() {
        let mut bank = MemoryBank::new();
        assert!(bank.fetch("a", 2, 2).data().iter().all(|&v| v == 0.0));
        let m1 = Tensor::full([1, 2, 2], 0.25f32);
        let m2 = Tensor::full([1, 2, 2], 0.75f32);
        bank.insert("a", m1.clone());
        bank.insert("b", m2.clone());
        assert_eq!(bank.fetch("a", 2, 2), m1);
        assert_eq!(bank.fetch("b", 2, 2), m2);
        bank.insert("a", m2.clone());
        assert_eq!(bank.fetch("a", 2, 2), m2);
        assert_eq!(bank.fetch("b", 2, 2), m2);
        assert_eq!(bank.len(), 2);
    }

    #[test]
    fn hard_mask_ties_go_to_background() {
        let probs = Tensor::new([2, 1, 3], vec![0.5f32, 0.2, 0.9, 0.5, 0.8, 0.1]).unwrap();
        let pred = PredictionMap {
            logits: probs.clone(),
            probs,
            coarse_fg: Tensor::zeros([1, 1, 1]),
        };
        assert_eq!(pred.hard_mask().data(), &[0, 1, 0]);
    }
}
