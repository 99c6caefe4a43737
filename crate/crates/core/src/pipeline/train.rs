//! Adam and the episodic training step.

use crate::autograd::grad_eval;
use crate::decoder::{self, MemoryBank};
use crate::error::{Error, Result};
use crate::pipeline::episode::Episode;
use crate::pipeline::model::{forward_graph, loss_graph, FecaModel};
use crate::tensor::{ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(params: &ParamSet<f32>, lr: f64) -> Self {
        let zeros = || params.values().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Tensor<f32>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id);
            if grads[i].dims() != p.dims() {
                return Err(Error::shape(format!(
                    "gradient {:?} for parameter {:?}",
                    grads[i].dims(),
                    p.dims()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, gv)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = *gv as f64;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let update = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *pv = (*pv as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

/// Mean per-pixel cross-entropy over `batch` (first support of each
/// episode), one Adam update, and a bank update per episode. Returns the loss
/// before the update.
pub fn train_step(model: &mut FecaModel, batch: &[Episode], adam: &mut Adam, bank: &mut MemoryBank) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::validation("empty training batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut acc: Vec<Vec<f64>> = model.params.values().iter().map(|t| vec![0.0; t.len()]).collect();
    for ep in batch {
        let feats = model.features(ep, 0)?;
        let prior = model.prior(bank, &ep.query_id, feats.context_hw());
        let mut pred = None;
        let (loss, grads) = grad_eval(&model.params, |g, b| {
            let d = forward_graph(g, b, &model.layout, &feats, &prior)?;
            pred = Some(decoder::prediction_from(g, &d)?);
            loss_graph(g, &d, &ep.query.mask)
        })?;
        total += loss * scale;
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (x, y) in a.iter_mut().zip(g.data()) {
                *x += *y as f64 * scale;
            }
        }
        if model.config.ablation.bank {
            bank.update(&ep.query_id, &pred.expect("set by the loss closure"));
        }
    }
    let grads: Vec<Tensor<f32>> = acc
        .into_iter()
        .zip(model.params.values())
        .map(|(a, p)| Tensor::new(p.dims(), a.into_iter().map(|v| v as f32).collect()))
        .collect::<Result<_>>()?;
    adam.step(&mut model.params, &grads)?;
    Ok(total)
}

/// Runs `steps` training steps, cycling through `episodes` in order in
/// batches of `batch_size`. Returns the loss of every step.
pub fn train(
    model: &mut FecaModel,
    episodes: &[Episode],
    steps: usize,
    batch_size: usize,
    adam: &mut Adam,
    bank: &mut MemoryBank,
) -> Result<Vec<f64>> {
    if episodes.is_empty() || batch_size == 0 {
        return Err(Error::validation("training needs episodes and a positive batch size"));
    }
    let b = batch_size.min(episodes.len());
    (0..steps)
        .map(|s| {
            let batch: Vec<Episode> = (0..b).map(|i| episodes[(s * b + i) % episodes.len()].clone()).collect();
            train_step(model, &batch, adam, bank)
        })
        .collect()
}
