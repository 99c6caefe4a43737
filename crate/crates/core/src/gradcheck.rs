//! Finite-difference gradient checks of the full model loss, run in `f64`.

use rand::seq::index::sample;
use serde::Serialize;

use crate::autograd::{grad_eval, Graph};
use crate::error::Result;
use crate::init::seeded;
use crate::io::fixtures::synthetic_episodes;
use crate::oracles::rel_diff;
use crate::pipeline::backbone::ToyBackbone;
use crate::pipeline::model::{forward_graph, loss_graph, EpisodeFeatures, ModelConfig, ModelLayout};
use crate::tensor::{ParamSet, Tensor};

pub const FD_STEP: f64 = 1e-3;
pub const SAMPLES_PER_TENSOR: usize = 20;
pub const GRAD_TOL: f64 = 1e-3;
/// Side of the toy episode images.
pub const TOY_SIZE: usize = 24;
/// Sampling gives up on a tensor after this many rejected coordinates.
pub const MAX_KINKS_PER_TENSOR: usize = 200;

pub const MODULES: [&str; 4] = ["fem", "crm", "encoder", "decoder"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub module: String,
    pub tensors: usize,
    /// Coordinates compared.
    pub coords: usize,
    /// Coordinates rejected because a ReLU changed sign within the stencil.
    pub kinks: usize,
    /// Worst per-tensor relative error `max|g - fd| / max|fd|` over the
    /// sampled coordinates.
    pub max_rel: f64,
    pub pass: bool,
}

fn module_of(name: &str) -> Option<usize> {
    let prefix = name.split('.').next().unwrap_or(name);
    [
        prefix.starts_with("fem"),
        prefix.starts_with("crm"),
        prefix == "enc",
        prefix == "dec",
    ]
    .iter()
    .position(|&b| b)
}

/// Checks every trainable tensor of the full model on one seeded 24x24
/// episode with a random memory prior.
///
/// Central differences are only compared where no ReLU input changes sign
/// between `x - h` and `x + h`; such coordinates are skipped and counted, and
/// sampling continues with the next random coordinate.
pub fn grad_check(seed: u64) -> Result<Vec<GradCheckRow>> {
    let cfg = ModelConfig::default();
    let mut params = ParamSet::<f64>::new();
    let layout = ModelLayout::new(&cfg, &mut params, seed)?;
    let ep = synthetic_episodes(1, TOY_SIZE, 1, seed).remove(0);
    let backbone = ToyBackbone::new(cfg.backbone_seed);
    let feats = EpisodeFeatures::compute(&backbone, &ep.query, &ep.supports[0], &cfg.ablation)?.cast::<f64>();
    let (h, w) = feats.context_hw();
    let mut rng = seeded(seed ^ 0x5EED);
    let prior: Tensor<f64> = crate::init::uniform(&[1, h, w], 1.0, &mut rng).map(f64::abs);
    let gt = &ep.query.mask;

    let eval = |ps: &ParamSet<f64>| -> Result<(f64, Vec<u64>)> {
        let mut g = Graph::new();
        let b = g.bind(ps);
        let d = forward_graph(&mut g, &b, &layout, &feats, &prior)?;
        let l = loss_graph(&mut g, &d, gt)?;
        Ok((g.value(l).data()[0], g.relu_pattern()))
    };
    let (_, base) = eval(&params)?;
    let (_, grads) = grad_eval(&params, |g, b| {
        let d = forward_graph(g, b, &layout, &feats, &prior)?;
        loss_graph(g, &d, gt)
    })?;

    let mut rows: Vec<GradCheckRow> = MODULES
        .iter()
        .map(|m| GradCheckRow {
            module: m.to_string(),
            tensors: 0,
            coords: 0,
            kinks: 0,
            max_rel: 0.0,
            pass: true,
        })
        .collect();
    let ids: Vec<_> = params.ids().collect();
    for (id, grad) in ids.into_iter().zip(&grads) {
        let Some(m) = module_of(params.name(id)) else { continue };
        let n = params.get(id).len();
        let order = sample(&mut rng, n, n).into_vec();
        let mut analytic = Vec::with_capacity(SAMPLES_PER_TENSOR);
        let mut numeric = Vec::with_capacity(SAMPLES_PER_TENSOR);
        let mut kinks = 0;
        for &i in &order {
            if analytic.len() == SAMPLES_PER_TENSOR || kinks == MAX_KINKS_PER_TENSOR {
                break;
            }
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let (up, pu) = eval(&params)?;
            params.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let (down, pd) = eval(&params)?;
            params.get_mut(id).data_mut()[i] = orig;
            if pu != base || pd != base {
                kinks += 1;
                continue;
            }
            numeric.push((up - down) / (2.0 * FD_STEP));
            analytic.push(grad.data()[i]);
        }
        let row = &mut rows[m];
        row.tensors += 1;
        row.coords += analytic.len();
        row.kinks += kinks;
        row.max_rel = row.max_rel.max(rel_diff(&analytic, &numeric));
    }
    for row in &mut rows {
        row.pass = row.tensors > 0 && row.max_rel < GRAD_TOL;
    }
    Ok(rows)
}
