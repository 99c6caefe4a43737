//! Production kernels checked against the loop oracles on seeded inputs.

use serde::Serialize;

use crate::correlation;
use crate::crm::{self, CrmParams};
use crate::decoder::{self, DecoderParams, PredictionMap};
use crate::encoder4d::{self, CenterPivotKernel, Conv4dSpec, CpLayer, EncoderParams};
use crate::error::Result;
use crate::fem::{self, Branch, FemParams};
use crate::init::{seeded, uniform, SeededRng};
use crate::mask::BinaryMask;
use crate::ops;
use crate::pipeline::{self, KShotConfig, MetricsAccumulator};
use crate::tensor::{ParamId, ParamSet, Tensor};
use crate::correlation::{CorrelationPyramid, Correlation4D};

use super::*;

/// Tolerance for single-kernel arithmetic.
pub const PURE_TOL: f64 = 1e-6;
/// Tolerance for normalized or multi-stage compositions.
pub const COMPOSED_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub op: String,
    pub seed: u64,
    pub max_abs: f64,
    pub max_rel: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs every registered check. Deterministic in `seed`.
pub fn oracle_suite(seed: u64) -> Vec<OracleReport> {
    oracle_suite_perturbed(seed, 0.0)
}

/// Same as [`oracle_suite`], but the first element of every weight (or, for
/// weightless ops, of the first input) handed to the production side is
/// shifted by `delta`.
pub fn oracle_suite_perturbed(seed: u64, delta: f64) -> Vec<OracleReport> {
    let cx = Cx { delta };
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, tol, check))| {
            let mut rng = seeded(seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64));
            match check(&cx, &mut rng) {
                Ok((got, want)) => {
                    let max_abs = max_abs_diff(&got, &want);
                    let max_rel = rel_diff(&got, &want);
                    OracleReport {
                        op: name.to_string(),
                        seed,
                        max_abs,
                        max_rel,
                        tolerance: *tol,
                        pass: got.len() == want.len() && max_rel < *tol,
                    }
                }
                Err(_) => OracleReport {
                    op: name.to_string(),
                    seed,
                    max_abs: f64::INFINITY,
                    max_rel: f64::INFINITY,
                    tolerance: *tol,
                    pass: false,
                },
            }
        })
        .collect()
}

type Check = fn(&Cx, &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)>;

const CHECKS: &[(&str, f64, Check)] = &[
    ("matmul", PURE_TOL, check_matmul),
    ("softmax", PURE_TOL, check_softmax),
    ("conv2d", PURE_TOL, check_conv2d),
    ("bilinear", PURE_TOL, check_bilinear),
    ("group_norm", PURE_TOL, check_group_norm),
    ("cosine_correlation", PURE_TOL, check_cosine),
    ("masked_hypercorrelation", PURE_TOL, check_masked),
    ("cross_image_attention", PURE_TOL, check_attention),
    ("channel_attention", PURE_TOL, check_channel_attention),
    ("fem_forward", PURE_TOL, check_fem),
    ("local_self_similarity", PURE_TOL, check_self_similarity),
    ("multi_scale_guidance", PURE_TOL, check_multi_scale),
    ("global_context_correlation", PURE_TOL, check_global_context),
    ("full_conv4d", PURE_TOL, check_full_conv4d),
    ("center_pivot_conv4d", COMPOSED_TOL, check_center_pivot),
    ("squeeze_block", COMPOSED_TOL, check_squeeze),
    ("encode_pyramid", COMPOSED_TOL, check_encoder),
    ("residual_decode", COMPOSED_TOL, check_decoder),
    ("ce_loss", PURE_TOL, check_ce),
    ("metrics", PURE_TOL, check_metrics),
    ("kshot_fuse", PURE_TOL, check_kshot),
];

struct Cx {
    delta: f64,
}

impl Cx {
    fn bump(&self, t: &Tensor<f32>) -> Tensor<f32> {
        let mut t = t.clone();
        if self.delta != 0.0 {
            if let Some(v) = t.data_mut().first_mut() {
                *v += self.delta as f32;
            }
        }
        t
    }

    fn bump_params(&self, ps: &ParamSet<f32>) -> ParamSet<f32> {
        let mut out = ps.clone();
        let ids: Vec<ParamId> = out.ids().collect();
        for id in ids {
            *out.get_mut(id) = self.bump(ps.get(id));
        }
        out
    }
}

fn rand(dims: &[usize], rng: &mut SeededRng) -> Tensor<f32> {
    uniform(dims, 1.0, rng)
}

fn flat(ps: &ParamSet<f32>, id: ParamId) -> Vec<f64> {
    ps.get(id).to_f64_vec()
}

fn check_matmul(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = rand(&[4, 3], rng);
    let b = rand(&[3, 2], rng);
    let got = ops::matmul(&cx.bump(&a), &b)?;
    Ok((got.to_f64_vec(), matmul(&a.to_f64_vec(), &b.to_f64_vec(), 4, 3, 2)))
}

fn check_softmax(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = rand(&[2, 3], rng).map(|v| 4.0 * v);
    let got = ops::softmax_axis(&cx.bump(&x), 1)?;
    Ok((got.to_f64_vec(), softmax_rows(&x.to_f64_vec(), 3)))
}

fn check_conv2d(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = rand(&[2, 5, 5], rng);
    let w = rand(&[3, 2, 3, 3], rng);
    let b = rand(&[3], rng);
    let got = ops::conv2d(&x, &cx.bump(&w), Some(&b), 2, 1)?;
    let (want, _) = conv2d(&x.to_f64_vec(), (2, 5, 5), &w.to_f64_vec(), (3, 3, 3), Some(&b.to_f64_vec()), 2, 1);
    Ok((got.to_f64_vec(), want))
}

fn check_bilinear(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = rand(&[3, 3, 4], rng);
    let got = ops::upsample_bilinear(&cx.bump(&x), 7, 9)?;
    Ok((got.to_f64_vec(), bilinear(&x.to_f64_vec(), 3, (3, 4), (7, 9), 1)))
}

fn check_group_norm(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = rand(&[8, 3, 3], rng);
    let gamma = rand(&[8], rng);
    let beta = rand(&[8], rng);
    let (got, _) = ops::group_norm(&x, &cx.bump(&gamma), &beta, 4)?;
    let want = group_norm(&x.to_f64_vec(), 8, &gamma.to_f64_vec(), &beta.to_f64_vec(), 4);
    Ok((got.to_f64_vec(), want))
}

fn check_cosine(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let fq = rand(&[3, 2, 2], rng);
    let fs = rand(&[3, 2, 2], rng);
    let got = correlation::cosine_correlation(&cx.bump(&fq), &fs)?;
    let want = cosine_correlation(&fq.to_f64_vec(), &fs.to_f64_vec(), 3, (2, 2), (2, 2));
    Ok((got.tensor().to_f64_vec(), want))
}

fn check_masked(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let fq = rand(&[4, 3, 3], rng);
    let fs = rand(&[4, 3, 3], rng);
    let mask = BinaryMask::from_fn(3, 3, |y, x| (y + x) % 2 == 0);
    let got = correlation::masked_hypercorrelation(&cx.bump(&fq), &fs, &mask.to_tensor())?;
    let mut filtered = fs.to_f64_vec();
    for (i, v) in filtered.iter_mut().enumerate() {
        let p = i % 9;
        if mask.data()[p] == 0 {
            *v = 0.0;
        }
    }
    let want = cosine_correlation(&fq.to_f64_vec(), &filtered, 4, (3, 3), (3, 3));
    Ok((got.tensor().to_f64_vec(), want))
}

fn fem_weights(ps: &ParamSet<f32>, p: &FemParams) -> FemWeights {
    FemWeights {
        proj_q: flat(ps, p.proj_q),
        proj_k: flat(ps, p.proj_k),
        proj_v: flat(ps, p.proj_v),
        trans_q: flat(ps, p.trans_q),
        trans_s: flat(ps, p.trans_s),
        mlp_w1: flat(ps, p.mlp_w1),
        mlp_b1: flat(ps, p.mlp_b1),
        mlp_w2: flat(ps, p.mlp_w2),
        mlp_b2: flat(ps, p.mlp_b2),
        c_l: p.channels,
        c_k: p.key_channels,
        hidden: ps.get(p.mlp_b1).len(),
    }
}

fn check_attention(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ps = ParamSet::new();
    let p = FemParams::with_key_channels(&mut ps, "fem", 4, 2, rng)?;
    let fs = rand(&[4, 2, 2], rng);
    let fq = rand(&[4, 2, 2], rng);
    let (pq, pss, maps) = fem::cross_image_attention(&fs, &fq, &p, &cx.bump_params(&ps))?;
    let o = cross_image_attention(&fs.to_f64_vec(), &fq.to_f64_vec(), &fem_weights(&ps, &p), 4);
    let got = [maps.aq.to_f64_vec(), maps.a_s.to_f64_vec(), pq.to_f64_vec(), pss.to_f64_vec()].concat();
    Ok((got, [o.aq, o.a_s, o.pq, o.ps].concat()))
}

fn check_channel_attention(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ps = ParamSet::new();
    let p = FemParams::new(&mut ps, "fem", 8, rng);
    let f = rand(&[8, 3, 2], rng);
    let pm = rand(&[8, 3, 2], rng);
    let got = fem::channel_attention(&f, &pm, &p, &cx.bump_params(&ps), Branch::Query)?;
    let w = fem_weights(&ps, &p);
    let want = channel_attention(&f.to_f64_vec(), &pm.to_f64_vec(), &w.mlp_w1, &w.mlp_b1, &w.mlp_w2, &w.mlp_b2, 8, w.hidden);
    Ok((got.to_f64_vec(), want))
}

fn check_fem(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ps = ParamSet::new();
    let p = FemParams::new(&mut ps, "fem", 8, rng);
    let fs = rand(&[8, 3, 3], rng);
    let fq = rand(&[8, 3, 3], rng);
    let out = fem::fem_forward(&fs, &fq, &p, &cx.bump_params(&ps))?;
    let (es, eq) = fem_forward(&fs.to_f64_vec(), &fq.to_f64_vec(), &fem_weights(&ps, &p), 9);
    Ok(([out.es.to_f64_vec(), out.eq.to_f64_vec()].concat(), [es, eq].concat()))
}

fn check_self_similarity(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = rand(&[2, 3, 3], rng);
    let got = crm::local_self_similarity(&cx.bump(&x), 3)?;
    Ok((got.to_f64_vec(), self_similarity(&x.to_f64_vec(), 2, 3, 3, 3)))
}

fn crm_convs(ps: &ParamSet<f32>, p: &CrmParams) -> Vec<Vec<f64>> {
    p.convs.iter().map(|&id| flat(ps, id)).collect()
}

fn check_multi_scale(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ps = ParamSet::new();
    let p = CrmParams::new(&mut ps, "crm", 3, 2, rng)?;
    let x = rand(&[4, 8, 8], rng);
    let ss = crm::local_self_similarity(&x, 3)?;
    let got = crm::multi_scale_guidance(&ss, &p, &cx.bump_params(&ps))?;
    let want = multi_scale_guidance(&ss.to_f64_vec(), 9, 8, 8, &crm_convs(&ps, &p));
    Ok((got.to_f64_vec(), want))
}

fn check_global_context(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ps = ParamSet::new();
    let p = CrmParams::new(&mut ps, "crm", 3, 2, rng)?;
    let eq = rand(&[4, 6, 6], rng);
    let es = rand(&[4, 6, 6], rng);
    let got = crm::global_context_correlation(&eq, &es, &p, &cx.bump_params(&ps))?;
    let want = global_context(&eq.to_f64_vec(), &es.to_f64_vec(), 4, 6, 6, 3, &crm_convs(&ps, &p));
    Ok((got.tensor().to_f64_vec(), want))
}

fn check_full_conv4d(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = Correlation4D::new(rand(&[1, 4, 4, 4, 4], rng))?;
    let w = rand(&[3, 1, 3, 3, 3, 3], rng);
    let got = encoder4d::full_conv4d(&x, &cx.bump(&w), Conv4dSpec::default())?;
    let want = conv4d(&x.tensor().to_f64_vec(), [1, 4, 4, 4, 4], &w.to_f64_vec(), [3, 3], (1, 1), (1, 1));
    Ok((got.tensor().to_f64_vec(), want))
}

fn check_center_pivot(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = Correlation4D::new(rand(&[2, 4, 4, 5, 5], rng))?;
    let wq = rand(&[3, 2, 3, 3], rng);
    let ws = rand(&[3, 2, 3, 3], rng);
    let spec = Conv4dSpec::same(3, 2);
    let k = CenterPivotKernel { wq: cx.bump(&wq), ws: ws.clone(), spec };
    let got = encoder4d::center_pivot_conv4d(&x, &k)?;
    let full = sparsified(&wq.to_f64_vec(), &ws.to_f64_vec(), 3, 2, 3);
    let want = conv4d(&x.tensor().to_f64_vec(), [2, 4, 4, 5, 5], &full, [3, 3], (1, 2), (1, 1));
    Ok((got.tensor().to_f64_vec(), want))
}

fn cp_weights(ps: &ParamSet<f32>, l: &CpLayer) -> CpWeights {
    let d = ps.get(l.wq).dims();
    CpWeights {
        wq: flat(ps, l.wq),
        ws: flat(ps, l.ws),
        gamma: flat(ps, l.gamma),
        beta: flat(ps, l.beta),
        cin: d[1],
        cout: d[0],
    }
}

fn check_squeeze(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ps = ParamSet::new();
    let layers = vec![
        CpLayer::new(&mut ps, "sq.0", 2, 4, rng),
        CpLayer::new(&mut ps, "sq.1", 4, 4, rng),
    ];
    let xt = rand(&[2, 3, 3, 6, 6], rng);
    let values = cx.bump_params(&ps);
    let mut g = crate::autograd::Graph::new();
    let b = g.bind(&values);
    let x = g.constant(xt.clone());
    let y = encoder4d::squeeze_block_graph(&mut g, &b, &layers, x, (2, 2), true)?;
    let w: Vec<CpWeights> = layers.iter().map(|l| cp_weights(&ps, l)).collect();
    let (want, _) = squeeze_block(&xt.to_f64_vec(), [2, 3, 3, 6, 6], &w, (2, 2), true);
    Ok((g.value(y).to_f64_vec(), want))
}

fn check_encoder(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let channels = [3, 4, 3];
    let sizes = [6, 3, 2];
    let mut ps = ParamSet::new();
    let p = EncoderParams::new(&mut ps, "enc", channels, [4, 4, 8], rng)?;
    let levels: Vec<Correlation4D<f32>> = (0..3)
        .map(|l| {
            let s = sizes[l];
            Correlation4D::new(rand(&[channels[l], s, s, s, s], rng))
        })
        .collect::<Result<_>>()?;
    let pyr = CorrelationPyramid {
        levels: [levels[0].clone(), levels[1].clone(), levels[2].clone()],
    };
    let got = encoder4d::encode_pyramid(&pyr, &p, &cx.bump_params(&ps))?;
    let w = EncoderWeights {
        squeeze: [0, 1, 2].map(|l| p.squeeze[l].iter().map(|c| cp_weights(&ps, c)).collect()),
        proj: [flat(&ps, p.proj[0]), flat(&ps, p.proj[1])],
        mix: [cp_weights(&ps, &p.mix[0]), cp_weights(&ps, &p.mix[1])],
        norm: p.norm,
    };
    let bufs: Vec<Vec<f64>> = levels.iter().map(|c| c.tensor().to_f64_vec()).collect();
    let dims = [0, 1, 2].map(|l| {
        let s = sizes[l];
        [channels[l], s, s, s, s]
    });
    let (want, _) = encode_pyramid([(&bufs[0], dims[0]), (&bufs[1], dims[1]), (&bufs[2], dims[2])], &w);
    Ok((got.to_f64_vec(), want))
}

fn check_decoder(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ps = ParamSet::new();
    let p = DecoderParams::new(&mut ps, "dec", 4, rng);
    let ctx = rand(&[4, 4, 4], rng);
    let prior = rand(&[1, 4, 4], rng).map(f32::abs);
    let pred = decoder::residual_decode(&ctx, &prior, &p, &cx.bump_params(&ps), (8, 8))?;
    let wt = DecoderWeights {
        res3: flat(&ps, p.res3),
        res5: flat(&ps, p.res5),
        head_w: flat(&ps, p.head_w),
        head_b: flat(&ps, p.head_b),
        c: p.channels,
    };
    let want = residual_decode(&ctx.to_f64_vec(), &prior.to_f64_vec(), 4, 4, &wt, (8, 8));
    Ok((pred.probs.to_f64_vec(), want))
}

fn random_mask(h: usize, w: usize, rng: &mut SeededRng) -> BinaryMask {
    use rand::Rng;
    let data = (0..h * w).map(|_| rng.gen_bool(0.5) as u8).collect();
    BinaryMask::new(h, w, data).expect("sized")
}

fn check_ce(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let logits = rand(&[2, 4, 5], rng).map(|v| 3.0 * v);
    let probs = ops::softmax_axis(&logits, 0)?;
    let gt = random_mask(4, 5, rng);
    let pred = PredictionMap {
        logits,
        probs: cx.bump(&probs),
        coarse_fg: Tensor::zeros([1, 1, 1]),
    };
    let got = pipeline::ce_loss(&pred, &gt)?;
    Ok((vec![got], vec![cross_entropy(&probs.to_f64_vec(), gt.data())]))
}

fn check_metrics(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut acc = MetricsAccumulator::new();
    let mut samples = Vec::new();
    for i in 0..6u32 {
        let pred = random_mask(5, 5, rng);
        let gt = random_mask(5, 5, rng);
        acc.add(i % 3, &pred, &gt)?;
        samples.push((i % 3, pred.data().to_vec(), gt.data().to_vec()));
    }
    let (miou, fb) = metrics(&samples).expect("nonempty unions");
    Ok((vec![acc.miou()? + cx.delta, acc.fb_iou()?], vec![miou, fb]))
}

fn check_kshot(cx: &Cx, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    let maps: Vec<Tensor<f32>> = (0..3).map(|_| rand(&[4, 4], rng).map(f32::abs)).collect();
    let mut bumped = maps.clone();
    // Pushes the first pixel's mean across the threshold when perturbing.
    if cx.delta != 0.0 {
        let mean: f64 = maps.iter().map(|m| m.data()[0] as f64).sum::<f64>() / 3.0;
        let shift = if mean > 0.5 { -1.0 } else { 1.0 };
        bumped[0].data_mut()[0] += (3.0 * shift) as f32;
    }
    let cfg = KShotConfig::default();
    let got = pipeline::kshot_fuse(&bumped, &cfg)?;
    let flat_maps: Vec<Vec<f64>> = maps.iter().map(|m| m.to_f64_vec()).collect();
    let want = kshot_fuse(&flat_maps, cfg.tau);
    Ok((
        got.data().iter().map(|&v| v as f64).collect(),
        want.iter().map(|&v| v as f64).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_zero_all_pass() {
        let reports = oracle_suite(0);
        assert_eq!(reports.len(), CHECKS.len());
        for r in &reports {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn perturbation_is_caught() {
        let reports = oracle_suite_perturbed(0, 1e-2);
        let failed = reports.iter().filter(|r| !r.pass).count();
        assert!(failed >= reports.len() / 2, "{reports:?}");
    }

    #[test]
    fn deterministic() {
        assert_eq!(oracle_suite(3), oracle_suite(3));
    }
}
