//! Feature enhancement: cross-image spatial attention between a support and
//! a query feature map, followed by intra-image channel attention.
//!
//! For support positions `j` and query positions `i` the attention logits are
//! `K_j . Q_i`, normalised over `i`. The support branch uses the transpose of
//! the query-branch map. Each branch aggregates its own values (`V` comes from
//! one shared projection), maps them back to `C_l` channels, and is then gated
//! channel-wise by an MLP over the pooled input before the residual add.

use crate::autograd::{Bindings, Graph, Var};
use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, SeededRng};
use crate::tensor::{FeatureMap, ParamId, ParamSet, Real, Tensor};

/// Reduction ratio of the channel-attention MLP.
pub const MLP_REDUCTION: usize = 4;

/// `C_k = max(C_l / 8, 4)`, kept strictly below `C_l` for narrow inputs
/// (a single channel keeps `C_k = 1`).
pub fn key_channels(c_l: usize) -> usize {
    (c_l / 8).max(4).min(c_l.saturating_sub(1)).max(1)
}

/// Handles of one level's enhancement parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FemParams {
    pub channels: usize,
    pub key_channels: usize,
    /// `[C_k, C_l]` query projection (1x1 convolution).
    pub proj_q: ParamId,
    /// `[C_k, C_l]` key projection.
    pub proj_k: ParamId,
    /// `[C_k, C_l]` value projection shared by both branches.
    pub proj_v: ParamId,
    /// `[C_l, C_k]`
    pub trans_q: ParamId,
    /// `[C_l, C_k]`
    pub trans_s: ParamId,
    /// `[C_l / r, C_l]` and bias `[C_l / r]`
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    /// `[C_l, C_l / r]` and bias `[C_l]`
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

impl FemParams {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, prefix: &str, channels: usize, rng: &mut SeededRng) -> Self {
        Self::with_key_channels(ps, prefix, channels, key_channels(channels), rng)
            .expect("default key width is valid")
    }

    pub fn with_key_channels<T: Real>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        channels: usize,
        ck: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if ck == 0 || ck > channels {
            return Err(Error::validation(format!(
                "key width {ck} must lie in 1..={channels}"
            )));
        }
        let hidden = (channels / MLP_REDUCTION).max(1);
        let mut add = |name: &str, dims: &[usize], fan_in: usize| {
            ps.add(format!("{prefix}.{name}"), fan_in_uniform(dims, fan_in, rng))
        };
        Ok(Self {
            channels,
            key_channels: ck,
            proj_q: add("proj_q", &[ck, channels], channels),
            proj_k: add("proj_k", &[ck, channels], channels),
            proj_v: add("proj_v", &[ck, channels], channels),
            trans_q: add("trans_q", &[channels, ck], ck),
            trans_s: add("trans_s", &[channels, ck], ck),
            mlp_w1: add("mlp_w1", &[hidden, channels], channels),
            mlp_b1: add("mlp_b1", &[hidden], channels),
            mlp_w2: add("mlp_w2", &[channels, hidden], hidden),
            mlp_b2: add("mlp_b2", &[channels], hidden),
        })
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.proj_q,
            self.proj_k,
            self.proj_v,
            self.trans_q,
            self.trans_s,
            self.mlp_w1,
            self.mlp_b1,
            self.mlp_w2,
            self.mlp_b2,
        ]
    }
}

/// Graph handles of the cross-attention outputs.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttention {
    /// `[C_l, H, W]` query-branch aggregation after `trans_q`.
    pub pq: Var,
    /// `[C_l, H, W]` support-branch aggregation after `trans_s`.
    pub ps: Var,
    /// `[N, N]`, row `j` (support position) normalised over `i` (query position).
    pub aq: Var,
    /// Transpose of `aq`.
    pub a_s: Var,
}

/// Which branch a channel-attention call belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Support,
    Query,
}

fn flat<T: Real>(g: &mut Graph<T>, f: Var) -> Result<(Var, [usize; 3])> {
    let (c, h, w) = g.value(f).chw()?;
    Ok((g.reshape(f, &[c, h * w])?, [c, h, w]))
}

pub fn cross_image_attention_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    p: &FemParams,
    fs: Var,
    fq: Var,
) -> Result<CrossAttention> {
    if g.dims(fs) != g.dims(fq) {
        return Err(Error::shape(format!(
            "support {:?} and query {:?} feature dims differ",
            g.dims(fs),
            g.dims(fq)
        )));
    }
    let (fs2, dims) = flat(g, fs)?;
    let (fq2, _) = flat(g, fq)?;
    if dims[0] != p.channels {
        return Err(Error::shape(format!(
            "enhancement parameters expect {} channels, features have {}",
            p.channels, dims[0]
        )));
    }
    let q = g.matmul(b.var(p.proj_q), fq2)?;
    let k = g.matmul(b.var(p.proj_k), fs2)?;
    let kt = g.transpose(k)?;
    let logits = g.matmul(kt, q)?;
    let aq = g.softmax(logits, 1)?;
    let a_s = g.transpose(aq)?;

    let vq = g.matmul(b.var(p.proj_v), fq2)?;
    let vs = g.matmul(b.var(p.proj_v), fs2)?;
    // column j of V A^T is sum_i A[j, i] V[:, i]
    let agg_q = g.matmul(vq, a_s)?;
    let agg_s = g.matmul(vs, aq)?;
    let pq = g.matmul(b.var(p.trans_q), agg_q)?;
    let ps = g.matmul(b.var(p.trans_s), agg_s)?;
    Ok(CrossAttention {
        pq: g.reshape(pq, &dims)?,
        ps: g.reshape(ps, &dims)?,
        aq,
        a_s,
    })
}

/// Channel gate `sigmoid(MLP(GAP(f)))` as a `[C_l]` vector. The MLP is shared
/// by both branches.
pub fn channel_gate_graph<T: Real>(g: &mut Graph<T>, b: &Bindings, p: &FemParams, f: Var) -> Result<Var> {
    let c = g.dims(f)[0];
    let pooled = g.global_avg_pool(f)?;
    let col = g.reshape(pooled, &[c, 1])?;
    let h = g.matmul(b.var(p.mlp_w1), col)?;
    let hidden = g.dims(h)[0];
    let b1 = g.reshape(b.var(p.mlp_b1), &[hidden, 1])?;
    let h = g.add(h, b1)?;
    let h = g.relu(h);
    let o = g.matmul(b.var(p.mlp_w2), h)?;
    let b2 = g.reshape(b.var(p.mlp_b2), &[c, 1])?;
    let o = g.add(o, b2)?;
    let o = g.sigmoid(o);
    g.reshape(o, &[c])
}

/// `Expand(gate) * P + f`
pub fn apply_gate_graph<T: Real>(g: &mut Graph<T>, f: Var, pmap: Var, gate: Var) -> Result<Var> {
    let gated = g.channel_scale(pmap, gate)?;
    g.add(gated, f)
}

pub fn channel_attention_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    p: &FemParams,
    f: Var,
    pmap: Var,
) -> Result<Var> {
    let gate = channel_gate_graph(g, b, p, f)?;
    apply_gate_graph(g, f, pmap, gate)
}

/// Returns `(E^s, E^q)`.
pub fn fem_forward_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    p: &FemParams,
    fs: Var,
    fq: Var,
) -> Result<(Var, Var)> {
    let att = cross_image_attention_graph(g, b, p, fs, fq)?;
    let es = channel_attention_graph(g, b, p, fs, att.ps)?;
    let eq = channel_attention_graph(g, b, p, fq, att.pq)?;
    Ok((es, eq))
}

/// Attention maps of one cross-attention evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<T = f32> {
    pub aq: Tensor<T>,
    pub a_s: Tensor<T>,
}

/// Enhanced support and query maps.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedFeaturePair<T = f32> {
    pub es: FeatureMap<T>,
    pub eq: FeatureMap<T>,
}

/// Non-differentiable evaluation of the cross-image attention, returning
/// `(P^q, P^s, maps)`.
pub fn cross_image_attention<T: Real>(
    fs: &FeatureMap<T>,
    fq: &FeatureMap<T>,
    params: &FemParams,
    values: &ParamSet<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>, AttentionMaps<T>)> {
    let mut g = Graph::new();
    let b = g.bind(values);
    let (s, q) = (g.constant(fs.clone()), g.constant(fq.clone()));
    let att = cross_image_attention_graph(&mut g, &b, params, s, q)?;
    Ok((
        g.value(att.pq).clone(),
        g.value(att.ps).clone(),
        AttentionMaps {
            aq: g.value(att.aq).clone(),
            a_s: g.value(att.a_s).clone(),
        },
    ))
}

/// `E = Expand(MLP(Pooling(f))) * p + f` for either branch; `p` already has
/// `C_l` channels. The MLP is shared, so `branch` only documents intent.
pub fn channel_attention<T: Real>(
    f: &FeatureMap<T>,
    p: &FeatureMap<T>,
    params: &FemParams,
    values: &ParamSet<T>,
    _branch: Branch,
) -> Result<FeatureMap<T>> {
    let mut g = Graph::new();
    let b = g.bind(values);
    let (fv, pv) = (g.constant(f.clone()), g.constant(p.clone()));
    let e = channel_attention_graph(&mut g, &b, params, fv, pv)?;
    Ok(g.value(e).clone())
}

pub fn fem_forward<T: Real>(
    fs: &FeatureMap<T>,
    fq: &FeatureMap<T>,
    params: &FemParams,
    values: &ParamSet<T>,
) -> Result<EnhancedFeaturePair<T>> {
    let mut g = Graph::new();
    let b = g.bind(values);
    let (s, q) = (g.constant(fs.clone()), g.constant(fq.clone()));
    let (es, eq) = fem_forward_graph(&mut g, &b, params, s, q)?;
    Ok(EnhancedFeaturePair {
        es: g.value(es).clone(),
        eq: g.value(eq).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded;
    use crate::oracles;
    use crate::testutil::{rand_tensor, rel_err};

    fn setup(c: usize, seed: u64) -> (ParamSet<f32>, FemParams) {
        let mut ps = ParamSet::new();
        let p = FemParams::new(&mut ps, "fem", c, &mut seeded(seed));
        (ps, p)
    }

    #[test]
    fn zero_projections_give_uniform_attention() {
        let (mut ps, p) = setup(8, 1);
        for id in [p.proj_q, p.proj_k] {
            ps.get_mut(id).data_mut().fill(0.0);
        }
        let fs = rand_tensor::<f32>(&[8, 3, 2], 2);
        let fq = rand_tensor::<f32>(&[8, 3, 2], 3);
        let (_, _, maps) = cross_image_attention(&fs, &fq, &p, &ps).unwrap();
        let n = 6.0f32;
        assert!(maps.aq.data().iter().all(|&v| (v - 1.0 / n).abs() < 1e-7));
        assert!(maps.a_s.data().iter().all(|&v| (v - 1.0 / n).abs() < 1e-7));
    }

    #[test]
    fn support_map_is_exact_transpose_and_rows_normalised() {
        let (ps, p) = setup(8, 4);
        let fs = rand_tensor::<f32>(&[8, 3, 3], 5);
        let fq = rand_tensor::<f32>(&[8, 3, 3], 6);
        let (_, _, maps) = cross_image_attention(&fs, &fq, &p, &ps).unwrap();
        let n = 9;
        for j in 0..n {
            let mut row = 0.0f64;
            for i in 0..n {
                assert_eq!(maps.a_s.get(&[i, j]).to_bits(), maps.aq.get(&[j, i]).to_bits());
                row += maps.aq.get(&[j, i]) as f64;
            }
            assert!((row - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_attention_matches_loop_oracle() {
        let mut ps = ParamSet::new();
        let p = FemParams::with_key_channels(&mut ps, "fem", 4, 2, &mut seeded(7)).unwrap();
        let fs = rand_tensor::<f32>(&[4, 2, 2], 8);
        let fq = rand_tensor::<f32>(&[4, 2, 2], 9);
        let (pq, pss, maps) = cross_image_attention(&fs, &fq, &p, &ps).unwrap();
        let w = |id| ps.get(id).to_f64_vec();
        let o = oracles::cross_image_attention(
            &fs.to_f64_vec(),
            &fq.to_f64_vec(),
            &oracles::FemWeights {
                proj_q: w(p.proj_q),
                proj_k: w(p.proj_k),
                proj_v: w(p.proj_v),
                trans_q: w(p.trans_q),
                trans_s: w(p.trans_s),
                mlp_w1: w(p.mlp_w1),
                mlp_b1: w(p.mlp_b1),
                mlp_w2: w(p.mlp_w2),
                mlp_b2: w(p.mlp_b2),
                c_l: 4,
                c_k: 2,
                hidden: 1,
            },
            4,
        );
        assert!(rel_err(&maps.aq.to_f64_vec(), &o.aq) < 1e-6);
        assert!(rel_err(&pq.to_f64_vec(), &o.pq) < 1e-6);
        assert!(rel_err(&pss.to_f64_vec(), &o.ps) < 1e-6);
    }

    #[test]
    fn forced_gates() {
        let mut g = Graph::<f32>::new();
        let f = g.constant(rand_tensor(&[3, 2, 2], 1));
        let pm = g.constant(rand_tensor(&[3, 2, 2], 2));
        let ones = g.constant(Tensor::full([3], 1.0));
        let zeros = g.constant(Tensor::zeros([3]));
        let e1 = apply_gate_graph(&mut g, f, pm, ones).unwrap();
        let sum = crate::ops::add(g.value(pm), g.value(f)).unwrap();
        assert_eq!(g.value(e1), &sum);
        let e0 = apply_gate_graph(&mut g, f, pm, zeros).unwrap();
        assert_eq!(g.value(e0), g.value(f));
    }

    #[test]
    fn channel_attention_matches_loop_oracle() {
        let (ps, p) = setup(8, 10);
        let f = rand_tensor::<f32>(&[8, 3, 2], 11);
        let pm = rand_tensor::<f32>(&[8, 3, 2], 12);
        let got = channel_attention(&f, &pm, &p, &ps, Branch::Query).unwrap();
        let w = |id| ps.get(id).to_f64_vec();
        let expect = oracles::channel_attention(
            &f.to_f64_vec(),
            &pm.to_f64_vec(),
            &w(p.mlp_w1),
            &w(p.mlp_b1),
            &w(p.mlp_w2),
            &w(p.mlp_b2),
            8,
            2,
        );
        assert!(rel_err(&got.to_f64_vec(), &expect) < 1e-6);
    }

    #[test]
    fn zero_params_pass_features_through() {
        let (mut ps, p) = setup(16, 13);
        for id in p.ids() {
            ps.get_mut(id).data_mut().fill(0.0);
        }
        let fs = rand_tensor::<f32>(&[16, 4, 5], 14);
        let fq = rand_tensor::<f32>(&[16, 4, 5], 15);
        let out = fem_forward(&fs, &fq, &p, &ps).unwrap();
        assert_eq!(out.es, fs);
        assert_eq!(out.eq, fq);
    }

    #[test]
    fn output_dims_follow_input() {
        let (ps, p) = setup(8, 16);
        for (h, w) in [(2, 2), (5, 3), (13, 7), (9, 13)] {
            let fs = rand_tensor::<f32>(&[8, h, w], 17);
            let fq = rand_tensor::<f32>(&[8, h, w], 18);
            let out = fem_forward(&fs, &fq, &p, &ps).unwrap();
            assert_eq!(out.es.dims(), &[8, h, w]);
            assert_eq!(out.eq.dims(), &[8, h, w]);
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let (ps, p) = setup(8, 19);
        let fs = rand_tensor::<f32>(&[8, 2, 3], 1);
        let fq = rand_tensor::<f32>(&[8, 3, 2], 2);
        assert!(matches!(fem_forward(&fs, &fq, &p, &ps), Err(Error::Shape(_))));
    }

    #[test]
    fn key_width_bounds() {
        assert_eq!(key_channels(1), 1);
        assert_eq!(key_channels(3), 2);
        assert_eq!(key_channels(16), 4);
        assert_eq!(key_channels(64), 8);
        let mut ps = ParamSet::<f32>::new();
        assert!(FemParams::with_key_channels(&mut ps, "f", 4, 5, &mut seeded(0)).is_err());
        assert!(FemParams::with_key_channels(&mut ps, "g", 4, 0, &mut seeded(0)).is_err());
    }
}
