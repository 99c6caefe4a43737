//! Correlation reconstruction: dense (unmasked) correlations plus one
//! global-context correlation per pyramid level built from multi-scale local
//! self-similarity of the enhanced features.

use crate::autograd::{Bindings, Graph, Var};
use crate::correlation::{self, CorrelationPyramid, Correlation4D};
use crate::error::{Error, Result};
use crate::fem::EnhancedFeaturePair;
use crate::init::{fan_in_uniform, SeededRng};
use crate::tensor::{FeatureMap, ParamId, ParamSet, Real, Tensor};

/// Output width of every scale convolution.
pub const SCALE_CHANNELS: usize = 16;

fn check_k(k: usize) -> Result<usize> {
    if k.is_multiple_of(2) || k == 0 {
        return Err(Error::validation(format!(
            "self-similarity neighbourhood must be odd, got {k}"
        )));
    }
    Ok((k - 1) / 2)
}

/// `[k^2, H, W]` map of dot products between each position and its `k x k`
/// zero-padded neighbourhood, offsets enumerated row-major over `(di, dj)`.
pub fn self_similarity_kernel<T: Real>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let t = check_k(k)? as isize;
    let (c, h, w) = x.chw()?;
    let n = h * w;
    let xd: Vec<f64> = x.to_f64_vec();
    let mut out = vec![T::zero(); k * k * n];
    for (d, (di, dj)) in offsets(t).enumerate() {
        for i in 0..h {
            let ni = i as isize + di;
            if ni < 0 || ni >= h as isize {
                continue;
            }
            for j in 0..w {
                let nj = j as isize + dj;
                if nj < 0 || nj >= w as isize {
                    continue;
                }
                let (p, q) = (i * w + j, ni as usize * w + nj as usize);
                let mut acc = 0.0;
                for ch in 0..c {
                    acc += xd[ch * n + q] * xd[ch * n + p];
                }
                out[d * n + p] = T::from_f64(acc);
            }
        }
    }
    Tensor::new([k * k, h, w], out)
}

fn offsets(t: isize) -> impl Iterator<Item = (isize, isize)> {
    (-t..=t).flat_map(move |di| (-t..=t).map(move |dj| (di, dj)))
}

pub fn self_similarity_backward<T: Real>(x: &Tensor<T>, k: usize, gy: &Tensor<T>) -> Result<Tensor<T>> {
    let t = check_k(k)? as isize;
    let (c, h, w) = x.chw()?;
    let n = h * w;
    let xd = x.to_f64_vec();
    let gd = gy.data();
    let mut gx = vec![0.0f64; c * n];
    for (d, (di, dj)) in offsets(t).enumerate() {
        for i in 0..h {
            let ni = i as isize + di;
            if ni < 0 || ni >= h as isize {
                continue;
            }
            for j in 0..w {
                let nj = j as isize + dj;
                if nj < 0 || nj >= w as isize {
                    continue;
                }
                let (p, q) = (i * w + j, ni as usize * w + nj as usize);
                let g = gd[d * n + p].as_f64();
                if g == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    gx[ch * n + p] += g * xd[ch * n + q];
                    gx[ch * n + q] += g * xd[ch * n + p];
                }
            }
        }
    }
    Tensor::new(x.dims(), gx.into_iter().map(T::from_f64).collect())
}

pub fn local_self_similarity<T: Real>(e: &FeatureMap<T>, k: usize) -> Result<Tensor<T>> {
    self_similarity_kernel(e, k)
}

/// Successive stride-2 3x3 convolutions (ReLU after each) shared by the
/// support and query branches of one level. `convs.len()` is the depth `N`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrmParams {
    pub k: usize,
    pub convs: Vec<ParamId>,
}

impl CrmParams {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        k: usize,
        depth: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        check_k(k)?;
        if depth == 0 {
            return Err(Error::validation("multi-scale depth must be at least 1"));
        }
        let mut cin = k * k;
        let convs = (0..depth)
            .map(|i| {
                let id = ps.add(
                    format!("{prefix}.scale{}", i + 1),
                    fan_in_uniform(&[SCALE_CHANNELS, cin, 3, 3], cin * 9, rng),
                );
                cin = SCALE_CHANNELS;
                id
            })
            .collect();
        Ok(Self { k, convs })
    }

    /// `k^2 + depth * SCALE_CHANNELS`
    pub fn context_channels(&self) -> usize {
        self.k * self.k + self.convs.len() * SCALE_CHANNELS
    }
}

/// `SS (+) up(SS_1) (+) ... (+) up(SS_N)` at the resolution of `ss`.
pub fn multi_scale_guidance_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    p: &CrmParams,
    ss: Var,
) -> Result<Var> {
    let (_, h, w) = g.value(ss).chw()?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!(
            "multi-scale guidance needs at least 2x2 maps, got {h}x{w}"
        )));
    }
    let mut parts = vec![ss];
    let mut cur = ss;
    for &conv in &p.convs {
        let y = g.conv2d(cur, b.var(conv), None, 2, 1)?;
        cur = g.relu(y);
        parts.push(g.upsample(cur, h, w)?);
    }
    g.concat(&parts)
}

/// One-channel `[1, Hq, Wq, Hs, Ws]` correlation of the multi-scale contexts.
pub fn global_context_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    p: &CrmParams,
    eq: Var,
    es: Var,
) -> Result<Var> {
    if g.dims(eq) != g.dims(es) {
        return Err(Error::shape(format!(
            "enhanced query {:?} and support {:?} dims differ",
            g.dims(eq),
            g.dims(es)
        )));
    }
    let ssq = g.self_similarity(eq, p.k)?;
    let sss = g.self_similarity(es, p.k)?;
    let msq = multi_scale_guidance_graph(g, b, p, ssq)?;
    let mss = multi_scale_guidance_graph(g, b, p, sss)?;
    g.cosine(msq, mss)
}

/// Inputs to one pyramid level of the reconstruction.
pub struct CrmLevel {
    /// `[n_dense, Hq, Wq, Hs, Ws]` stacked dense correlations (constants).
    pub dense: Var,
    /// `(E^q, E^s)`; `None` when global context is disabled.
    pub enhanced: Option<(Var, Var)>,
}

/// Per level: dense correlations followed by the global-context channel.
pub fn crm_forward_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    levels: &[CrmLevel],
    params: Option<&[CrmParams]>,
) -> Result<Vec<Var>> {
    levels
        .iter()
        .enumerate()
        .map(|(l, level)| match (&level.enhanced, params) {
            (Some((eq, es)), Some(ps)) => {
                let gc = global_context_graph(g, b, &ps[l], *eq, *es)?;
                if g.dims(gc)[1..] != g.dims(level.dense)[1..] {
                    return Err(Error::shape(format!(
                        "level {l}: global context {:?} does not match dense correlations {:?}",
                        g.dims(gc),
                        g.dims(level.dense)
                    )));
                }
                g.concat(&[level.dense, gc])
            }
            _ => Ok(level.dense),
        })
        .collect()
}

pub fn multi_scale_guidance<T: Real>(ss: &Tensor<T>, params: &CrmParams, values: &ParamSet<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = g.bind(values);
    let s = g.constant(ss.clone());
    let out = multi_scale_guidance_graph(&mut g, &b, params, s)?;
    Ok(g.value(out).clone())
}

pub fn global_context_correlation<T: Real>(
    eq: &FeatureMap<T>,
    es: &FeatureMap<T>,
    params: &CrmParams,
    values: &ParamSet<T>,
) -> Result<Correlation4D<T>> {
    let mut g = Graph::new();
    let b = g.bind(values);
    let (q, s) = (g.constant(eq.clone()), g.constant(es.clone()));
    let out = global_context_graph(&mut g, &b, params, q, s)?;
    Correlation4D::new(g.value(out).clone())
}

/// Builds the reconstructed pyramid from enhanced pairs (one per level) and
/// unmasked backbone pairs `(F^q, F^s, level)`. With `params == None` the
/// global-context channel is left out.
pub fn crm_forward<T: Real>(
    enhanced: &[EnhancedFeaturePair<T>],
    dense_feats: &[(FeatureMap<T>, FeatureMap<T>, usize)],
    params: Option<(&[CrmParams], &ParamSet<T>)>,
) -> Result<CorrelationPyramid<T>> {
    let dense: Vec<(Correlation4D<T>, usize)> = dense_feats
        .iter()
        .map(|(fq, fs, l)| Ok((correlation::cosine_correlation(fq, fs)?, *l)))
        .collect::<Result<_>>()?;
    let dense = correlation::stack_and_group(&dense)?;
    let Some((crm_params, values)) = params else {
        return Ok(dense);
    };
    if enhanced.len() != 3 || crm_params.len() != 3 {
        return Err(Error::shape("reconstruction needs one enhanced pair and parameter set per level"));
    }
    let levels: Vec<Correlation4D<T>> = dense
        .levels
        .iter()
        .zip(enhanced)
        .zip(crm_params)
        .map(|((d, e), p)| {
            let gc = global_context_correlation(&e.eq, &e.es, p, values)?;
            if gc.spatial_dims() != d.spatial_dims() {
                return Err(Error::shape(format!(
                    "global context {:?} does not match dense {:?}",
                    gc.spatial_dims(),
                    d.spatial_dims()
                )));
            }
            Correlation4D::new(crate::ops::concat0(&[d.tensor(), gc.tensor()])?)
        })
        .collect::<Result<_>>()?;
    Ok(CorrelationPyramid {
        levels: levels.try_into().map_err(|_| Error::shape("pyramid needs 3 levels"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded;
    use crate::oracles;
    use crate::testutil::{rand_tensor, rel_err};

    #[test]
    fn constant_map_interior_and_corner() {
        let x = Tensor::<f32>::full([2, 4, 4], 1.0);
        let ss = local_self_similarity(&x, 3).unwrap();
        for d in 0..9 {
            assert_eq!(ss.get(&[d, 1, 1]), 2.0);
        }
        // (0,0): offsets with di = -1 or dj = -1 fall outside.
        let outside = [0, 1, 2, 3, 6];
        for d in 0..9 {
            let v = ss.get(&[d, 0, 0]);
            if outside.contains(&d) {
                assert_eq!(v, 0.0);
            } else {
                assert_eq!(v, 2.0);
            }
        }
    }

    #[test]
    fn even_k_rejected() {
        let x = Tensor::<f32>::zeros([1, 3, 3]);
        assert!(matches!(local_self_similarity(&x, 4), Err(Error::Validation(_))));
    }

    #[test]
    fn center_channel_is_squared_norm() {
        let x = rand_tensor::<f32>(&[3, 5, 4], 3);
        let ss = local_self_similarity(&x, 5).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let norm2: f64 = (0..3).map(|c| (x.get(&[c, i, j]) as f64).powi(2)).sum();
                assert!((ss.get(&[12, i, j]) as f64 - norm2).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matches_direct_loop() {
        let x = rand_tensor::<f32>(&[2, 3, 3], 5);
        let ss = local_self_similarity(&x, 3).unwrap();
        let expect = oracles::self_similarity(&x.to_f64_vec(), 2, 3, 3, 3);
        assert!(rel_err(&ss.to_f64_vec(), &expect) < 1e-6);
    }

    #[test]
    fn multi_scale_shape_and_zero_weights() {
        let mut ps = ParamSet::<f32>::new();
        let p = CrmParams::new(&mut ps, "crm", 3, 2, &mut seeded(1)).unwrap();
        let x = rand_tensor::<f32>(&[4, 8, 8], 2);
        let ss = local_self_similarity(&x, 3).unwrap();
        let ms = multi_scale_guidance(&ss, &p, &ps).unwrap();
        assert_eq!(ms.dims(), &[41, 8, 8]);
        for &id in &p.convs {
            ps.get_mut(id).data_mut().fill(0.0);
        }
        let ms = multi_scale_guidance(&ss, &p, &ps).unwrap();
        assert_eq!(&ms.data()[..ss.len()], ss.data());
        assert!(ms.data()[ss.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multi_scale_rejects_tiny_maps() {
        let mut ps = ParamSet::<f32>::new();
        let p = CrmParams::new(&mut ps, "crm", 3, 2, &mut seeded(1)).unwrap();
        let ss = Tensor::zeros([9, 1, 4]);
        assert!(matches!(multi_scale_guidance(&ss, &p, &ps), Err(Error::Shape(_))));
    }

    #[test]
    fn global_context_self_diagonal_and_range() {
        let mut ps = ParamSet::<f32>::new();
        let p = CrmParams::new(&mut ps, "crm", 5, 2, &mut seeded(3)).unwrap();
        let e = rand_tensor::<f32>(&[4, 6, 6], 4);
        let gc = global_context_correlation(&e, &e, &p, &ps).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((gc.tensor().get(&[0, i, j, i, j]) - 1.0).abs() < 1e-5);
            }
        }
        let other = rand_tensor::<f32>(&[4, 6, 6], 5);
        let gc = global_context_correlation(&e, &other, &p, &ps).unwrap();
        assert!(gc.tensor().data().iter().all(|&v| (0.0..=1.0 + 1e-6).contains(&v)));
    }

    #[test]
    fn pyramid_channel_counts() {
        let mut rng = seeded(9);
        let mut ps = ParamSet::<f32>::new();
        let params: Vec<CrmParams> = (0..3)
            .map(|l| CrmParams::new(&mut ps, &format!("crm{l}"), 3, 2, &mut rng).unwrap())
            .collect();
        let mut dense = Vec::new();
        let mut enhanced = Vec::new();
        for (l, (count, h)) in [(3usize, 8usize), (4, 4), (3, 2)].into_iter().enumerate() {
            for i in 0..count {
                let seed = (l * 10 + i) as u64;
                dense.push((rand_tensor(&[4, h, h], seed), rand_tensor(&[4, h, h], seed + 100), l));
            }
            enhanced.push(EnhancedFeaturePair {
                es: rand_tensor(&[4, h, h], 200 + l as u64),
                eq: rand_tensor(&[4, h, h], 300 + l as u64),
            });
        }
        let with_gc = crm_forward(&enhanced, &dense, Some((&params, &ps))).unwrap();
        assert_eq!(with_gc.channels(), [4, 5, 4]);
        let without = crm_forward(&enhanced, &dense, None).unwrap();
        let stacked = correlation::stack_and_group(
            &dense
                .iter()
                .map(|(q, s, l)| (correlation::cosine_correlation(q, s).unwrap(), *l))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(without, stacked);
    }
}
