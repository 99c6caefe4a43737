//! Brute-force `f64` reference implementations.
//!
//! Everything here works on flat row-major `Vec<f64>` buffers with explicit
//! loops and shares no code with the production kernels. Functions are slow by
//! design and meant for inputs of at most a few thousand elements.

mod suite;

pub use suite::{oracle_suite, oracle_suite_perturbed, OracleReport, COMPOSED_TOL, PURE_TOL};

/// Normwise relative difference `max|a - e| / max|e|`. Returns the plain max
/// abs difference when `expected` is all zeros.
pub fn rel_diff(actual: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len(), "rel_diff: length mismatch");
    let num = max_abs_diff(actual, expected);
    let den = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// `[m, k] x [k, n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax of each length-`n` row.
pub fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        out.extend(row.iter().map(|v| (v - m).exp() / z));
    }
    out
}

/// ReLU-clamped cosine correlation, `[Hq, Wq, Hs, Ws]` flattened.
pub fn cosine_correlation(q: &[f64], s: &[f64], c: usize, (hq, wq): (usize, usize), (hs, ws): (usize, usize)) -> Vec<f64> {
    let (nq, ns) = (hq * wq, hs * ws);
    let mut out = Vec::with_capacity(nq * ns);
    for p in 0..nq {
        for r in 0..ns {
            let (mut dot, mut a2, mut b2) = (0.0, 0.0, 0.0);
            for ch in 0..c {
                let (a, b) = (q[ch * nq + p], s[ch * ns + r]);
                dot += a * b;
                a2 += a * a;
                b2 += b * b;
            }
            let v = dot / ((a2.sqrt() + 1e-8) * (b2.sqrt() + 1e-8));
            out.push(if v > 0.0 { v } else { 0.0 });
        }
    }
    out
}

/// `[k*k, h, w]` local self-similarity with zero padding, row-major offsets.
pub fn self_similarity(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let t = (k / 2) as i64;
    let mut out = vec![0.0; k * k * h * w];
    let mut d = 0;
    for di in -t..=t {
        for dj in -t..=t {
            for i in 0..h as i64 {
                for j in 0..w as i64 {
                    let (ni, nj) = (i + di, j + dj);
                    if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                        continue;
                    }
                    let mut s = 0.0;
                    for ch in 0..c {
                        s += x[(ch * h + ni as usize) * w + nj as usize] * x[(ch * h + i as usize) * w + j as usize];
                    }
                    out[(d * h + i as usize) * w + j as usize] = s;
                }
            }
            d += 1;
        }
    }
    out
}

/// 2D convolution of `[cin, h, w]` by `[cout, cin, kh, kw]`; returns the
/// output and its `(h, w)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    wt: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, (usize, usize)) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = bias.map_or(0.0, |b| b[o]);
                for i in 0..cin {
                    for a in 0..kh {
                        for b in 0..kw {
                            let iy = (y * stride + a) as i64 - pad as i64;
                            let ix = (xx * stride + b) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            s += wt[((o * cin + i) * kh + a) * kw + b] * x[(i * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = s;
            }
        }
    }
    (out, (oh, ow))
}

/// Half-pixel bilinear resize of `[c, h, w, inner]` to `[c, oh, ow, inner]`.
pub fn bilinear(x: &[f64], c: usize, (h, w): (usize, usize), (oh, ow): (usize, usize), inner: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, src - lo as f64)
    };
    let mut out = Vec::with_capacity(c * oh * ow * inner);
    for ch in 0..c {
        for y in 0..oh {
            let (y0, y1, fy) = coord(y, h, oh);
            for xx in 0..ow {
                let (x0, x1, fx) = coord(xx, w, ow);
                for t in 0..inner {
                    let v = |yy: usize, xi: usize| x[((ch * h + yy) * w + xi) * inner + t];
                    let top = v(y0, x0) + fx * (v(y0, x1) - v(y0, x0));
                    let bot = v(y1, x0) + fx * (v(y1, x1) - v(y1, x0));
                    out.push(top + fy * (bot - top));
                }
            }
        }
    }
    out
}

/// Group normalization of `[c, inner]` with per-channel affine.
pub fn group_norm(x: &[f64], c: usize, gamma: &[f64], beta: &[f64], groups: usize) -> Vec<f64> {
    let inner = x.len() / c;
    let cpg = c / groups;
    let mut out = vec![0.0; x.len()];
    for gi in 0..groups {
        let idx: Vec<usize> = (gi * cpg * inner..(gi + 1) * cpg * inner).collect();
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| x[i]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (x[i] - mean) * (x[i] - mean)).sum::<f64>() / n;
        for &i in &idx {
            let ch = i / inner;
            out[i] = gamma[ch] * (x[i] - mean) / (var + 1e-5).sqrt() + beta[ch];
        }
    }
    out
}

/// Dense 4D convolution of `[cin, hq, wq, hs, ws]` by
/// `[cout, cin, k, k, k, k]`. Returns output and its dims.
pub fn conv4d_dims(
    x: &[f64],
    xd: [usize; 5],
    wt: &[f64],
    [cout, k]: [usize; 2],
    (sq, ss): (usize, usize),
    (pq, ps): (usize, usize),
) -> (Vec<f64>, [usize; 5]) {
    let [cin, hq, wq, hs, ws] = xd;
    let o = |n: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
    let od = [cout, o(hq, sq, pq), o(wq, sq, pq), o(hs, ss, ps), o(ws, ss, ps)];
    let at = |i: usize, a: i64, b: i64, c: i64, d: i64| -> f64 {
        if a < 0 || b < 0 || c < 0 || d < 0 || a >= hq as i64 || b >= wq as i64 || c >= hs as i64 || d >= ws as i64 {
            return 0.0;
        }
        x[(((i * hq + a as usize) * wq + b as usize) * hs + c as usize) * ws + d as usize]
    };
    let mut out = Vec::new();
    for co in 0..cout {
        for y1 in 0..od[1] {
            for x1 in 0..od[2] {
                for y2 in 0..od[3] {
                    for x2 in 0..od[4] {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for a in 0..k {
                                for b in 0..k {
                                    for c in 0..k {
                                        for d in 0..k {
                                            let wv = wt[((((co * cin + ci) * k + a) * k + b) * k + c) * k + d];
                                            s += wv
                                                * at(
                                                    ci,
                                                    (y1 * sq + a) as i64 - pq as i64,
                                                    (x1 * sq + b) as i64 - pq as i64,
                                                    (y2 * ss + c) as i64 - ps as i64,
                                                    (x2 * ss + d) as i64 - ps as i64,
                                                );
                                        }
                                    }
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
    }
    (out, od)
}

pub fn conv4d(x: &[f64], xd: [usize; 5], wt: &[f64], ck: [usize; 2], strides: (usize, usize), pads: (usize, usize)) -> Vec<f64> {
    conv4d_dims(x, xd, wt, ck, strides, pads).0
}

/// Dense `[cout, cin, k, k, k, k]` kernel equal to a center-pivot pair; the
/// doubly centered tap comes from `wq` only.
pub fn sparsified(wq: &[f64], ws: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let c = k / 2;
    let mut full = vec![0.0; cout * cin * k * k * k * k];
    for o in 0..cout {
        for i in 0..cin {
            let base = (o * cin + i) * k * k * k * k;
            for a in 0..k {
                for b in 0..k {
                    let w2 = (o * cin + i) * k * k + a * k + b;
                    full[base + ((a * k + b) * k + c) * k + c] += wq[w2];
                    if a != c || b != c {
                        full[base + ((c * k + c) * k + a) * k + b] += ws[w2];
                    }
                }
            }
        }
    }
    full
}

/// Enhancement weights of one level as flat buffers.
#[derive(Clone, Debug)]
pub struct FemWeights {
    pub proj_q: Vec<f64>,
    pub proj_k: Vec<f64>,
    pub proj_v: Vec<f64>,
    pub trans_q: Vec<f64>,
    pub trans_s: Vec<f64>,
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Vec<f64>,
    pub mlp_b2: Vec<f64>,
    pub c_l: usize,
    pub c_k: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionOracle {
    /// `[n, n]`, row = support position, normalised over query positions.
    pub aq: Vec<f64>,
    pub a_s: Vec<f64>,
    pub pq: Vec<f64>,
    pub ps: Vec<f64>,
}

/// Cross-image attention over `n` positions.
pub fn cross_image_attention(fs: &[f64], fq: &[f64], w: &FemWeights, n: usize) -> AttentionOracle {
    let (cl, ck) = (w.c_l, w.c_k);
    let proj = |m: &[f64], f: &[f64], k: usize, pos: usize| -> f64 { (0..cl).map(|c| m[k * cl + c] * f[c * n + pos]).sum() };
    let mut logits = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            logits[j * n + i] = (0..ck).map(|k| proj(&w.proj_k, fs, k, j) * proj(&w.proj_q, fq, k, i)).sum();
        }
    }
    let aq = softmax_rows(&logits, n);
    let mut a_s = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            a_s[i * n + j] = aq[j * n + i];
        }
    }
    let mut pq = vec![0.0; cl * n];
    let mut ps = vec![0.0; cl * n];
    for c in 0..cl {
        for pos in 0..n {
            let (mut sq, mut ss) = (0.0, 0.0);
            for k in 0..ck {
                let mut agg_q = 0.0;
                let mut agg_s = 0.0;
                for other in 0..n {
                    agg_q += aq[pos * n + other] * proj(&w.proj_v, fq, k, other);
                    agg_s += aq[other * n + pos] * proj(&w.proj_v, fs, k, other);
                }
                sq += w.trans_q[c * ck + k] * agg_q;
                ss += w.trans_s[c * ck + k] * agg_s;
            }
            pq[c * n + pos] = sq;
            ps[c * n + pos] = ss;
        }
    }
    AttentionOracle { aq, a_s, pq, ps }
}

/// `sigmoid(W2 relu(W1 gap(f) + b1) + b2)[c] * p + f`
#[allow(clippy::too_many_arguments)]
pub fn channel_attention(f: &[f64], p: &[f64], w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], c: usize, hidden: usize) -> Vec<f64> {
    let n = f.len() / c;
    let gap: Vec<f64> = (0..c).map(|ch| f[ch * n..(ch + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let h: Vec<f64> = (0..hidden)
        .map(|r| (b1[r] + (0..c).map(|ch| w1[r * c + ch] * gap[ch]).sum::<f64>()).max(0.0))
        .collect();
    let mut out = vec![0.0; f.len()];
    for ch in 0..c {
        let gate = sigmoid(b2[ch] + (0..hidden).map(|r| w2[ch * hidden + r] * h[r]).sum::<f64>());
        for i in 0..n {
            out[ch * n + i] = gate * p[ch * n + i] + f[ch * n + i];
        }
    }
    out
}

/// `(E^s, E^q)`
pub fn fem_forward(fs: &[f64], fq: &[f64], w: &FemWeights, n: usize) -> (Vec<f64>, Vec<f64>) {
    let att = cross_image_attention(fs, fq, w, n);
    let ca = |f: &[f64], p: &[f64]| channel_attention(f, p, &w.mlp_w1, &w.mlp_b1, &w.mlp_w2, &w.mlp_b2, w.c_l, w.hidden);
    (ca(fs, &att.ps), ca(fq, &att.pq))
}

/// Multi-scale context: self-similarity followed by stride-2 conv + ReLU
/// scales, each upsampled back and concatenated. `convs[i]` is
/// `[16, cin_i, 3, 3]`.
pub fn multi_scale_guidance(ss: &[f64], cin: usize, h: usize, w: usize, convs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = ss.to_vec();
    let mut cur = ss.to_vec();
    let (mut c, mut ch, mut cw) = (cin, h, w);
    for wt in convs {
        let cout = wt.len() / (c * 9);
        let (y, (oh, ow)) = conv2d(&cur, (c, ch, cw), wt, (cout, 3, 3), None, 2, 1);
        let y: Vec<f64> = y.into_iter().map(|v| v.max(0.0)).collect();
        out.extend(bilinear(&y, cout, (oh, ow), (h, w), 1));
        cur = y;
        c = cout;
        ch = oh;
        cw = ow;
    }
    out
}

/// One-channel global-context correlation of two `[c, h, w]` maps.
pub fn global_context(eq: &[f64], es: &[f64], c: usize, h: usize, w: usize, k: usize, convs: &[Vec<f64>]) -> Vec<f64> {
    let msq = multi_scale_guidance(&self_similarity(eq, c, h, w, k), k * k, h, w, convs);
    let mss = multi_scale_guidance(&self_similarity(es, c, h, w, k), k * k, h, w, convs);
    let cm = msq.len() / (h * w);
    cosine_correlation(&msq, &mss, cm, (h, w), (h, w))
}

/// One center-pivot layer (flat buffers).
#[derive(Clone, Debug)]
pub struct CpWeights {
    pub wq: Vec<f64>,
    pub ws: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub cin: usize,
    pub cout: usize,
}

#[derive(Clone, Debug)]
pub struct EncoderWeights {
    pub squeeze: [Vec<CpWeights>; 3],
    /// Level-1 then level-0 projections, `[C_fine, C_coarse]`.
    pub proj: [Vec<f64>; 2],
    pub mix: [CpWeights; 2],
    pub norm: bool,
}

fn cp_layer(x: &[f64], xd: [usize; 5], l: &CpWeights, stride_s: usize, norm: bool) -> (Vec<f64>, [usize; 5]) {
    let full = sparsified(&l.wq, &l.ws, l.cout, l.cin, 3);
    let (y, od) = conv4d_dims(x, xd, &full, [l.cout, 3], (1, stride_s), (1, 1));
    let y = if norm { group_norm(&y, l.cout, &l.gamma, &l.beta, 4) } else { y };
    (y.into_iter().map(|v| v.max(0.0)).collect(), od)
}

/// Squeeze block: stride 2 in support dims while they exceed `target`.
pub fn squeeze_block(x: &[f64], xd: [usize; 5], layers: &[CpWeights], target: (usize, usize), norm: bool) -> (Vec<f64>, [usize; 5]) {
    let (mut cur, mut d) = (x.to_vec(), xd);
    for l in layers {
        let stride = if d[3] > target.0 && d[4] > target.1 { 2 } else { 1 };
        (cur, d) = cp_layer(&cur, d, l, stride, norm);
    }
    (cur, d)
}

/// Pyramid (fine to coarse) to `[C, Hq, Wq]`.
pub fn encode_pyramid(levels: [(&[f64], [usize; 5]); 3], w: &EncoderWeights) -> (Vec<f64>, [usize; 3]) {
    let target = (levels[2].1[3], levels[2].1[4]);
    let sq: Vec<(Vec<f64>, [usize; 5])> = (0..3)
        .map(|l| squeeze_block(levels[l].0, levels[l].1, &w.squeeze[l], target, w.norm))
        .collect();
    let (mut cur, mut cd) = sq[2].clone();
    for (i, fine) in [1usize, 0].into_iter().enumerate() {
        let (f, fd) = &sq[fine];
        let inner = cd[1] * cd[2] * cd[3] * cd[4];
        let projected = matmul(&w.proj[i], &cur, fd[0], cd[0], inner);
        let up = bilinear(&projected, fd[0], (cd[1], cd[2]), (fd[1], fd[2]), cd[3] * cd[4]);
        let sum: Vec<f64> = f.iter().zip(&up).map(|(a, b)| a + b).collect();
        (cur, cd) = cp_layer(&sum, *fd, &w.mix[i], 1, w.norm);
    }
    let plane = cd[3] * cd[4];
    let out = cur.chunks(plane).map(|ch| ch.iter().sum::<f64>() / plane as f64).collect();
    (out, [cd[0], cd[1], cd[2]])
}

/// Decoder weights as flat buffers; `c` counts the prior channel.
#[derive(Clone, Debug)]
pub struct DecoderWeights {
    pub res3: Vec<f64>,
    pub res5: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    pub c: usize,
}

/// `[2, oh, ow]` probabilities from context `[c - 1, h, w]` and prior `[1, h, w]`.
pub fn residual_decode(ctx: &[f64], prior: &[f64], h: usize, w: usize, wt: &DecoderWeights, (oh, ow): (usize, usize)) -> Vec<f64> {
    let c = wt.c;
    let mut x: Vec<f64> = ctx.iter().chain(prior).cloned().collect();
    for (k, kw, pad) in [(&wt.res3, 3, 1), (&wt.res5, 5, 2)] {
        let (y, _) = conv2d(&x, (c, h, w), k, (c, kw, kw), None, 1, pad);
        x = x.iter().zip(&y).map(|(a, b)| a + b.max(0.0)).collect();
    }
    let (logits, _) = conv2d(&x, (c, h, w), &wt.head_w, (2, 3, 3), Some(&wt.head_b), 1, 1);
    let up = bilinear(&logits, 2, (h, w), (oh, ow), 1);
    let n = oh * ow;
    let mut probs = vec![0.0; 2 * n];
    for i in 0..n {
        let (a, b) = (up[i], up[n + i]);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        probs[i] = ea / (ea + eb);
        probs[n + i] = eb / (ea + eb);
    }
    probs
}

/// `-sum log max(P[target], 1e-12)` over a `[2, n]` probability map.
pub fn cross_entropy(probs: &[f64], target: &[u8]) -> f64 {
    let n = target.len();
    let mut loss = 0.0;
    for (i, &t) in target.iter().enumerate() {
        for c in 0..2 {
            let onehot = if t as usize == c { 1.0 } else { 0.0 };
            loss -= onehot * probs[c * n + i].max(1e-12).ln();
        }
    }
    loss
}

/// `(mIoU, FB-IoU)` over `(class, pred, gt)` triples by counting pixels.
/// Classes with an empty union are left out of the mean.
pub fn metrics(samples: &[(u32, Vec<u8>, Vec<u8>)]) -> Option<(f64, f64)> {
    let mut classes: Vec<u32> = samples.iter().map(|s| s.0).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut ious = Vec::new();
    for &c in &classes {
        let (mut tp, mut fp, mut fne) = (0u64, 0u64, 0u64);
        for (_, p, g) in samples.iter().filter(|s| s.0 == c) {
            for (&pv, &gv) in p.iter().zip(g) {
                match (pv, gv) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fne += 1,
                    _ => {}
                }
            }
        }
        if tp + fp + fne > 0 {
            ious.push(tp as f64 / (tp + fp + fne) as f64);
        }
    }
    if ious.is_empty() {
        return None;
    }
    let miou = ious.iter().sum::<f64>() / ious.len() as f64;
    let mut fb = Vec::new();
    for label in [1u8, 0] {
        let (mut inter, mut uni) = (0u64, 0u64);
        for (_, p, g) in samples {
            for (&pv, &gv) in p.iter().zip(g) {
                if pv == label && gv == label {
                    inter += 1;
                }
                if pv == label || gv == label {
                    uni += 1;
                }
            }
        }
        if uni > 0 {
            fb.push(inter as f64 / uni as f64);
        }
    }
    Some((miou, fb.iter().sum::<f64>() / fb.len() as f64))
}

/// Mean of the maps thresholded strictly above `tau`.
pub fn kshot_fuse(maps: &[Vec<f64>], tau: f64) -> Vec<u8> {
    let n = maps[0].len();
    (0..n)
        .map(|i| {
            let s: f64 = maps.iter().map(|m| m[i]).sum::<f64>() / maps.len() as f64;
            (s > tau) as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_diff_basics() {
        assert_eq!(rel_diff(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rel_diff(&[1.0, 2.2], &[1.0, 2.0]) - 0.1).abs() < 1e-12);
        assert_eq!(rel_diff(&[0.5], &[0.0]), 0.5);
    }

    #[test]
    fn bilinear_closed_form() {
        let y = bilinear(&[1.0, 2.0, 3.0, 4.0], 1, (2, 2), (4, 4), 1);
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (i, sy) in coords.iter().enumerate() {
            for (j, sx) in coords.iter().enumerate() {
                assert!((y[i * 4 + j] - (1.0 + sx + 2.0 * sy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparsified_kernel_has_center_cross_only() {
        let wq = vec![1.0; 9];
        let ws = vec![2.0; 9];
        let full = sparsified(&wq, &ws, 1, 1, 3);
        let nonzero = full.iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 17);
        assert_eq!(full[((4) * 3 + 1) * 3 + 1], 1.0);
    }

    #[test]
    fn metrics_hand_cases() {
        let gt = vec![1, 1, 0, 0];
        assert_eq!(metrics(&[(0, gt.clone(), gt.clone())]), Some((1.0, 1.0)));
        assert_eq!(metrics(&[(0, vec![0, 0, 1, 1], gt.clone())]), Some((0.0, 0.0)));
        assert_eq!(metrics(&[(0, vec![0; 4], vec![0; 4])]), None);
    }
}
