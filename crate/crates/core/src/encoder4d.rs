//! 4D convolutional encoder over correlation pyramids.
//!
//! Correlations are `[C, Hq, Wq, Hs, Ws]`. A center-pivot convolution applies
//! one 2D kernel over query offsets with the support offset pinned to the
//! kernel center, plus a second 2D kernel over support offsets with the query
//! offset pinned. The fully centered tap belongs to the query kernel only.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::autograd::{Bindings, Graph, Var};
use crate::correlation::{Correlation4D, CorrelationPyramid};
use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, SeededRng};
use crate::tensor::{ParamId, ParamSet, Real, Tensor};

/// Group count of every normalization layer in the encoder.
pub const GN_GROUPS: usize = 4;
/// Spatial kernel extent of every encoder convolution.
pub const KERNEL: usize = 3;
/// Default channel widths, fine to coarse.
pub const DEFAULT_WIDTHS: [usize; 3] = [16, 32, 64];

static CENTER_PIVOT_MACS: AtomicU64 = AtomicU64::new(0);
static FULL_MACS: AtomicU64 = AtomicU64::new(0);

/// Multiply-accumulates performed by center-pivot and full 4D kernels since
/// the last [`reset_mac_counters`].
pub fn mac_counters() -> (u64, u64) {
    (CENTER_PIVOT_MACS.load(Ordering::Relaxed), FULL_MACS.load(Ordering::Relaxed))
}

pub fn reset_mac_counters() {
    CENTER_PIVOT_MACS.store(0, Ordering::Relaxed);
    FULL_MACS.store(0, Ordering::Relaxed);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv4dSpec {
    pub stride_q: usize,
    pub stride_s: usize,
    pub pad_q: usize,
    pub pad_s: usize,
}

impl Conv4dSpec {
    /// Stride 1 in query dims, `stride_s` in support dims, same-padding for
    /// an odd kernel of extent `k`.
    pub fn same(k: usize, stride_s: usize) -> Self {
        Self {
            stride_q: 1,
            stride_s,
            pad_q: k / 2,
            pad_s: k / 2,
        }
    }
}

impl Default for Conv4dSpec {
    fn default() -> Self {
        Self::same(KERNEL, 1)
    }
}

struct Geom {
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    inp: [usize; 4],
    out: [usize; 4],
    spec: Conv4dSpec,
}

fn out_len(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::validation("4D convolution stride must be positive"));
    }
    if n + 2 * pad < k {
        return Err(Error::shape(format!(
            "kernel extent {k} exceeds padded input extent {}",
            n + 2 * pad
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

impl Geom {
    fn new(xd: &[usize], cout: usize, wcin: usize, kh: usize, kw: usize, spec: Conv4dSpec) -> Result<Self> {
        let &[cin, hq, wq, hs, ws] = xd else {
            return Err(Error::shape(format!("4D convolution input must be rank 5, got {xd:?}")));
        };
        if wcin != cin {
            return Err(Error::shape(format!(
                "kernel expects {wcin} input channels, correlation has {cin}"
            )));
        }
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::validation(format!("4D kernel extents must be odd, got {kh}x{kw}")));
        }
        let out = [
            out_len(hq, kh, spec.stride_q, spec.pad_q)?,
            out_len(wq, kw, spec.stride_q, spec.pad_q)?,
            out_len(hs, kh, spec.stride_s, spec.pad_s)?,
            out_len(ws, kw, spec.stride_s, spec.pad_s)?,
        ];
        Ok(Self {
            cin,
            cout,
            kh,
            kw,
            inp: [hq, wq, hs, ws],
            out,
            spec,
        })
    }

    fn out_dims(&self) -> [usize; 5] {
        [self.cout, self.out[0], self.out[1], self.out[2], self.out[3]]
    }

    fn out_plane(&self) -> usize {
        self.out.iter().product()
    }

    fn x_index(&self, ci: usize, qi: usize, qj: usize, si: usize, sj: usize) -> usize {
        let [_, wq, hs, ws] = self.inp;
        (((ci * self.inp[0] + qi) * wq + qj) * hs + si) * ws + sj
    }

    /// Input coordinate hit by tap `t` of an output coordinate, if in bounds.
    fn src(o: usize, t: usize, stride: usize, pad: usize, n: usize) -> Option<usize> {
        (o * stride + t).checked_sub(pad).filter(|&v| v < n)
    }

    /// Tap tables of the query and support planes.
    fn plan(&self) -> CpPlan {
        let s = self.spec;
        let (kh, kw) = (self.kh, self.kw);
        let [hq, wq, hs, ws] = self.inp;
        let [ohq, owq, ohs, ows] = self.out;
        CpPlan {
            q: tap_pairs((hq, wq), (ohq, owq), (kh, kw), s.stride_q, s.pad_q),
            s: tap_pairs((hs, ws), (ohs, ows), (kh, kw), s.stride_s, s.pad_s),
            center: (kh / 2) * kw + kw / 2,
            in_q: hq * wq,
            in_s: hs * ws,
            out_q: ohq * owq,
            out_s: ohs * ows,
        }
    }
}

/// For every kernel tap, the in-bounds `(output, input)` pairs of flattened
/// plane positions.
fn tap_pairs(
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<Vec<(usize, usize)>> {
    let mut taps = Vec::with_capacity(kh * kw);
    for a in 0..kh {
        for b in 0..kw {
            let mut pairs = Vec::new();
            for oi in 0..oh {
                let Some(i) = Geom::src(oi, a, stride, pad, h) else { continue };
                for oj in 0..ow {
                    let Some(j) = Geom::src(oj, b, stride, pad, w) else { continue };
                    pairs.push((oi * ow + oj, i * w + j));
                }
            }
            taps.push(pairs);
        }
    }
    taps
}

/// Query-kernel taps pair every query tap with the pinned support center;
/// support-kernel taps pair the pinned query center with every support tap
/// except the center itself.
struct CpPlan {
    q: Vec<Vec<(usize, usize)>>,
    s: Vec<Vec<(usize, usize)>>,
    center: usize,
    in_q: usize,
    in_s: usize,
    out_q: usize,
    out_s: usize,
}

impl CpPlan {
    fn taps(&self) -> usize {
        self.q.len()
    }

    /// `(query pairs, support pairs, from_query_kernel)` blocks of tap `t`.
    fn blocks(&self, t: usize) -> impl Iterator<Item = (&[(usize, usize)], &[(usize, usize)], bool)> {
        let c = self.center;
        let q = Some((self.q[t].as_slice(), self.s[c].as_slice(), true));
        let s = (t != c).then(|| (self.q[c].as_slice(), self.s[t].as_slice(), false));
        q.into_iter().chain(s)
    }

    fn macs_per_channel_pair(&self) -> u64 {
        (0..self.taps())
            .flat_map(|t| self.blocks(t))
            .map(|(qp, sp, _)| (qp.len() * sp.len()) as u64)
            .sum()
    }
}

fn weight_dims<T: Real>(w: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *w.dims() {
        [co, ci, kh, kw] => Ok((co, ci, kh, kw)),
        ref d => Err(Error::shape(format!("center-pivot weights must be [Cout, Cin, kh, kw], got {d:?}"))),
    }
}

fn cp_geom<T: Real>(x: &Tensor<T>, wq: &Tensor<T>, ws: &Tensor<T>, spec: Conv4dSpec) -> Result<Geom> {
    if wq.dims() != ws.dims() {
        return Err(Error::shape(format!(
            "query kernel {:?} and support kernel {:?} differ",
            wq.dims(),
            ws.dims()
        )));
    }
    let (co, ci, kh, kw) = weight_dims(wq)?;
    Geom::new(x.dims(), co, ci, kh, kw, spec)
}

/// Forward center-pivot convolution; also returns the multiply count.
pub fn center_pivot_kernel<T: Real>(
    x: &Tensor<T>,
    wq: &Tensor<T>,
    ws: &Tensor<T>,
    spec: Conv4dSpec,
) -> Result<(Tensor<T>, u64)> {
    let geom = cp_geom(x, wq, ws, spec)?;
    let plan = geom.plan();
    let xd = x.to_f64_vec();
    let (wqd, wsd) = (wq.to_f64_vec(), ws.to_f64_vec());
    let (in_plane, out_plane) = (plan.in_q * plan.in_s, plan.out_q * plan.out_s);
    let mut acc = vec![0.0f64; geom.cout * out_plane];
    for co in 0..geom.cout {
        let oc = &mut acc[co * out_plane..(co + 1) * out_plane];
        for ci in 0..geom.cin {
            let xc = &xd[ci * in_plane..(ci + 1) * in_plane];
            let wbase = (co * geom.cin + ci) * plan.taps();
            for t in 0..plan.taps() {
                for (qp, sp, from_q) in plan.blocks(t) {
                    let w = if from_q { wqd[wbase + t] } else { wsd[wbase + t] };
                    for &(oq, iq) in qp {
                        let orow = &mut oc[oq * plan.out_s..(oq + 1) * plan.out_s];
                        let xrow = &xc[iq * plan.in_s..(iq + 1) * plan.in_s];
                        for &(os, is) in sp {
                            orow[os] += w * xrow[is];
                        }
                    }
                }
            }
        }
    }
    let macs = plan.macs_per_channel_pair() * (geom.cout * geom.cin) as u64;
    CENTER_PIVOT_MACS.fetch_add(macs, Ordering::Relaxed);
    let out = Tensor::new(geom.out_dims(), acc.into_iter().map(T::from_f64).collect())?;
    Ok((out, macs))
}

/// Gradients of [`center_pivot_kernel`]: `(d/dx if requested, d/dwq, d/dws)`.
pub fn center_pivot_backward<T: Real>(
    x: &Tensor<T>,
    wq: &Tensor<T>,
    ws: &Tensor<T>,
    gy: &Tensor<T>,
    spec: Conv4dSpec,
    need_gx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let geom = cp_geom(x, wq, ws, spec)?;
    if gy.dims() != geom.out_dims() {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match {:?}",
            gy.dims(),
            geom.out_dims()
        )));
    }
    let plan = geom.plan();
    let xd = x.to_f64_vec();
    let gd = gy.to_f64_vec();
    let (wqd, wsd) = (wq.to_f64_vec(), ws.to_f64_vec());
    let mut gwq = vec![0.0f64; wq.len()];
    let mut gws = vec![0.0f64; ws.len()];
    let mut gx = if need_gx { vec![0.0f64; x.len()] } else { Vec::new() };
    let (in_plane, out_plane) = (plan.in_q * plan.in_s, plan.out_q * plan.out_s);
    for co in 0..geom.cout {
        let gc = &gd[co * out_plane..(co + 1) * out_plane];
        for ci in 0..geom.cin {
            let xc = &xd[ci * in_plane..(ci + 1) * in_plane];
            let wbase = (co * geom.cin + ci) * plan.taps();
            for t in 0..plan.taps() {
                for (qp, sp, from_q) in plan.blocks(t) {
                    let w = if from_q { wqd[wbase + t] } else { wsd[wbase + t] };
                    let mut gw = 0.0;
                    for &(oq, iq) in qp {
                        let grow = &gc[oq * plan.out_s..(oq + 1) * plan.out_s];
                        let xrow = &xc[iq * plan.in_s..(iq + 1) * plan.in_s];
                        for &(os, is) in sp {
                            gw += grow[os] * xrow[is];
                        }
                        if need_gx {
                            let off = ci * in_plane + iq * plan.in_s;
                            let gxrow = &mut gx[off..off + plan.in_s];
                            for &(os, is) in sp {
                                gxrow[is] += w * grow[os];
                            }
                        }
                    }
                    if from_q {
                        gwq[wbase + t] += gw;
                    } else {
                        gws[wbase + t] += gw;
                    }
                }
            }
        }
    }
    let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect::<Vec<T>>();
    let gx = if need_gx { Some(Tensor::new(x.dims(), cast(gx))?) } else { None };
    Ok((gx, Tensor::new(wq.dims(), cast(gwq))?, Tensor::new(ws.dims(), cast(gws))?))
}

/// A query kernel and a support kernel of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterPivotKernel<T = f32> {
    pub wq: Tensor<T>,
    pub ws: Tensor<T>,
    pub spec: Conv4dSpec,
}

impl<T: Real> CenterPivotKernel<T> {
    /// Equivalent dense `[Cout, Cin, kh, kw, kh, kw]` kernel.
    pub fn sparsify(&self) -> Result<Tensor<T>> {
        let (co, ci, kh, kw) = weight_dims(&self.wq)?;
        if self.ws.dims() != self.wq.dims() {
            return Err(Error::shape("query and support kernels differ in shape"));
        }
        let (ch, cw) = (kh / 2, kw / 2);
        let mut full = Tensor::zeros([co, ci, kh, kw, kh, kw]);
        for o in 0..co {
            for i in 0..ci {
                for a in 0..kh {
                    for b in 0..kw {
                        full.set(&[o, i, a, b, ch, cw], self.wq.get(&[o, i, a, b]));
                        if (a, b) != (ch, cw) {
                            full.set(&[o, i, ch, cw, a, b], self.ws.get(&[o, i, a, b]));
                        }
                    }
                }
            }
        }
        Ok(full)
    }
}

pub fn center_pivot_conv4d<T: Real>(x: &Correlation4D<T>, kernel: &CenterPivotKernel<T>) -> Result<Correlation4D<T>> {
    let (y, _) = center_pivot_kernel(x.tensor(), &kernel.wq, &kernel.ws, kernel.spec)?;
    Correlation4D::new(y)
}

/// Direct dense 4D convolution with zero padding.
pub fn full_conv4d<T: Real>(x: &Correlation4D<T>, weights: &Tensor<T>, spec: Conv4dSpec) -> Result<Correlation4D<T>> {
    let &[co, ci, kh, kw, kh2, kw2] = weights.dims() else {
        return Err(Error::shape(format!(
            "full 4D weights must be [Cout, Cin, kh, kw, kh, kw], got {:?}",
            weights.dims()
        )));
    };
    if (kh, kw) != (kh2, kw2) {
        return Err(Error::shape("query and support kernel extents must agree"));
    }
    let geom = Geom::new(x.tensor().dims(), co, ci, kh, kw, spec)?;
    let [hq, wq, hs, ws] = geom.inp;
    let [ohq, owq, ohs, ows] = geom.out;
    let xd = x.tensor().to_f64_vec();
    let wd = weights.to_f64_vec();
    let mut out = Vec::with_capacity(co * geom.out_plane());
    let mut macs = 0u64;
    for o in 0..co {
        for oqi in 0..ohq {
            for oqj in 0..owq {
                for osi in 0..ohs {
                    for osj in 0..ows {
                        let mut acc = 0.0;
                        for i in 0..ci {
                            for a in 0..kh {
                                let Some(qi) = Geom::src(oqi, a, spec.stride_q, spec.pad_q, hq) else { continue };
                                for b in 0..kw {
                                    let Some(qj) = Geom::src(oqj, b, spec.stride_q, spec.pad_q, wq) else { continue };
                                    for c in 0..kh {
                                        let Some(si) = Geom::src(osi, c, spec.stride_s, spec.pad_s, hs) else { continue };
                                        for d in 0..kw {
                                            let Some(sj) = Geom::src(osj, d, spec.stride_s, spec.pad_s, ws) else { continue };
                                            let wi = ((((o * ci + i) * kh + a) * kw + b) * kh + c) * kw + d;
                                            acc += wd[wi] * xd[geom.x_index(i, qi, qj, si, sj)];
                                            macs += 1;
                                        }
                                    }
                                }
                            }
                        }
                        out.push(T::from_f64(acc));
                    }
                }
            }
        }
    }
    FULL_MACS.fetch_add(macs, Ordering::Relaxed);
    Correlation4D::new(Tensor::new(geom.out_dims(), out)?)
}

/// Largest `|center_pivot - full(sparsified)|` over `trials` seeded inputs
/// with 1-2 channels, spatial extents 3-6 and support stride 1 or 2. The
/// first trial always uses the largest input, `[2, 6, 6, 6, 6]`.
pub fn sparsified_equivalence(seed: u64, trials: usize) -> Result<f64> {
    use rand::Rng;
    let mut rng = crate::init::seeded(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut dims = [2, 6, 6, 6, 6];
        if trial > 0 {
            dims[0] = rng.gen_range(1..=2);
            for d in &mut dims[1..] {
                *d = rng.gen_range(3..=6);
            }
        }
        let cout = rng.gen_range(1..=3);
        let x = Correlation4D::new(crate::init::uniform::<f32>(&dims, 1.0, &mut rng))?;
        let k = CenterPivotKernel {
            wq: crate::init::uniform(&[cout, dims[0], KERNEL, KERNEL], 1.0, &mut rng),
            ws: crate::init::uniform(&[cout, dims[0], KERNEL, KERNEL], 1.0, &mut rng),
            spec: Conv4dSpec::same(KERNEL, rng.gen_range(1..=2)),
        };
        let cp = center_pivot_conv4d(&x, &k)?;
        let full = full_conv4d(&x, &k.sparsify()?, k.spec)?;
        worst = worst.max(cp.tensor().max_abs_diff(full.tensor()));
    }
    Ok(worst)
}

/// Center-pivot convolution followed by optional group norm and ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CpLayer {
    pub wq: ParamId,
    pub ws: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl CpLayer {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, prefix: &str, cin: usize, cout: usize, rng: &mut SeededRng) -> Self {
        let fan_in = cin * (2 * KERNEL * KERNEL - 1);
        let wq = ps.add(format!("{prefix}.wq"), fan_in_uniform(&[cout, cin, KERNEL, KERNEL], fan_in, rng));
        let mut ws_init = fan_in_uniform::<T>(&[cout, cin, KERNEL, KERNEL], fan_in, rng);
        for o in 0..cout {
            for i in 0..cin {
                ws_init.set(&[o, i, KERNEL / 2, KERNEL / 2], T::zero());
            }
        }
        let ws = ps.add(format!("{prefix}.ws"), ws_init);
        let gamma = ps.add(format!("{prefix}.gamma"), Tensor::full([cout], T::one()));
        let beta = ps.add(format!("{prefix}.beta"), Tensor::zeros([cout]));
        Self { wq, ws, gamma, beta }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bindings, x: Var, spec: Conv4dSpec, norm: bool) -> Result<Var> {
        let y = g.center_pivot(x, b.var(self.wq), b.var(self.ws), spec)?;
        let y = if norm {
            g.group_norm(y, b.var(self.gamma), b.var(self.beta), GN_GROUPS)?
        } else {
            y
        };
        Ok(g.relu(y))
    }
}

/// Squeeze block: each layer halves the support dims while they still exceed
/// `target`, then the block must land exactly on `target`.
pub fn squeeze_block_graph<T: Real>(
    g: &mut Graph<T>,
    b: &Bindings,
    layers: &[CpLayer],
    x: Var,
    target: (usize, usize),
    norm: bool,
) -> Result<Var> {
    let mut cur = x;
    for layer in layers {
        let d = g.dims(cur);
        if d.len() != 5 || d[3] < 2 || d[4] < 2 {
            return Err(Error::shape(format!("squeeze block needs support dims >= 2, got {d:?}")));
        }
        let stride = if (d[3], d[4]) != target && d[3] > target.0 && d[4] > target.1 { 2 } else { 1 };
        cur = layer.forward(g, b, cur, Conv4dSpec::same(KERNEL, stride), norm)?;
    }
    let d = g.dims(cur);
    if (d[3], d[4]) != target {
        return Err(Error::shape(format!(
            "squeeze block produced support dims {}x{}, expected {}x{}",
            d[3], d[4], target.0, target.1
        )));
    }
    Ok(cur)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub widths: [usize; 3],
    pub squeeze: [Vec<CpLayer>; 3],
    /// `[C_fine, C_coarse]` channel projections for the fine-from-coarse
    /// merges at levels 1 and 0.
    pub proj: [ParamId; 2],
    pub mix: [CpLayer; 2],
    pub norm: bool,
}

impl EncoderParams {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        in_channels: [usize; 3],
        widths: [usize; 3],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if let Some(w) = widths.iter().find(|&&w| w == 0 || w % GN_GROUPS != 0) {
            return Err(Error::validation(format!(
                "encoder width {w} must be a positive multiple of {GN_GROUPS}"
            )));
        }
        let squeeze = [0, 1, 2].map(|l| {
            vec![
                CpLayer::new(ps, &format!("{prefix}.sq{l}.0"), in_channels[l], widths[l], rng),
                CpLayer::new(ps, &format!("{prefix}.sq{l}.1"), widths[l], widths[l], rng),
            ]
        });
        let proj = [1, 0].map(|l| {
            ps.add(
                format!("{prefix}.proj{l}"),
                fan_in_uniform(&[widths[l], widths[l + 1]], widths[l + 1], rng),
            )
        });
        let mix = [1, 0].map(|l| CpLayer::new(ps, &format!("{prefix}.mix{l}"), widths[l], widths[l], rng));
        Ok(Self {
            widths,
            squeeze,
            proj,
            mix,
            norm: true,
        })
    }

    pub fn output_channels(&self) -> usize {
        self.widths[0]
    }
}

/// 1x1 4D convolution as a matrix product over flattened positions.
fn pointwise<T: Real>(g: &mut Graph<T>, w: Var, x: Var) -> Result<Var> {
    let d = g.dims(x).to_vec();
    let cout = g.dims(w)[0];
    let flat = g.reshape(x, &[d[0], d[1..].iter().product()])?;
    let y = g.matmul(w, flat)?;
    let mut out = d;
    out[0] = cout;
    g.reshape(y, &out)
}

/// Pyramid levels (fine to coarse) to a `[C_enc, Hq, Wq]` query-space map.
pub fn encode_pyramid_graph<T: Real>(g: &mut Graph<T>, b: &Bindings, p: &EncoderParams, levels: [Var; 3]) -> Result<Var> {
    let coarse = g.dims(levels[2]).to_vec();
    if coarse.len() != 5 {
        return Err(Error::shape(format!("pyramid level must be rank 5, got {coarse:?}")));
    }
    let target = (coarse[3], coarse[4]);
    let mut squeezed = Vec::with_capacity(3);
    for (l, &x) in levels.iter().enumerate() {
        squeezed.push(squeeze_block_graph(g, b, &p.squeeze[l], x, target, p.norm)?);
    }
    let mut cur = squeezed[2];
    for (i, fine) in [1usize, 0].into_iter().enumerate() {
        let f = squeezed[fine];
        let fd = g.dims(f).to_vec();
        let proj = pointwise(g, b.var(p.proj[i]), cur)?;
        let up = g.upsample(proj, fd[1], fd[2])?;
        let sum = g.add(f, up)?;
        cur = p.mix[i].forward(g, b, sum, Conv4dSpec::same(KERNEL, 1), p.norm)?;
    }
    g.mean_trailing(cur, 2)
}

pub fn encode_pyramid<T: Real>(pyr: &CorrelationPyramid<T>, params: &EncoderParams, values: &ParamSet<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = g.bind(values);
    let levels = [0, 1, 2].map(|l| g.constant(pyr.levels[l].tensor().clone()));
    let out = encode_pyramid_graph(&mut g, &b, params, levels)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded;
    use crate::testutil::rand_tensor;

    fn corr(dims: [usize; 5], seed: u64) -> Correlation4D<f32> {
        Correlation4D::new(rand_tensor(&dims, seed)).unwrap()
    }

    #[test]
    fn unit_full_kernel_is_identity() {
        let x = corr([1, 3, 2, 3, 2], 1);
        let w = Tensor::full([1, 1, 1, 1, 1, 1], 1.0f32);
        let spec = Conv4dSpec { stride_q: 1, stride_s: 1, pad_q: 0, pad_s: 0 };
        assert_eq!(full_conv4d(&x, &w, spec).unwrap(), x);
        let z = full_conv4d(&x, &Tensor::zeros([2, 1, 3, 3, 3, 3]), Conv4dSpec::default()).unwrap();
        assert!(z.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_matches_nested_loop() {
        let x = corr([1, 4, 4, 4, 4], 2);
        let w = rand_tensor::<f32>(&[2, 1, 3, 3, 3, 3], 3);
        let got = full_conv4d(&x, &w, Conv4dSpec::default()).unwrap();
        let expect = crate::oracles::conv4d(
            &x.tensor().to_f64_vec(),
            [1, 4, 4, 4, 4],
            &w.to_f64_vec(),
            [2, 3],
            (1, 1),
            (1, 1),
        );
        assert!(crate::testutil::rel_err(&got.tensor().to_f64_vec(), &expect) < 1e-6);
    }

    #[test]
    fn center_only_query_weight_is_identity() {
        let x = corr([2, 4, 3, 4, 3], 4);
        let mut wq = Tensor::zeros([2, 2, 3, 3]);
        for c in 0..2 {
            wq.set(&[c, c, 1, 1], 1.0f32);
        }
        let k = CenterPivotKernel { wq, ws: Tensor::zeros([2, 2, 3, 3]), spec: Conv4dSpec::default() };
        assert_eq!(center_pivot_conv4d(&x, &k).unwrap(), x);
    }

    #[test]
    fn center_pivot_equals_sparsified_full() {
        for (seed, dims, stride_s) in [(5u64, [2, 6, 6, 6, 6], 1), (6, [2, 5, 4, 6, 5], 2), (7, [1, 3, 3, 3, 3], 1)] {
            let x = corr(dims, seed);
            let k = CenterPivotKernel {
                wq: rand_tensor(&[3, dims[0], 3, 3], seed + 10),
                ws: rand_tensor(&[3, dims[0], 3, 3], seed + 20),
                spec: Conv4dSpec::same(3, stride_s),
            };
            let cp = center_pivot_conv4d(&x, &k).unwrap();
            let full = full_conv4d(&x, &k.sparsify().unwrap(), k.spec).unwrap();
            assert_eq!(cp.tensor().dims(), full.tensor().dims());
            assert!(cp.tensor().max_abs_diff(full.tensor()) < 1e-5);
        }
    }

    #[test]
    fn multiply_counts_scale_with_kernel_area() {
        let x = corr([1, 5, 5, 5, 5], 8);
        let spec = Conv4dSpec { stride_q: 1, stride_s: 1, pad_q: 0, pad_s: 0 };
        let (_, cp) = center_pivot_kernel(x.tensor(), &rand_tensor(&[1, 1, 3, 3], 1), &rand_tensor(&[1, 1, 3, 3], 2), spec).unwrap();
        // 3^4 output positions without padding.
        assert_eq!(cp, 81 * 17);
        let before = mac_counters().1;
        let k = CenterPivotKernel { wq: rand_tensor(&[1, 1, 3, 3], 1), ws: rand_tensor(&[1, 1, 3, 3], 2), spec };
        full_conv4d(&x, &k.sparsify().unwrap(), spec).unwrap();
        assert!(mac_counters().1 - before >= 81 * 81);
    }

    #[test]
    fn squeeze_block_halves_support() {
        let mut ps = ParamSet::<f32>::new();
        let layer = CpLayer::new(&mut ps, "sq", 2, 4, &mut seeded(1));
        let mut g = Graph::new();
        let b = g.bind(&ps);
        let x = g.constant(rand_tensor(&[2, 8, 8, 8, 8], 2));
        let y = squeeze_block_graph(&mut g, &b, &[layer], x, (4, 4), true).unwrap();
        assert_eq!(g.dims(y), &[4, 8, 8, 4, 4]);
    }

    #[test]
    fn identity_squeeze_subsamples() {
        let mut ps = ParamSet::<f32>::new();
        let layer = CpLayer::new(&mut ps, "sq", 1, 1, &mut seeded(1));
        *ps.get_mut(layer.wq) = Tensor::new([1, 1, 3, 3], vec![0., 0., 0., 0., 1., 0., 0., 0., 0.]).unwrap();
        *ps.get_mut(layer.ws) = Tensor::zeros([1, 1, 3, 3]);
        let xt = rand_tensor::<f32>(&[1, 3, 3, 6, 6], 3).map(f32::abs);
        let mut g = Graph::new();
        let b = g.bind(&ps);
        let x = g.constant(xt.clone());
        let y = squeeze_block_graph(&mut g, &b, &[layer], x, (3, 3), false).unwrap();
        let y = g.value(y);
        for qi in 0..3 {
            for qj in 0..3 {
                for si in 0..3 {
                    for sj in 0..3 {
                        assert_eq!(y.get(&[0, qi, qj, si, sj]), xt.get(&[0, qi, qj, 2 * si, 2 * sj]));
                    }
                }
            }
        }
    }

    fn toy_pyramid(channels: [usize; 3]) -> CorrelationPyramid<f32> {
        let sizes = [8, 4, 2];
        CorrelationPyramid {
            levels: [0, 1, 2].map(|l| {
                let s = sizes[l];
                corr([channels[l], s, s, s, s], 40 + l as u64)
            }),
        }
    }

    #[test]
    fn encoder_output_dims() {
        let mut ps = ParamSet::<f32>::new();
        let p = EncoderParams::new(&mut ps, "enc", [4, 5, 4], [8, 8, 8], &mut seeded(2)).unwrap();
        let out = encode_pyramid(&toy_pyramid([4, 5, 4]), &p, &ps).unwrap();
        assert_eq!(out.dims(), &[8, 8, 8]);
    }

    #[test]
    fn zero_pyramid_gives_zero_output() {
        let mut ps = ParamSet::<f32>::new();
        let p = EncoderParams::new(&mut ps, "enc", [3, 4, 3], DEFAULT_WIDTHS, &mut seeded(2)).unwrap();
        let mut pyr = toy_pyramid([3, 4, 3]);
        for l in &mut pyr.levels {
            *l = Correlation4D::new(Tensor::zeros(l.tensor().dims())).unwrap();
        }
        let out = encode_pyramid(&pyr, &p, &ps).unwrap();
        assert_eq!(out.dims(), &[16, 8, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_widths_rejected() {
        let mut ps = ParamSet::<f32>::new();
        let r = EncoderParams::new(&mut ps, "enc", [1, 1, 1], [6, 8, 8], &mut seeded(2));
        assert!(matches!(r, Err(Error::Validation(_))));
    }
}
