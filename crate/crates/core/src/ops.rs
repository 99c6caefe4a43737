//! Forward and backward kernels for the dense operations used by every
//! model component.
//!
//! Storage stays in `T` but all reductions accumulate in `f64` and round once
//! on the way out.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn to_t<T: Real>(acc: Vec<f64>) -> Vec<T> {
    acc.into_iter().map(T::from_f64).collect()
}

fn same_dims<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "{what}: operand dims {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = match a.dims() {
        &[m, k] => (m, k),
        d => return Err(Error::shape(format!("matmul lhs must be rank 2, got {d:?}"))),
    };
    let (k2, n) = match b.dims() {
        &[k2, n] => (k2, n),
        d => return Err(Error::shape(format!("matmul rhs must be rank 2, got {d:?}"))),
    };
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dims disagree: [{m}, {k}] x [{k2}, {n}]"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p].as_f64();
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv.as_f64();
            }
        }
    }
    Tensor::new([m, n], to_t(out))
}

pub fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = match a.dims() {
        &[m, n] => (m, n),
        d => return Err(Error::shape(format!("transpose needs rank 2, got {d:?}"))),
    };
    let ad = a.data();
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(ad[i * n + j]);
        }
    }
    Tensor::new([n, m], out)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.dims(), data)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims(a, b, "sub")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    Tensor::new(a.dims(), data)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.dims(), data)
}

pub fn scale<T: Real>(a: &Tensor<T>, s: f64) -> Tensor<T> {
    a.map(|v| T::from_f64(v.as_f64() * s))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::from_f64(1.0 / (1.0 + (-v.as_f64()).exp())))
}

/// Splits `dims` around `axis` into `(outer, len, inner)`.
fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// Numerically stable softmax along `axis` (the axis max is subtracted first).
pub fn softmax_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!(
            "softmax axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    let (outer, n, inner) = axis_split(x.dims(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    let mut buf = vec![0.0f64; n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut max = f64::NEG_INFINITY;
            for a in 0..n {
                max = max.max(xd[base + a * inner].as_f64());
            }
            let mut total = 0.0;
            for (a, slot) in buf.iter_mut().enumerate() {
                *slot = (xd[base + a * inner].as_f64() - max).exp();
                total += *slot;
            }
            for (a, slot) in buf.iter().enumerate() {
                out[base + a * inner] = T::from_f64(slot / total);
            }
        }
    }
    Tensor::new(x.dims(), out)
}

/// Gradient of softmax given its output `y` and upstream gradient `gy`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, gy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_split(y.dims(), axis);
    let (yd, gd) = (y.data(), gy.data());
    let mut out = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let dot: f64 = (0..n)
                .map(|a| yd[base + a * inner].as_f64() * gd[base + a * inner].as_f64())
                .sum();
            for a in 0..n {
                let idx = base + a * inner;
                out[idx] = T::from_f64(yd[idx].as_f64() * (gd[idx].as_f64() - dot));
            }
        }
    }
    Tensor::new(y.dims(), out).expect("dims preserved")
}

fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::validation("convolution stride must be positive"));
    }
    if input + 2 * pad < kernel {
        return Err(Error::shape(format!(
            "kernel extent {kernel} exceeds padded input {input} + 2*{pad}"
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// Geometry shared by the conv2d forward and backward kernels.
#[derive(Clone, Copy, Debug)]
struct Conv2dGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Conv2dGeom {
    fn new<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let (cin, h, wd) = x.chw()?;
        let (cout, wcin, kh, kw) = match w.dims() {
            &[a, b, c, d] => (a, b, c, d),
            d => {
                return Err(Error::shape(format!(
                    "conv2d weights must be [Cout, Cin, kh, kw], got {d:?}"
                )))
            }
        };
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv2d weights expect {wcin} input channels, input has {cin}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::validation(format!(
                "conv2d kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        Ok(Self {
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            oh: conv_out_len(h, kh, stride, pad)?,
            ow: conv_out_len(wd, kw, stride, pad)?,
            stride,
            pad,
        })
    }

    /// Input rows hit by kernel row `a`, as `(out_row, in_row)` pairs.
    fn taps(&self, out_len: usize, in_len: usize, a: usize) -> impl Iterator<Item = (usize, usize)> {
        let (s, p) = (self.stride, self.pad);
        (0..out_len).filter_map(move |o| {
            let i = (o * s + a) as isize - p as isize;
            (i >= 0 && (i as usize) < in_len).then_some((o, i as usize))
        })
    }
}

/// 2D convolution (cross-correlation) with zero padding and optional bias.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Conv2dGeom::new(x, w, stride, pad)?;
    if let Some(b) = bias {
        if b.dims() != [g.cout] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{}], got {:?}",
                g.cout,
                b.dims()
            )));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let plane = g.oh * g.ow;
    let mut acc = vec![0.0f64; g.cout * plane];
    for co in 0..g.cout {
        let out = &mut acc[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            out.fill(b.data()[co].as_f64());
        }
        for ci in 0..g.cin {
            let xin = &xd[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let wv = wd[((co * g.cin + ci) * g.kh + a) * g.kw + b].as_f64();
                    if wv == 0.0 {
                        continue;
                    }
                    for (oy, iy) in g.taps(g.oh, g.h, a) {
                        let orow = &mut out[oy * g.ow..(oy + 1) * g.ow];
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        for (ox, ix) in g.taps(g.ow, g.w, b) {
                            orow[ox] += wv * xrow[ix].as_f64();
                        }
                    }
                }
            }
        }
    }
    Tensor::new([g.cout, g.oh, g.ow], to_t(acc))
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = Conv2dGeom::new(x, w, stride, pad)?;
    let (xd, wd, gd) = (x.data(), w.data(), gy.data());
    let plane = g.oh * g.ow;
    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; w.len()];
    let mut gb = vec![0.0f64; g.cout];
    for co in 0..g.cout {
        let gout = &gd[co * plane..(co + 1) * plane];
        gb[co] = gout.iter().map(|v| v.as_f64()).sum();
        for ci in 0..g.cin {
            let xoff = ci * g.h * g.w;
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let widx = ((co * g.cin + ci) * g.kh + a) * g.kw + b;
                    let wv = wd[widx].as_f64();
                    let mut wacc = 0.0;
                    for (oy, iy) in g.taps(g.oh, g.h, a) {
                        for (ox, ix) in g.taps(g.ow, g.w, b) {
                            let gv = gout[oy * g.ow + ox].as_f64();
                            let xi = xoff + iy * g.w + ix;
                            wacc += gv * xd[xi].as_f64();
                            gx[xi] += gv * wv;
                        }
                    }
                    gw[widx] += wacc;
                }
            }
        }
    }
    Ok((
        Tensor::new(x.dims(), to_t(gx))?,
        Tensor::new(w.dims(), to_t(gw))?,
        Tensor::new([g.cout], to_t(gb))?,
    ))
}

/// Source taps of half-pixel bilinear resampling along one axis:
/// `(lower index, upper index, weight of upper)`.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn upsample_geom(dims: &[usize], out_h: usize, out_w: usize) -> Result<(usize, usize, usize, usize)> {
    if dims.len() < 3 {
        return Err(Error::shape(format!(
            "bilinear upsampling needs [C, H, W, ...], got {dims:?}"
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bilinear upsampling to a zero-sized target"));
    }
    let (h, w) = (dims[1], dims[2]);
    if out_h < h || out_w < w {
        return Err(Error::shape(format!(
            "bilinear upsampling cannot shrink {h}x{w} to {out_h}x{out_w}"
        )));
    }
    Ok((dims[0], h, w, dims[3..].iter().product()))
}

/// Bilinear upsampling of axes 1 and 2 with half-pixel centers
/// (corner alignment off). Trailing axes are carried along unchanged, which
/// lets the same kernel resize the query plane of a 4D correlation.
pub fn upsample_bilinear<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w, inner) = upsample_geom(x.dims(), out_h, out_w)?;
    let mut dims = x.dims().to_vec();
    dims[1] = out_h;
    dims[2] = out_w;
    if (h, w) == (out_h, out_w) {
        return Tensor::new(dims, x.data().to_vec());
    }
    let (ty, tx) = (bilinear_taps(h, out_h), bilinear_taps(w, out_w));
    let xd = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w * inner);
    for ch in 0..c {
        let base = ch * h * w * inner;
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                let at = |yy: usize, xx: usize, k: usize| xd[base + (yy * w + xx) * inner + k].as_f64();
                for k in 0..inner {
                    let v = (1.0 - ly) * ((1.0 - lx) * at(y0, x0, k) + lx * at(y0, x1, k))
                        + ly * ((1.0 - lx) * at(y1, x0, k) + lx * at(y1, x1, k));
                    out.push(T::from_f64(v));
                }
            }
        }
    }
    Tensor::new(dims, out)
}

/// Adjoint of [`upsample_bilinear`]: scatters `gy` back onto an `in_h x in_w` grid.
pub fn upsample_bilinear_backward<T: Real>(gy: &Tensor<T>, in_h: usize, in_w: usize) -> Tensor<T> {
    let dims = gy.dims();
    let (c, out_h, out_w) = (dims[0], dims[1], dims[2]);
    let inner: usize = dims[3..].iter().product();
    let mut in_dims = dims.to_vec();
    in_dims[1] = in_h;
    in_dims[2] = in_w;
    if (in_h, in_w) == (out_h, out_w) {
        return Tensor::new(in_dims, gy.data().to_vec()).expect("dims preserved");
    }
    let (ty, tx) = (bilinear_taps(in_h, out_h), bilinear_taps(in_w, out_w));
    let gd = gy.data();
    let mut acc = vec![0.0f64; c * in_h * in_w * inner];
    for ch in 0..c {
        let base = ch * in_h * in_w * inner;
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let src = ((ch * out_h + oy) * out_w + ox) * inner;
                for k in 0..inner {
                    let g = gd[src + k].as_f64();
                    acc[base + (y0 * in_w + x0) * inner + k] += g * (1.0 - ly) * (1.0 - lx);
                    acc[base + (y0 * in_w + x1) * inner + k] += g * (1.0 - ly) * lx;
                    acc[base + (y1 * in_w + x0) * inner + k] += g * ly * (1.0 - lx);
                    acc[base + (y1 * in_w + x1) * inner + k] += g * ly * lx;
                }
            }
        }
    }
    Tensor::new(in_dims, to_t(acc)).expect("dims consistent")
}

/// Per-channel spatial mean of a `[C, H, W]` map.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    mean_trailing_impl(x, c, h * w, vec![c])
}

/// Mean over the last `n` axes.
pub fn mean_trailing<T: Real>(x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    if n == 0 || n >= x.rank() {
        return Err(Error::shape(format!(
            "cannot average the last {n} axes of rank-{} tensor",
            x.rank()
        )));
    }
    let split = x.rank() - n;
    let outer: usize = x.dims()[..split].iter().product();
    let inner: usize = x.dims()[split..].iter().product();
    mean_trailing_impl(x, outer, inner, x.dims()[..split].to_vec())
}

fn mean_trailing_impl<T: Real>(x: &Tensor<T>, outer: usize, inner: usize, dims: Vec<usize>) -> Result<Tensor<T>> {
    let out = x
        .data()
        .chunks(inner)
        .take(outer)
        .map(|chunk| T::from_f64(chunk.iter().map(|v| v.as_f64()).sum::<f64>() / inner as f64))
        .collect();
    Tensor::new(dims, out)
}

/// Concatenation along axis 0.
pub fn concat0<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concatenation of zero tensors"))?;
    let tail = &first.dims()[1..];
    let mut lead = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.rank() != first.rank() || &p.dims()[1..] != tail {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} with {:?} along axis 0",
                first.dims(),
                p.dims()
            )));
        }
        lead += p.dims()[0];
        data.extend_from_slice(p.data());
    }
    let mut dims = vec![lead];
    dims.extend_from_slice(tail);
    Tensor::new(dims, data)
}

/// `y[c, ...] = gate[c] * x[c, ...]`
pub fn channel_scale<T: Real>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.dims()[0];
    if gate.dims() != [c] {
        return Err(Error::shape(format!(
            "channel gate {:?} does not match {c} channels",
            gate.dims()
        )));
    }
    let inner = x.len() / c.max(1);
    let data = x
        .data()
        .chunks(inner.max(1))
        .zip(gate.data())
        .flat_map(|(chunk, &gv)| chunk.iter().map(move |&v| v * gv))
        .collect();
    Tensor::new(x.dims(), data)
}

/// `y[c, h, w] = x[c, h, w] * mask[h, w]`
pub fn mul_spatial<T: Real>(x: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = x.chw()?;
    if mask.dims() != [h, w] {
        return Err(Error::shape(format!(
            "spatial mask {:?} does not match {h}x{w}",
            mask.dims()
        )));
    }
    let md = mask.data();
    let data = x
        .data()
        .chunks(h * w)
        .flat_map(|plane| plane.iter().zip(md).map(|(&v, &m)| v * m))
        .collect();
    Tensor::new(x.dims(), data)
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Per-group `(mean, 1/std)` statistics recorded by [`group_norm`].
#[derive(Clone, Debug)]
pub struct GroupStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Group normalization over `[C, ...]` with a per-channel affine transform.
pub fn group_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
) -> Result<(Tensor<T>, GroupStats)> {
    let c = x.dims()[0];
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::shape(format!(
            "{c} channels cannot be split into {groups} groups"
        )));
    }
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(Error::shape("group norm affine parameters must be [C]"));
    }
    let inner = x.len() / c;
    let per_group = c / groups * inner;
    let xd = x.data();
    let mut stats = GroupStats {
        mean: Vec::with_capacity(groups),
        inv_std: Vec::with_capacity(groups),
    };
    let mut out = Vec::with_capacity(x.len());
    for gi in 0..groups {
        let chunk = &xd[gi * per_group..(gi + 1) * per_group];
        let mean = chunk.iter().map(|v| v.as_f64()).sum::<f64>() / per_group as f64;
        let var = chunk
            .iter()
            .map(|v| (v.as_f64() - mean).powi(2))
            .sum::<f64>()
            / per_group as f64;
        let inv_std = 1.0 / (var + GROUP_NORM_EPS).sqrt();
        for (j, v) in chunk.iter().enumerate() {
            let ch = gi * (c / groups) + j / inner;
            let xhat = (v.as_f64() - mean) * inv_std;
            out.push(T::from_f64(
                gamma.data()[ch].as_f64() * xhat + beta.data()[ch].as_f64(),
            ));
        }
        stats.mean.push(mean);
        stats.inv_std.push(inv_std);
    }
    Ok((Tensor::new(x.dims(), out)?, stats))
}

/// Gradients of [`group_norm`] with respect to `x`, `gamma` and `beta`.
pub fn group_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &GroupStats,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = x.dims()[0];
    let groups = stats.mean.len();
    let inner = x.len() / c;
    let cpg = c / groups;
    let per_group = cpg * inner;
    let (xd, gd) = (x.data(), gy.data());
    let mut gx = vec![0.0f64; x.len()];
    let mut ggamma = vec![0.0f64; c];
    let mut gbeta = vec![0.0f64; c];
    for gi in 0..groups {
        let (mean, inv_std) = (stats.mean[gi], stats.inv_std[gi]);
        let range = gi * per_group..(gi + 1) * per_group;
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for idx in range.clone() {
            let ch = idx / inner;
            let xhat = (xd[idx].as_f64() - mean) * inv_std;
            let g = gd[idx].as_f64();
            ggamma[ch] += g * xhat;
            gbeta[ch] += g;
            let gxhat = g * gamma.data()[ch].as_f64();
            sum_g += gxhat;
            sum_gx += gxhat * xhat;
        }
        let n = per_group as f64;
        for idx in range {
            let ch = idx / inner;
            let xhat = (xd[idx].as_f64() - mean) * inv_std;
            let gxhat = gd[idx].as_f64() * gamma.data()[ch].as_f64();
            gx[idx] = inv_std * (gxhat - sum_g / n - xhat * sum_gx / n);
        }
    }
    (
        Tensor::new(x.dims(), to_t(gx)).expect("dims preserved"),
        Tensor::new([c], to_t(ggamma)).expect("dims preserved"),
        Tensor::new([c], to_t(gbeta)).expect("dims preserved"),
    )
}

/// Nearest-neighbour resize of a 2D map, sampling at half-pixel centers.
pub fn resize_nearest<T: Real>(m: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w) = match m.dims() {
        &[h, w] => (h, w),
        d => return Err(Error::shape(format!("nearest resize needs [H, W], got {d:?}"))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("nearest resize to a zero-sized target"));
    }
    let pick = |o: usize, inl: usize, outl: usize| (((o as f64 + 0.5) * inl as f64 / outl as f64) as usize).min(inl - 1);
    let md = m.data();
    let data = (0..out_h)
        .flat_map(|y| (0..out_w).map(move |x| (y, x)))
        .map(|(y, x)| md[pick(y, h, out_h) * w + pick(x, w, out_w)])
        .collect();
    Tensor::new([out_h, out_w], data)
}
