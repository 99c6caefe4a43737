//! Reverse-mode differentiation over a recorded operation graph.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly,
//! stores its output, and remembers its inputs. [`Graph::backward`] walks the
//! tape in reverse. Graphs are single-threaded evaluation contexts; build one
//! per forward pass.

use crate::correlation;
use crate::crm;
use crate::encoder4d::{self, Conv4dSpec};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::ops::{self, GroupStats};
use crate::tensor::{ParamId, ParamSet, Real, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Probability floor inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var, usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Upsample(Var),
    MeanTrailing(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    ChannelScale(Var, Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: GroupStats,
    },
    Cosine(Var, Var),
    SelfSimilarity(Var, usize),
    CenterPivot {
        x: Var,
        wq: Var,
        ws: Var,
        spec: Conv4dSpec,
    },
    CrossEntropy {
        probs: Var,
        target: BinaryMask,
    },
    SumAll(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Leaf variables for every entry of a [`ParamSet`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    /// Gradients in parameter order; parameters the loss never touched get zeros.
    pub fn collect<T: Real>(&self, graph: &Graph<T>, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.value(v).dims()))
            })
            .collect()
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn bind(&mut self, params: &ParamSet<T>) -> Bindings {
        let vars = params.values().iter().map(|t| self.param(t.clone())).collect();
        Bindings { vars }
    }

    /// Sign bits of every ReLU input that depends on a tracked leaf, packed
    /// into words. Two evaluations with equal patterns lie on the same
    /// piecewise-smooth branch.
    pub fn relu_pattern(&self) -> Vec<u64> {
        let mut words = Vec::new();
        let (mut cur, mut bit) = (0u64, 0);
        for node in &self.nodes {
            let Op::Relu(a) = node.op else { continue };
            if !node.needs_grad {
                continue;
            }
            for &v in self.value(a).data() {
                cur |= ((v > T::zero()) as u64) << bit;
                bit += 1;
                if bit == 64 {
                    words.push(cur);
                    (cur, bit) = (0, 0);
                }
            }
        }
        words.push(cur);
        words
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    fn unary(&mut self, a: Var, value: Tensor<T>, op: Op) -> Var {
        let ng = self.ng(&[a]);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<T>, op: Op) -> Var {
        let ng = self.ng(&[a, b]);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = ops::transpose(self.value(a))?;
        Ok(self.unary(a, v, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::sub(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = ops::scale(self.value(a), s);
        self.unary(a, v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = ops::relu(self.value(a));
        self.unary(a, v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = ops::sigmoid(self.value(a));
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = ops::softmax_axis(self.value(a), axis)?;
        Ok(self.unary(a, v, Op::Softmax(a, axis)))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let v = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let ng = self.ng(&inputs);
        Ok(self.push(v, Op::Conv2d { x, w, b, stride, pad }, ng))
    }

    /// Half-pixel bilinear upsampling of axes 1 and 2.
    pub fn upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let v = ops::upsample_bilinear(self.value(x), out_h, out_w)?;
        Ok(self.unary(x, v, Op::Upsample(x)))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = ops::global_avg_pool(self.value(x))?;
        Ok(self.unary(x, v, Op::MeanTrailing(x)))
    }

    pub fn mean_trailing(&mut self, x: Var, n: usize) -> Result<Var> {
        let v = ops::mean_trailing(self.value(x), n)?;
        Ok(self.unary(x, v, Op::MeanTrailing(x)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat0(&tensors)?;
        let ng = self.ng(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(dims)?;
        Ok(self.unary(x, v, Op::Reshape(x)))
    }

    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        let v = ops::channel_scale(self.value(x), self.value(gate))?;
        Ok(self.binary(x, gate, v, Op::ChannelScale(x, gate)))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (v, stats) = ops::group_norm(self.value(x), self.value(gamma), self.value(beta), groups)?;
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(v, Op::GroupNorm { x, gamma, beta, stats }, ng))
    }

    /// `[1, Hq, Wq, Hs, Ws]` ReLU-clamped cosine correlation.
    pub fn cosine(&mut self, q: Var, s: Var) -> Result<Var> {
        let v = correlation::cosine_kernel(self.value(q), self.value(s))?;
        Ok(self.binary(q, s, v, Op::Cosine(q, s)))
    }

    pub fn self_similarity(&mut self, x: Var, k: usize) -> Result<Var> {
        let v = crm::self_similarity_kernel(self.value(x), k)?;
        Ok(self.unary(x, v, Op::SelfSimilarity(x, k)))
    }

    pub fn center_pivot(&mut self, x: Var, wq: Var, ws: Var, spec: Conv4dSpec) -> Result<Var> {
        let (v, _) = encoder4d::center_pivot_kernel(self.value(x), self.value(wq), self.value(ws), spec)?;
        let ng = self.ng(&[x, wq, ws]);
        Ok(self.push(v, Op::CenterPivot { x, wq, ws, spec }, ng))
    }

    /// `-sum log max(P[target], 1e-12)` over a `[2, H, W]` probability map.
    pub fn cross_entropy(&mut self, probs: Var, target: &BinaryMask) -> Result<Var> {
        let p = self.value(probs);
        let (c, h, w) = p.chw()?;
        if c != 2 || (h, w) != target.dims() {
            return Err(Error::shape(format!(
                "cross-entropy needs [2, {}, {}] probabilities, got {:?}",
                target.height(),
                target.width(),
                p.dims()
            )));
        }
        let plane = h * w;
        let loss: f64 = target
            .data()
            .iter()
            .enumerate()
            .map(|(i, &t)| -(p.data()[t as usize * plane + i].as_f64().max(PROB_FLOOR)).ln())
            .sum();
        let v = Tensor::scalar(T::from_f64(loss));
        Ok(self.unary(
            probs,
            v,
            Op::CrossEntropy {
                probs,
                target: target.clone(),
            },
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(T::from_f64(self.value(x).sum()));
        self.unary(x, v, Op::SumAll(x))
    }

    /// Gradients of the scalar `loss` with respect to every tracked input.
    /// Only leaf gradients are retained.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "loss must be a scalar, got dims {:?}",
                self.dims(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.dims(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            if node.needs_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads)?;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        grads[v.0] = Some(match grads[v.0].take() {
            Some(prev) => ops::add(&prev, &g)?,
            None => g,
        });
        Ok(())
    }

    fn propagate(&self, op: &Op, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let bt = ops::transpose(self.value(*b))?;
                    self.accumulate(grads, *a, ops::matmul(g, &bt)?)?;
                }
                if self.nodes[b.0].needs_grad {
                    let at = ops::transpose(self.value(*a))?;
                    self.accumulate(grads, *b, ops::matmul(&at, g)?)?;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, ops::transpose(g)?)?,
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, ops::scale(g, -1.0))?;
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, ops::mul(g, self.value(*b))?)?;
                self.accumulate(grads, *b, ops::mul(g, self.value(*a))?)?;
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, ops::scale(g, *s))?,
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.dims(), data)?)?;
            }
            Op::Sigmoid(a) => {
                let data = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &gv)| {
                        let y = y.as_f64();
                        T::from_f64(gv.as_f64() * y * (1.0 - y))
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(out.dims(), data)?)?;
            }
            Op::Softmax(a, axis) => self.accumulate(grads, *a, ops::softmax_backward(out, g, *axis))?,
            Op::Conv2d { x, w, b, stride, pad } => {
                let (gx, gw, gb) = ops::conv2d_backward(self.value(*x), self.value(*w), g, *stride, *pad)?;
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *w, gw)?;
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Upsample(x) => {
                let d = self.dims(*x);
                self.accumulate(grads, *x, ops::upsample_bilinear_backward(g, d[1], d[2]))?;
            }
            Op::MeanTrailing(x) => {
                let xt = self.value(*x);
                let inner = xt.len() / g.len();
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(T::from_f64(gv.as_f64() / inner as f64), inner))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xt.dims(), data)?)?;
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pd = self.dims(*p);
                    let n: usize = pd.iter().product();
                    let slice = Tensor::new(pd, g.data()[offset..offset + n].to_vec())?;
                    offset += n;
                    self.accumulate(grads, *p, slice)?;
                }
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.dims(*x))?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::ChannelScale(x, gate) => {
                let gate_t = self.value(*gate);
                self.accumulate(grads, *x, ops::channel_scale(g, gate_t)?)?;
                if self.nodes[gate.0].needs_grad {
                    let xt = self.value(*x);
                    let inner = xt.len() / gate_t.len();
                    let gg = xt
                        .data()
                        .chunks(inner)
                        .zip(g.data().chunks(inner))
                        .map(|(xc, gc)| T::from_f64(xc.iter().zip(gc).map(|(a, b)| a.as_f64() * b.as_f64()).sum()))
                        .collect();
                    self.accumulate(grads, *gate, Tensor::new(gate_t.dims(), gg)?)?;
                }
            }
            Op::GroupNorm { x, gamma, beta, stats } => {
                let (gx, ggamma, gbeta) = ops::group_norm_backward(self.value(*x), self.value(*gamma), stats, g);
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *gamma, ggamma)?;
                self.accumulate(grads, *beta, gbeta)?;
            }
            Op::Cosine(q, s) => {
                let (gq, gs) = correlation::cosine_backward(self.value(*q), self.value(*s), g)?;
                self.accumulate(grads, *q, gq)?;
                self.accumulate(grads, *s, gs)?;
            }
            Op::SelfSimilarity(x, k) => {
                self.accumulate(grads, *x, crm::self_similarity_backward(self.value(*x), *k, g)?)?;
            }
            Op::CenterPivot { x, wq, ws, spec } => {
                let (gx, gwq, gws) = encoder4d::center_pivot_backward(
                    self.value(*x),
                    self.value(*wq),
                    self.value(*ws),
                    g,
                    *spec,
                    self.nodes[x.0].needs_grad,
                )?;
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx)?;
                }
                self.accumulate(grads, *wq, gwq)?;
                self.accumulate(grads, *ws, gws)?;
            }
            Op::CrossEntropy { probs, target } => {
                let p = self.value(*probs);
                let plane = target.height() * target.width();
                let scale = g.data()[0].as_f64();
                let mut gp = vec![T::zero(); p.len()];
                for (i, &t) in target.data().iter().enumerate() {
                    let idx = t as usize * plane + i;
                    let pv = p.data()[idx].as_f64();
                    if pv > PROB_FLOOR {
                        gp[idx] = T::from_f64(-scale / pv);
                    }
                }
                self.accumulate(grads, *probs, Tensor::new(p.dims(), gp)?)?;
            }
            Op::SumAll(x) => {
                let d = self.dims(*x);
                self.accumulate(grads, *x, Tensor::full(d, g.data()[0]))?;
            }
        }
        Ok(())
    }
}

/// Evaluates a scalar loss built by `loss_fn` and returns its gradient with
/// respect to every parameter, in parameter order.
pub fn grad_eval<T, F>(params: &ParamSet<T>, loss_fn: F) -> Result<(f64, Vec<Tensor<T>>)>
where
    T: Real,
    F: FnOnce(&mut Graph<T>, &Bindings) -> Result<Var>,
{
    let mut graph = Graph::new();
    let binds = graph.bind(params);
    let loss = loss_fn(&mut graph, &binds)?;
    let grads = graph.backward(loss)?;
    let value = graph.value(loss).data()[0].as_f64();
    Ok((value, binds.collect(&graph, &grads)))
}
