use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::tape::record;
use super::tensor::{numel, ParamId, Tensor};
use crate::error::{Error, Result};

/// The differentiable primitive set. `apply_primitive` dispatches on it; the
/// methods on [`Tensor`] are the ergonomic spelling of the same thing.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Sum,
    Mean,
    Broadcast(Vec<usize>),
    Reshape(Vec<usize>),
    ConcatChannels,
    Sin,
    Cos,
    Exp,
    Log,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Softplus,
    Sqrt,
    Pow(f64),
    ClampMin(f64),
    Tanh,
}

pub fn apply_primitive(op: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let arity = match op {
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::MatMul => 2,
        Primitive::ConcatChannels => inputs.len().max(1),
        _ => 1,
    };
    if inputs.len() != arity {
        return Err(Error::Domain {
            op: "apply_primitive",
            detail: format!("{:?} takes {} inputs, got {}", op, arity, inputs.len()),
        });
    }
    let x = inputs[0];
    Ok(match op {
        Primitive::Add => x.add(inputs[1])?,
        Primitive::Sub => x.sub(inputs[1])?,
        Primitive::Mul => x.mul(inputs[1])?,
        Primitive::Div => x.div(inputs[1])?,
        Primitive::MatMul => x.matmul(inputs[1])?,
        Primitive::Sum => x.sum(),
        Primitive::Mean => x.mean(),
        Primitive::Broadcast(shape) => x.broadcast_to(shape)?,
        Primitive::Reshape(shape) => x.reshape(shape)?,
        Primitive::ConcatChannels => Tensor::concat_last(inputs)?,
        Primitive::Sin => x.sin(),
        Primitive::Cos => x.cos(),
        Primitive::Exp => x.exp(),
        Primitive::Log => x.log()?,
        Primitive::Sigmoid => x.sigmoid(),
        Primitive::Relu => x.relu(),
        Primitive::LeakyRelu(s) => x.leaky_relu(*s),
        Primitive::Softplus => x.softplus(),
        Primitive::Sqrt => x.sqrt()?,
        Primitive::Pow(p) => x.pow(*p)?,
        Primitive::ClampMin(m) => x.clamp_min(*m),
        Primitive::Tanh => x.tanh(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Unary {
    Sin,
    Cos,
    Exp,
    Log,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Softplus,
    Sqrt,
    Pow(f64),
    ClampMin(f64),
    Tanh,
    Abs,
    Neg,
    Scale(f64),
    Offset(f64),
    /// Laplace CDF with scale β.
    LaplaceCdf(f64),
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn laplace_cdf(s: f64, beta: f64) -> f64 {
    if s <= 0.0 {
        0.5 * (s / beta).exp()
    } else {
        1.0 - 0.5 * (-s / beta).exp()
    }
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Unary::Softplus => softplus(x),
            Unary::Sqrt => x.sqrt(),
            Unary::Pow(p) => x.powf(p),
            Unary::ClampMin(m) => x.max(m),
            Unary::Tanh => x.tanh(),
            Unary::Abs => x.abs(),
            Unary::Neg => -x,
            Unary::Scale(c) => c * x,
            Unary::Offset(c) => x + c,
            Unary::LaplaceCdf(beta) => laplace_cdf(x, beta),
        }
    }

    /// dy/dx given input x and output y.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Sqrt => 0.5 / y,
            Unary::Pow(p) => {
                if p == 0.0 {
                    0.0
                } else {
                    p * x.powf(p - 1.0)
                }
            }
            Unary::ClampMin(m) => {
                if x > m {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Neg => -1.0,
            Unary::Scale(c) => c,
            Unary::Offset(_) => 1.0,
            Unary::LaplaceCdf(beta) => 0.5 / beta * (-x.abs() / beta).exp(),
        }
    }
}

/// Source layout for [`GatherPlan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceLayout {
    /// Source viewed as `[sites, channels]`.
    ChannelsLast { channels: usize },
    /// Source viewed as `[channels, sites]`.
    ChannelsFirst { channels: usize },
}

impl SourceLayout {
    pub fn channels(self) -> usize {
        match self {
            SourceLayout::ChannelsLast { channels } | SourceLayout::ChannelsFirst { channels } => {
                channels
            }
        }
    }
}

/// A fixed sparse linear map: `out[r, c] = Σ_t weight[r, t] · src[index[r, t], c]`.
/// Interpolation, nearest upsampling and im2col are all instances. Weights are
/// constants; gradients flow to the source only.
#[derive(Debug, Clone)]
pub struct GatherPlan {
    pub rows: usize,
    pub taps: usize,
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
    pub layout: SourceLayout,
    /// Output shape; must have `rows * channels` elements.
    pub out_shape: Vec<usize>,
}

impl GatherPlan {
    fn validate(&self, src: &Tensor) -> Result<usize> {
        let channels = self.layout.channels();
        if channels == 0 || !src.numel().is_multiple_of(channels) {
            return Err(Error::Domain {
                op: "gather",
                detail: format!(
                    "source of {} values is not divisible into {} channels",
                    src.numel(),
                    channels
                ),
            });
        }
        let sites = src.numel() / channels;
        if self.index.len() != self.rows * self.taps || self.weight.len() != self.index.len() {
            return Err(Error::Domain {
                op: "gather",
                detail: "index/weight length disagrees with rows × taps".into(),
            });
        }
        if numel(&self.out_shape) != self.rows * channels {
            return Err(Error::shape(
                &self.out_shape,
                &[self.rows, channels],
                "gather output",
            ));
        }
        if let Some(&bad) = self.index.iter().find(|&&i| i >= sites) {
            return Err(Error::Domain {
                op: "gather",
                detail: format!("index {} out of range for {} sites", bad, sites),
            });
        }
        Ok(sites)
    }
}

/// User-defined differentiable function. Useful for fused kernels and for
/// testing the gradient checker itself.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)>;
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
    ) -> Vec<Option<Vec<f64>>>;
}

pub fn apply_custom(op: Arc<dyn CustomOp>, inputs: &[&Tensor]) -> Result<Tensor> {
    let (shape, data) = op.forward(inputs)?;
    let out = Tensor::new(&shape, data)?;
    Ok(record(Op::Custom(op), inputs, out))
}

#[derive(Clone)]
pub(crate) enum Op {
    Leaf(ParamId),
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Sum,
    Mean,
    SumAxis { axis: usize },
    Broadcast,
    Reshape,
    Concat,
    Slice { start: usize },
    Unary(Unary),
    CumsumExclusive,
    Gather(Arc<GatherPlan>),
    Custom(Arc<dyn CustomOp>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(c) => write!(f, "Custom({})", c.name()),
            Op::Gather(p) => write!(f, "Gather({}x{})", p.rows, p.taps),
            Op::Leaf(p) => write!(f, "Leaf({:?})", p),
            Op::SumAxis { axis } => write!(f, "SumAxis({})", axis),
            Op::Slice { start } => write!(f, "Slice({})", start),
            Op::Unary(u) => write!(f, "{:?}", u),
            other => write!(f, "{}", other.name()),
        }
    }
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::MatMul => "matmul",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::Broadcast => "broadcast",
            Op::Reshape => "reshape",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::Unary(_) => "unary",
            Op::CumsumExclusive => "cumsum",
            Op::Gather(_) => "gather",
            Op::Custom(_) => "custom",
        }
    }

    pub(crate) fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        g: &[f64],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        Ok(match self {
            Op::Leaf(_) => Vec::new(),
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let (a, b) = (inputs[0], inputs[1]);
                let out_shape = output.shape();
                let ia = IndexMap::new(out_shape, a.shape());
                let ib = IndexMap::new(out_shape, b.shape());
                let (ad, bd) = (a.data(), b.data());
                let ga = want(0).then(|| {
                    let local: Box<dyn Fn(usize) -> f64> = match self {
                        Op::Add | Op::Sub => Box::new(|i| g[i]),
                        Op::Mul => Box::new(|i| g[i] * bd[ib.get(i)]),
                        _ => Box::new(|i| g[i] / bd[ib.get(i)]),
                    };
                    ia.reduce(a.numel(), g.len(), local)
                });
                let gb = want(1).then(|| {
                    let local: Box<dyn Fn(usize) -> f64> = match self {
                        Op::Add => Box::new(|i| g[i]),
                        Op::Sub => Box::new(|i| -g[i]),
                        Op::Mul => Box::new(|i| g[i] * ad[ia.get(i)]),
                        _ => Box::new(|i| {
                            let bv = bd[ib.get(i)];
                            -g[i] * ad[ia.get(i)] / (bv * bv)
                        }),
                    };
                    ib.reduce(b.numel(), g.len(), local)
                });
                vec![ga, gb]
            }
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let k = b.shape()[0];
                let m = b.shape()[1];
                let n = a.numel() / k;
                let ga = want(0).then(|| matmul_kernel(g, &transpose(b.data(), k, m), n, m, k));
                let gb = want(1).then(|| matmul_at_b(a.data(), g, n, k, m));
                vec![ga, gb]
            }
            Op::Sum => vec![Some(vec![g[0]; inputs[0].numel()])],
            Op::Mean => {
                let n = inputs[0].numel();
                vec![Some(vec![g[0] / n as f64; n])]
            }
            Op::SumAxis { axis } => {
                let shape = inputs[0].shape();
                let (outer, len, inner) = split_axis(shape, *axis);
                let mut gi = vec![0.0; inputs[0].numel()];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut gi[(o * len + l) * inner..(o * len + l + 1) * inner];
                        dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gi)]
            }
            Op::Broadcast => {
                let map = IndexMap::new(output.shape(), inputs[0].shape());
                vec![Some(map.reduce(inputs[0].numel(), g.len(), |i| g[i]))]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Concat => {
                let rows = output.rows();
                let total = output.last_dim();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(inputs.len());
                for (i, t) in inputs.iter().enumerate() {
                    let w = t.last_dim();
                    if want(i) {
                        let mut gi = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gi.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        grads.push(Some(gi));
                    } else {
                        grads.push(None);
                    }
                    offset += w;
                }
                grads
            }
            Op::Slice { start } => {
                let x = inputs[0];
                let rows = x.rows();
                let width = x.last_dim();
                let w = output.last_dim();
                let mut gi = vec![0.0; x.numel()];
                for r in 0..rows {
                    gi[r * width + start..r * width + start + w]
                        .copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                vec![Some(gi)]
            }
            Op::Unary(u) => {
                let x = inputs[0].data();
                let y = output.data();
                let gi = x
                    .iter()
                    .zip(y)
                    .zip(g)
                    .map(|((&xv, &yv), &gv)| {
                        if gv == 0.0 {
                            0.0
                        } else {
                            gv * u.derivative(xv, yv)
                        }
                    })
                    .collect();
                vec![Some(gi)]
            }
            Op::CumsumExclusive => {
                let x = inputs[0];
                let len = x.last_dim();
                let mut gi = vec![0.0; x.numel()];
                for (grow, gout) in gi.chunks_mut(len).zip(g.chunks(len)) {
                    let mut acc = 0.0;
                    for j in (0..len).rev() {
                        grow[j] = acc;
                        acc += gout[j];
                    }
                }
                vec![Some(gi)]
            }
            Op::Gather(plan) => {
                let src = inputs[0];
                let channels = plan.layout.channels();
                let sites = src.numel() / channels;
                let mut gi = vec![0.0; src.numel()];
                for r in 0..plan.rows {
                    let grow = &g[r * channels..(r + 1) * channels];
                    for t in 0..plan.taps {
                        let w = plan.weight[r * plan.taps + t];
                        if w == 0.0 {
                            continue;
                        }
                        let s = plan.index[r * plan.taps + t];
                        match plan.layout {
                            SourceLayout::ChannelsLast { .. } => {
                                let dst = &mut gi[s * channels..(s + 1) * channels];
                                for (d, gv) in dst.iter_mut().zip(grow) {
                                    *d += w * gv;
                                }
                            }
                            SourceLayout::ChannelsFirst { .. } => {
                                for (c, gv) in grow.iter().enumerate() {
                                    gi[c * sites + s] += w * gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(gi)]
            }
            Op::Custom(op) => op.backward(inputs, output, g),
        })
    }
}

/// Maps flat output indices of a broadcast to flat input indices.
enum IndexMap {
    Same,
    Scalar,
    /// Input equals the trailing dims of the output.
    Suffix(usize),
    /// Input repeats along trailing dims: index = i / repeat.
    Prefix(usize),
    General(Vec<usize>),
}

impl IndexMap {
    fn new(out: &[usize], input: &[usize]) -> Self {
        let n_in = numel(input);
        if out == input {
            return IndexMap::Same;
        }
        if n_in == 1 {
            return IndexMap::Scalar;
        }
        let trimmed: &[usize] = {
            let lead = input.iter().take_while(|&&d| d == 1).count();
            &input[lead..]
        };
        if out.ends_with(trimmed) {
            return IndexMap::Suffix(n_in);
        }
        // input [.., d, 1, 1] against out [.., d, a, b]
        let ones = input.iter().rev().take_while(|&&d| d == 1).count();
        let head = &input[..input.len() - ones];
        if input.len() == out.len() && out[..head.len()] == *head {
            return IndexMap::Prefix(numel(&out[head.len()..]));
        }

        let rank = out.len();
        let pad = rank - input.len();
        let mut strides = vec![0usize; rank];
        let mut s = 1;
        for d in (0..input.len()).rev() {
            strides[d + pad] = if input[d] == 1 { 0 } else { s };
            s *= input[d];
        }
        let total = numel(out);
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        let mut flat = 0usize;
        for _ in 0..total {
            map.push(flat);
            for d in (0..rank).rev() {
                idx[d] += 1;
                flat += strides[d];
                if idx[d] < out[d] {
                    break;
                }
                flat -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        IndexMap::General(map)
    }

    #[inline]
    fn get(&self, i: usize) -> usize {
        match self {
            IndexMap::Same => i,
            IndexMap::Scalar => 0,
            IndexMap::Suffix(n) => i % n,
            IndexMap::Prefix(r) => i / r,
            IndexMap::General(m) => m[i],
        }
    }

    fn reduce(&self, n_in: usize, n_out: usize, value: impl Fn(usize) -> f64) -> Vec<f64> {
        match self {
            IndexMap::Same => (0..n_in).map(value).collect(),
            _ => {
                let mut acc = vec![0.0; n_in];
                for i in 0..n_out {
                    acc[self.get(i)] += value(i);
                }
                acc
            }
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize], context: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(a, b, context)),
        };
    }
    Ok(out)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let len = shape[axis];
    let inner = numel(&shape[axis + 1..]);
    (outer, len, inner)
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

const PAR_THRESHOLD: usize = 1 << 18;

/// Row-major `a[n×k] · b[k×m]`.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    let row = |(i, crow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m == 0 {
        return c;
    }
    if n * k * m >= PAR_THRESHOLD {
        c.par_chunks_mut(m).enumerate().for_each(row);
    } else {
        c.chunks_mut(m).enumerate().for_each(row);
    }
    c
}

/// `aᵀ · g` for `a[n×k]`, `g[n×m]`.
fn matmul_at_b(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let dst = &mut out[p * m..(p + 1) * m];
            for (d, gv) in dst.iter_mut().zip(grow) {
                *d += av * gv;
            }
        }
    }
    out
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let context = op.name();
        let (shape, data) = if self.shape() == other.shape() {
            let data = self
                .data()
                .iter()
                .zip(other.data())
                .map(|(&a, &b)| f(a, b))
                .collect();
            (self.shape().to_vec(), data)
        } else {
            let shape = broadcast_shape(self.shape(), other.shape(), context)?;
            let ia = IndexMap::new(&shape, self.shape());
            let ib = IndexMap::new(&shape, other.shape());
            let (ad, bd) = (self.data(), other.data());
            let data = (0..numel(&shape))
                .map(|i| f(ad[ia.get(i)], bd[ib.get(i)]))
                .collect();
            (shape, data)
        };
        let out = Tensor::from_parts(shape, data);
        Ok(record(op, &[self, other], out))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    /// `[.., n, k] · [k, m] → [.., n, m]`; leading dims of the left operand
    /// are flattened into rows.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if other.rank() != 2 || self.rank() < 1 || self.last_dim() != other.shape()[0] {
            return Err(Error::shape(self.shape(), other.shape(), "matmul"));
        }
        let k = other.shape()[0];
        let m = other.shape()[1];
        let n = self.numel() / k.max(1);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let data = matmul_kernel(self.data(), other.data(), n, k, m);
        Ok(record(
            Op::MatMul,
            &[self, other],
            Tensor::from_parts(shape, data),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let out = Tensor::scalar(self.data().iter().sum());
        record(Op::Sum, &[self], out)
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        let out = Tensor::scalar(self.data().iter().sum::<f64>() / n);
        record(Op::Mean, &[self], out)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::Domain {
                op: "sum_axis",
                detail: format!("axis {} out of range for shape {:?}", axis, self.shape()),
            });
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(record(
            Op::SumAxis { axis },
            &[self],
            Tensor::from_parts(shape, out),
        ))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let target = broadcast_shape(self.shape(), shape, "broadcast")?;
        if target != shape {
            return Err(Error::shape(self.shape(), shape, "broadcast"));
        }
        let map = IndexMap::new(shape, self.shape());
        let x = self.data();
        let data = (0..numel(shape)).map(|i| x[map.get(i)]).collect();
        Ok(record(
            Op::Broadcast,
            &[self],
            Tensor::from_parts(shape.to_vec(), data),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(self.shape(), shape, "reshape"));
        }
        let out = Tensor::from_parts(shape.to_vec(), self.to_vec());
        Ok(record(Op::Reshape, &[self], out))
    }

    /// Concatenation along the last axis; leading dims must agree.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Domain {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let lead = &first.shape()[..first.rank().saturating_sub(1)];
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[..p.rank().saturating_sub(1)] != lead {
                return Err(Error::shape(first.shape(), p.shape(), "concat"));
            }
        }
        let rows = first.rows();
        let total: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let w = p.last_dim();
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        *shape.last_mut().unwrap() = total;
        Ok(record(Op::Concat, parts, Tensor::from_parts(shape, data)))
    }

    /// Concatenation along the first axis; every part must agree on the
    /// trailing dims.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Domain {
            op: "concat_rows",
            detail: "no inputs".into(),
        })?;
        if first.rank() == 0 {
            return Err(Error::shape(first.shape(), &[1], "concat_rows"));
        }
        let tail = &first.shape()[1..];
        let mut flat = Vec::with_capacity(parts.len());
        let mut rows = 0;
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[1..] != tail {
                return Err(Error::shape(first.shape(), p.shape(), "concat_rows"));
            }
            rows += p.shape()[0];
            flat.push(p.reshape(&[1, p.numel()])?);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        Tensor::concat_last(&flat.iter().collect::<Vec<_>>())?.reshape(&shape)
    }

    /// Channels `[start, end)` of the last axis.
    pub fn slice_last(&self, start: usize, end: usize) -> Result<Tensor> {
        let width = self.last_dim();
        if start >= end || end > width || self.rank() == 0 {
            return Err(Error::Domain {
                op: "slice",
                detail: format!("range {}..{} invalid for last dim {}", start, end, width),
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows() * w);
        for row in self.data().chunks(width) {
            data.extend_from_slice(&row[start..end]);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        Ok(record(
            Op::Slice { start },
            &[self],
            Tensor::from_parts(shape, data),
        ))
    }

    fn unary(&self, u: Unary) -> Tensor {
        let data = self.data().iter().map(|&x| u.eval(x)).collect();
        record(
            Op::Unary(u),
            &[self],
            Tensor::from_parts(self.shape().to_vec(), data),
        )
    }

    fn check_nonneg(&self, op: &'static str) -> Result<()> {
        if let Some(v) = self.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain {
                op,
                detail: format!("negative input {}", v),
            });
        }
        Ok(())
    }

    pub fn sin(&self) -> Tensor {
        self.unary(Unary::Sin)
    }

    pub fn cos(&self) -> Tensor {
        self.unary(Unary::Cos)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        self.check_nonneg("log")?;
        Ok(self.unary(Unary::Log))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.check_nonneg("sqrt")?;
        Ok(self.unary(Unary::Sqrt))
    }

    /// Elementwise power with a constant exponent. Negative bases need an
    /// integral exponent.
    pub fn pow(&self, p: f64) -> Result<Tensor> {
        if p.fract() != 0.0 {
            self.check_nonneg("pow")?;
        }
        Ok(self.unary(Unary::Pow(p)))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Unary::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(Unary::LeakyRelu(slope))
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Unary::Softplus)
    }

    pub fn clamp_min(&self, min: f64) -> Tensor {
        self.unary(Unary::ClampMin(min))
    }

    pub fn abs(&self) -> Tensor {
        self.unary(Unary::Abs)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Unary::Neg)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Unary::Scale(c))
    }

    pub fn offset(&self, c: f64) -> Tensor {
        self.unary(Unary::Offset(c))
    }

    pub fn laplace_cdf(&self, beta: f64) -> Tensor {
        self.unary(Unary::LaplaceCdf(beta))
    }

    /// Exclusive prefix sum along the last axis.
    pub fn cumsum_exclusive(&self) -> Tensor {
        let len = self.last_dim().max(1);
        let mut data = vec![0.0; self.numel()];
        for (dst, src) in data.chunks_mut(len).zip(self.data().chunks(len)) {
            let mut acc = 0.0;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = acc;
                acc += s;
            }
        }
        record(
            Op::CumsumExclusive,
            &[self],
            Tensor::from_parts(self.shape().to_vec(), data),
        )
    }

    pub fn gather(&self, plan: Arc<GatherPlan>) -> Result<Tensor> {
        let sites = plan.validate(self)?;
        let channels = plan.layout.channels();
        let src = self.data();
        let mut out = vec![0.0; plan.rows * channels];
        for (r, dst) in out.chunks_mut(channels).enumerate() {
            for t in 0..plan.taps {
                let w = plan.weight[r * plan.taps + t];
                if w == 0.0 {
                    continue;
                }
                let s = plan.index[r * plan.taps + t];
                match plan.layout {
                    SourceLayout::ChannelsLast { .. } => {
                        for (d, v) in dst.iter_mut().zip(&src[s * channels..(s + 1) * channels]) {
                            *d += w * v;
                        }
                    }
                    SourceLayout::ChannelsFirst { .. } => {
                        for (c, d) in dst.iter_mut().enumerate() {
                            *d += w * src[c * sites + s];
                        }
                    }
                }
            }
        }
        let shape = plan.out_shape.clone();
        Ok(record(
            Op::Gather(plan),
            &[self],
            Tensor::from_parts(shape, out),
        ))
    }
}
