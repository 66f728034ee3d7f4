//! Operation kinds with shape inference, forward kernels and vector-Jacobian products.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower and upper bounds applied to the argument of `atanh`.
pub const ATANH_CLAMP: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    MatMul,
    /// Inputs: signal `[len, c_in]`, weight `[filter_width, c_in, c_out]`, bias `[c_out]`.
    Conv1d {
        filter_width: usize,
        stride: usize,
        zero_pad: bool,
    },
    Add,
    Sub,
    Mul,
    Scale(f64),
    Concat,
    Slice {
        start: usize,
        end: usize,
    },
    Reshape(Vec<usize>),
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softmax {
        axis: usize,
        temperature: f64,
    },
    LogSoftmax {
        axis: usize,
        temperature: f64,
    },
    ReduceSum,
    ReduceMean,
    MaxOverAxis {
        axis: usize,
    },
    CosineSimilarity,
    Atanh,
    EmbeddingLookup {
        ids: Vec<usize>,
    },
    /// Inputs: x `[n_in]`, h `[n_h]`, c `[n_h]`, W `[n_in + n_h, 4 n_h]`, b `[4 n_h]`.
    /// Output is `[h'; c']` of length `2 n_h`. Gate order is input, forget, cell, output.
    LstmCell,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Conv1d { .. } => "conv1d",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise_mul",
            OpKind::Scale(_) => "scale",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape(_) => "reshape",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Softmax { .. } => "softmax",
            OpKind::LogSoftmax { .. } => "log_softmax",
            OpKind::ReduceSum => "reduce_sum",
            OpKind::ReduceMean => "reduce_mean",
            OpKind::MaxOverAxis { .. } => "max_over_axis",
            OpKind::CosineSimilarity => "cosine_similarity",
            OpKind::Atanh => "atanh",
            OpKind::EmbeddingLookup { .. } => "embedding_lookup",
            OpKind::LstmCell => "lstm_cell",
        }
    }

    /// Output shape for the given input shapes, or a shape error.
    pub(crate) fn infer_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let name = self.name();
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::shape(name, format!("expected {n} inputs, got {}", inputs.len())));
            }
            Ok(())
        };
        match self {
            OpKind::Leaf => Err(Error::invalid("leaf has no inferred shape")),
            OpKind::MatMul => {
                arity(2)?;
                let (m, _, n) = matmul_dims(inputs[0], inputs[1])?;
                Ok(match (inputs[0].len(), inputs[1].len()) {
                    (2, 2) => vec![m, n],
                    (1, 2) => vec![n],
                    (2, 1) => vec![m],
                    _ => vec![1],
                })
            }
            OpKind::Conv1d {
                filter_width,
                stride,
                zero_pad,
            } => {
                arity(3)?;
                let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                if x.len() != 2 || w.len() != 3 || b.len() != 1 {
                    return Err(Error::shape(name, format!("ranks {x:?} {w:?} {b:?}")));
                }
                if w[0] != *filter_width || w[1] != x[1] || b[0] != w[2] {
                    return Err(Error::shape(name, format!("signal {x:?} weight {w:?} bias {b:?}")));
                }
                if *stride == 0 {
                    return Err(Error::shape(name, "stride must be positive"));
                }
                let out_len = conv_out_len(x[0], *filter_width, *stride, *zero_pad)
                    .ok_or_else(|| Error::shape(name, format!("signal length {} shorter than filter", x[0])))?;
                Ok(vec![out_len, w[2]])
            }
            OpKind::Add | OpKind::Sub => {
                arity(2)?;
                let (a, b) = (inputs[0], inputs[1]);
                if a == b || (a.len() == 2 && b.len() == 1 && a[1] == b[0]) {
                    Ok(a.to_vec())
                } else {
                    Err(Error::shape(name, format!("{a:?} vs {b:?}")))
                }
            }
            OpKind::Mul => {
                arity(2)?;
                if inputs[0] != inputs[1] {
                    return Err(Error::shape(name, format!("{:?} vs {:?}", inputs[0], inputs[1])));
                }
                Ok(inputs[0].to_vec())
            }
            OpKind::Concat => {
                if inputs.is_empty() {
                    return Err(Error::shape(name, "no inputs"));
                }
                let tail = &inputs[0][1..];
                let mut lead = 0;
                for s in inputs {
                    if s.len() != inputs[0].len() || &s[1..] != tail {
                        return Err(Error::shape(name, format!("{:?} vs {s:?}", inputs[0])));
                    }
                    lead += s[0];
                }
                let mut out = vec![lead];
                out.extend_from_slice(tail);
                Ok(out)
            }
            OpKind::Slice { start, end } => {
                arity(1)?;
                let s = inputs[0];
                if start >= end || *end > s[0] {
                    return Err(Error::shape(name, format!("range {start}..{end} of {s:?}")));
                }
                let mut out = vec![end - start];
                out.extend_from_slice(&s[1..]);
                Ok(out)
            }
            OpKind::Reshape(shape) => {
                arity(1)?;
                let from: usize = inputs[0].iter().product();
                let to: usize = shape.iter().product();
                if from != to || shape.contains(&0) {
                    return Err(Error::shape(name, format!("{:?} -> {shape:?}", inputs[0])));
                }
                Ok(shape.clone())
            }
            OpKind::Tanh | OpKind::Sigmoid | OpKind::Exp | OpKind::Log | OpKind::Atanh | OpKind::Scale(_) => {
                arity(1)?;
                Ok(inputs[0].to_vec())
            }
            OpKind::Softmax { axis, temperature } | OpKind::LogSoftmax { axis, temperature } => {
                arity(1)?;
                if *axis >= inputs[0].len() {
                    return Err(Error::shape(name, format!("axis {axis} of {:?}", inputs[0])));
                }
                if !(*temperature > 0.0) {
                    return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
                }
                Ok(inputs[0].to_vec())
            }
            OpKind::ReduceSum | OpKind::ReduceMean => {
                arity(1)?;
                Ok(vec![1])
            }
            OpKind::MaxOverAxis { axis } => {
                arity(1)?;
                let s = inputs[0];
                if *axis >= s.len() {
                    return Err(Error::shape(name, format!("axis {axis} of {s:?}")));
                }
                let mut out: Vec<usize> = s.iter().enumerate().filter(|&(i, _)| i != *axis).map(|(_, &d)| d).collect();
                if out.is_empty() {
                    out.push(1);
                }
                Ok(out)
            }
            OpKind::CosineSimilarity => {
                arity(2)?;
                if inputs[0].len() != 1 || inputs[0] != inputs[1] {
                    return Err(Error::shape(name, format!("{:?} vs {:?}", inputs[0], inputs[1])));
                }
                Ok(vec![1])
            }
            OpKind::EmbeddingLookup { ids } => {
                arity(1)?;
                let t = inputs[0];
                if t.len() != 2 {
                    return Err(Error::shape(name, format!("table must be rank 2, got {t:?}")));
                }
                if ids.is_empty() {
                    return Err(Error::shape(name, "no ids"));
                }
                if let Some(&id) = ids.iter().find(|&&id| id >= t[0]) {
                    return Err(Error::TokenOutOfRange { id, vocab: t[0] });
                }
                Ok(vec![ids.len(), t[1]])
            }
            OpKind::LstmCell => {
                arity(5)?;
                let (x, h, c, w, b) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
                let ok = x.len() == 1
                    && h.len() == 1
                    && c == h
                    && w.len() == 2
                    && w[0] == x[0] + h[0]
                    && w[1] == 4 * h[0]
                    && b.len() == 1
                    && b[0] == 4 * h[0];
                if !ok {
                    return Err(Error::shape(name, format!("x {x:?} h {h:?} c {c:?} W {w:?} b {b:?}")));
                }
                Ok(vec![2 * h[0]])
            }
        }
    }

    pub(crate) fn forward(&self, inputs: &[&Tensor], out_shape: &[usize], node: usize) -> Result<Tensor> {
        let data = match self {
            OpKind::Leaf => unreachable!("leaves are not evaluated"),
            OpKind::MatMul => {
                let (m, k, n) = matmul_dims(inputs[0].shape(), inputs[1].shape())?;
                matmul(inputs[0].data(), inputs[1].data(), m, k, n)
            }
            OpKind::Conv1d {
                filter_width,
                stride,
                zero_pad,
            } => conv1d_forward(inputs[0], inputs[1], inputs[2], *filter_width, *stride, *zero_pad, out_shape[0]),
            OpKind::Add => broadcast_binary(inputs[0], inputs[1], |a, b| a + b),
            OpKind::Sub => broadcast_binary(inputs[0], inputs[1], |a, b| a - b),
            OpKind::Mul => inputs[0].data().iter().zip(inputs[1].data()).map(|(a, b)| a * b).collect(),
            OpKind::Scale(c) => inputs[0].data().iter().map(|v| v * c).collect(),
            OpKind::Concat => inputs.iter().flat_map(|t| t.data().iter().copied()).collect(),
            OpKind::Slice { start, end } => {
                let inner: usize = inputs[0].shape()[1..].iter().product();
                inputs[0].data()[start * inner..end * inner].to_vec()
            }
            OpKind::Reshape(_) => inputs[0].data().to_vec(),
            OpKind::Tanh => inputs[0].data().iter().map(|v| v.tanh()).collect(),
            OpKind::Sigmoid => inputs[0].data().iter().map(|&v| sigmoid(v)).collect(),
            OpKind::Exp => inputs[0].data().iter().map(|v| v.exp()).collect(),
            OpKind::Log => inputs[0].data().iter().map(|v| v.ln()).collect(),
            OpKind::Atanh => inputs[0]
                .data()
                .iter()
                .map(|v| v.clamp(-ATANH_CLAMP, ATANH_CLAMP).atanh())
                .collect(),
            OpKind::Softmax { axis, temperature } => softmax_along(inputs[0], *axis, *temperature, false),
            OpKind::LogSoftmax { axis, temperature } => softmax_along(inputs[0], *axis, *temperature, true),
            OpKind::ReduceSum => vec![inputs[0].sum()],
            OpKind::ReduceMean => vec![inputs[0].sum() / inputs[0].len() as f64],
            OpKind::MaxOverAxis { axis } => {
                let (outer, n, inner) = axis_split(inputs[0].shape(), *axis);
                let x = inputs[0].data();
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let best = (0..n).map(|k| x[(o * n + k) * inner + i]).fold(f64::NEG_INFINITY, f64::max);
                        out.push(best);
                    }
                }
                out
            }
            OpKind::CosineSimilarity => {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                let na = norm(a);
                let nb = norm(b);
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::ZeroNorm(node));
                }
                vec![dot(a, b) / (na * nb)]
            }
            OpKind::EmbeddingLookup { ids } => {
                let table = inputs[0];
                let d = table.shape()[1];
                let mut out = Vec::with_capacity(ids.len() * d);
                for &id in ids {
                    out.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
                }
                out
            }
            OpKind::LstmCell => {
                let gates = lstm_gates(inputs);
                let mut out = gates.h_next;
                out.extend_from_slice(&gates.c_next);
                out
            }
        };
        Ok(Tensor::from_parts(out_shape.to_vec(), data))
    }

    /// Gradients with respect to each input given the upstream gradient.
    pub(crate) fn vjp(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let g = grad.data();
        match self {
            OpKind::Leaf => Vec::new(),
            OpKind::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k, n) = matmul_dims(a.shape(), b.shape()).expect("shapes checked at construction");
                // ga[m,k] = g[m,n] · bᵀ ; gb[k,n] = aᵀ · g
                let bd = b.data();
                let ad = a.data();
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        ga[i * k + p] = dot(grow, &bd[p * n..(p + 1) * n]);
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ad[i * k + p];
                        if av != 0.0 {
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_parts(a.shape().to_vec(), ga),
                    Tensor::from_parts(b.shape().to_vec(), gb),
                ]
            }
            OpKind::Conv1d {
                filter_width,
                stride,
                zero_pad,
            } => conv1d_vjp(inputs[0], inputs[1], grad, *filter_width, *stride, *zero_pad),
            OpKind::Add | OpKind::Sub => {
                let sign = if matches!(self, OpKind::Add) { 1.0 } else { -1.0 };
                let ga = grad.clone();
                let gb = if inputs[1].shape() == grad.shape() {
                    grad.scaled(sign)
                } else {
                    let cols = inputs[1].len();
                    let mut acc = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += sign * v;
                        }
                    }
                    Tensor::from_parts(inputs[1].shape().to_vec(), acc)
                };
                vec![ga, gb]
            }
            OpKind::Mul => {
                let ga = g.iter().zip(inputs[1].data()).map(|(a, b)| a * b).collect();
                let gb = g.iter().zip(inputs[0].data()).map(|(a, b)| a * b).collect();
                vec![
                    Tensor::from_parts(inputs[0].shape().to_vec(), ga),
                    Tensor::from_parts(inputs[1].shape().to_vec(), gb),
                ]
            }
            OpKind::Scale(c) => vec![grad.scaled(*c)],
            OpKind::Concat => {
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|t| {
                        let part = g[offset..offset + t.len()].to_vec();
                        offset += t.len();
                        Tensor::from_parts(t.shape().to_vec(), part)
                    })
                    .collect()
            }
            OpKind::Slice { start, .. } => {
                let inner: usize = inputs[0].shape()[1..].iter().product();
                let mut gx = vec![0.0; inputs[0].len()];
                gx[start * inner..start * inner + g.len()].copy_from_slice(g);
                vec![Tensor::from_parts(inputs[0].shape().to_vec(), gx)]
            }
            OpKind::Reshape(_) => vec![Tensor::from_parts(inputs[0].shape().to_vec(), g.to_vec())],
            OpKind::Tanh => vec![elementwise(inputs[0], output.data(), g, |_, y, g| g * (1.0 - y * y))],
            OpKind::Sigmoid => vec![elementwise(inputs[0], output.data(), g, |_, y, g| g * y * (1.0 - y))],
            OpKind::Exp => vec![elementwise(inputs[0], output.data(), g, |_, y, g| g * y)],
            OpKind::Log => vec![elementwise(inputs[0], output.data(), g, |x, _, g| g / x)],
            OpKind::Atanh => vec![elementwise(inputs[0], output.data(), g, |x, _, g| {
                if x.abs() > ATANH_CLAMP {
                    0.0
                } else {
                    g / (1.0 - x * x)
                }
            })],
            OpKind::Softmax { axis, temperature } => {
                let (outer, n, inner) = axis_split(output.shape(), *axis);
                let y = output.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let s: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..n {
                            gx[idx(k)] = y[idx(k)] * (g[idx(k)] - s) / temperature;
                        }
                    }
                }
                vec![Tensor::from_parts(output.shape().to_vec(), gx)]
            }
            OpKind::LogSoftmax { axis, temperature } => {
                let (outer, n, inner) = axis_split(output.shape(), *axis);
                let y = output.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let s: f64 = (0..n).map(|k| g[idx(k)]).sum();
                        for k in 0..n {
                            gx[idx(k)] = (g[idx(k)] - y[idx(k)].exp() * s) / temperature;
                        }
                    }
                }
                vec![Tensor::from_parts(output.shape().to_vec(), gx)]
            }
            OpKind::ReduceSum => vec![Tensor::filled(inputs[0].shape(), g[0])],
            OpKind::ReduceMean => vec![Tensor::filled(inputs[0].shape(), g[0] / inputs[0].len() as f64)],
            OpKind::MaxOverAxis { axis } => {
                let (outer, n, inner) = axis_split(inputs[0].shape(), *axis);
                let x = inputs[0].data();
                let mut gx = vec![0.0; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let best = (0..n)
                            .max_by(|&p, &q| x[idx(p)].total_cmp(&x[idx(q)]).then(q.cmp(&p)))
                            .expect("nonempty axis");
                        gx[idx(best)] += g[o * inner + i];
                    }
                }
                vec![Tensor::from_parts(inputs[0].shape().to_vec(), gx)]
            }
            OpKind::CosineSimilarity => {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                let (na, nb) = (norm(a), norm(b));
                let y = output.data()[0];
                let ga = a
                    .iter()
                    .zip(b)
                    .map(|(&ai, &bi)| g[0] * (bi / (na * nb) - y * ai / (na * na)))
                    .collect();
                let gb = a
                    .iter()
                    .zip(b)
                    .map(|(&ai, &bi)| g[0] * (ai / (na * nb) - y * bi / (nb * nb)))
                    .collect();
                vec![
                    Tensor::from_parts(inputs[0].shape().to_vec(), ga),
                    Tensor::from_parts(inputs[1].shape().to_vec(), gb),
                ]
            }
            OpKind::EmbeddingLookup { ids } => {
                let d = inputs[0].shape()[1];
                let mut gt = vec![0.0; inputs[0].len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g[r * d + j];
                    }
                }
                vec![Tensor::from_parts(inputs[0].shape().to_vec(), gt)]
            }
            OpKind::LstmCell => lstm_vjp(inputs, g),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Output length of a 1-d convolution. Zero same-padding gives `ceil(len / stride)`.
pub fn conv_out_len(len: usize, filter_width: usize, stride: usize, zero_pad: bool) -> Option<usize> {
    if zero_pad {
        Some(len.div_ceil(stride))
    } else if len >= filter_width {
        Some((len - filter_width) / stride + 1)
    } else {
        None
    }
}

fn conv_left_pad(len: usize, out_len: usize, filter_width: usize, stride: usize, zero_pad: bool) -> usize {
    if !zero_pad {
        return 0;
    }
    let needed = (out_len - 1) * stride + filter_width;
    needed.saturating_sub(len) / 2
}

fn conv1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    filter_width: usize,
    stride: usize,
    zero_pad: bool,
    out_len: usize,
) -> Vec<f64> {
    let (len, cin) = (x.shape()[0], x.shape()[1]);
    let cout = w.shape()[2];
    let pad = conv_left_pad(len, out_len, filter_width, stride, zero_pad);
    let (xd, wd) = (x.data(), w.data());
    let mut out = Vec::with_capacity(out_len * cout);
    for o in 0..out_len {
        let mut acc = b.data().to_vec();
        for k in 0..filter_width {
            let p = (o * stride + k) as isize - pad as isize;
            if p < 0 || p as usize >= len {
                continue;
            }
            let xrow = &xd[p as usize * cin..(p as usize + 1) * cin];
            for (i, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[(k * cin + i) * cout..(k * cin + i + 1) * cout];
                for (a, &wv) in acc.iter_mut().zip(wrow) {
                    *a += xv * wv;
                }
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

fn conv1d_vjp(x: &Tensor, w: &Tensor, grad: &Tensor, filter_width: usize, stride: usize, zero_pad: bool) -> Vec<Tensor> {
    let (len, cin) = (x.shape()[0], x.shape()[1]);
    let cout = w.shape()[2];
    let out_len = grad.shape()[0];
    let pad = conv_left_pad(len, out_len, filter_width, stride, zero_pad);
    let (xd, wd, g) = (x.data(), w.data(), grad.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; cout];
    for o in 0..out_len {
        let grow = &g[o * cout..(o + 1) * cout];
        for (a, v) in gb.iter_mut().zip(grow) {
            *a += v;
        }
        for k in 0..filter_width {
            let p = (o * stride + k) as isize - pad as isize;
            if p < 0 || p as usize >= len {
                continue;
            }
            let p = p as usize;
            for i in 0..cin {
                let base = (k * cin + i) * cout;
                let wrow = &wd[base..base + cout];
                gx[p * cin + i] += dot(wrow, grow);
                let xv = xd[p * cin + i];
                if xv != 0.0 {
                    for (d, &gv) in gw[base..base + cout].iter_mut().zip(grow) {
                        *d += xv * gv;
                    }
                }
            }
        }
    }
    vec![
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(w.shape().to_vec(), gw),
        Tensor::from_parts(vec![cout], gb),
    ]
}

/// Logical `(m, k, n)` for a product; rank-1 left operands act as rows, rank-1 right operands as columns.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    let (m, ka) = match a.len() {
        1 => (1, a[0]),
        2 => (a[0], a[1]),
        _ => return Err(Error::shape("matmul", format!("left operand rank {}", a.len()))),
    };
    let (kb, n) = match b.len() {
        1 => (b[0], 1),
        2 => (b[0], b[1]),
        _ => return Err(Error::shape("matmul", format!("right operand rank {}", b.len()))),
    };
    if ka != kb {
        return Err(Error::shape("matmul", format!("{a:?} x {b:?}")));
    }
    Ok((m, ka, n))
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (d, &bv) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *d += av * bv;
            }
        }
    }
    out
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let cols = b.len();
        a.data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
            .collect()
    }
}

fn elementwise(x: &Tensor, y: &[f64], g: &[f64], f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let data = x.data().iter().zip(y).zip(g).map(|((&x, &y), &g)| f(x, y, g)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softmax_along(x: &Tensor, axis: usize, temperature: f64, log: bool) -> Vec<f64> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| xd[idx(k)] / temperature).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..n).map(|k| (xd[idx(k)] / temperature - max).exp()).sum();
            let lse = max + sum.ln();
            for k in 0..n {
                let z = xd[idx(k)] / temperature - lse;
                out[idx(k)] = if log { z } else { z.exp() };
            }
        }
    }
    out
}

/// Softmax of a slice at the given temperature, computed stably.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let t = Tensor::from_parts(vec![logits.len()], logits.to_vec());
    softmax_along(&t, 0, temperature, false)
}

/// Log-softmax of a slice at the given temperature.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let t = Tensor::from_parts(vec![logits.len()], logits.to_vec());
    softmax_along(&t, 0, temperature, true)
}

struct LstmGates {
    input: Vec<f64>,
    forget: Vec<f64>,
    cell: Vec<f64>,
    output: Vec<f64>,
    c_next: Vec<f64>,
    h_next: Vec<f64>,
}

fn lstm_gates(inputs: &[&Tensor]) -> LstmGates {
    let (x, h, c, w, b) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
    let nh = h.len();
    let mut z = b.data().to_vec();
    let wd = w.data();
    let cols = 4 * nh;
    for (r, &v) in x.data().iter().chain(h.data()).enumerate() {
        if v == 0.0 {
            continue;
        }
        for (a, &wv) in z.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
            *a += v * wv;
        }
    }
    let input: Vec<f64> = z[..nh].iter().map(|&v| sigmoid(v)).collect();
    let forget: Vec<f64> = z[nh..2 * nh].iter().map(|&v| sigmoid(v)).collect();
    let cell: Vec<f64> = z[2 * nh..3 * nh].iter().map(|v| v.tanh()).collect();
    let output: Vec<f64> = z[3 * nh..].iter().map(|&v| sigmoid(v)).collect();
    let c_next: Vec<f64> = (0..nh).map(|j| forget[j] * c.data()[j] + input[j] * cell[j]).collect();
    let h_next = (0..nh).map(|j| output[j] * c_next[j].tanh()).collect();
    LstmGates {
        input,
        forget,
        cell,
        output,
        c_next,
        h_next,
    }
}

fn lstm_vjp(inputs: &[&Tensor], g: &[f64]) -> Vec<Tensor> {
    let (x, h, c, w) = (inputs[0], inputs[1], inputs[2], inputs[3]);
    let nh = h.len();
    let gates = lstm_gates(inputs);
    let (gh, gc) = g.split_at(nh);
    let mut dz = vec![0.0; 4 * nh];
    let mut gc_prev = vec![0.0; nh];
    for j in 0..nh {
        let tc = gates.c_next[j].tanh();
        let go = gh[j] * tc;
        let gct = gc[j] + gh[j] * gates.output[j] * (1.0 - tc * tc);
        let (i, f, gg, o) = (gates.input[j], gates.forget[j], gates.cell[j], gates.output[j]);
        dz[j] = gct * gg * i * (1.0 - i);
        dz[nh + j] = gct * c.data()[j] * f * (1.0 - f);
        dz[2 * nh + j] = gct * i * (1.0 - gg * gg);
        dz[3 * nh + j] = go * o * (1.0 - o);
        gc_prev[j] = gct * f;
    }
    let cols = 4 * nh;
    let wd = w.data();
    let stacked: Vec<f64> = x.data().iter().chain(h.data()).copied().collect();
    let mut gw = vec![0.0; wd.len()];
    let mut gstack = vec![0.0; stacked.len()];
    for (r, &v) in stacked.iter().enumerate() {
        let wrow = &wd[r * cols..(r + 1) * cols];
        gstack[r] = dot(wrow, &dz);
        if v != 0.0 {
            for (d, &dzv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(&dz) {
                *d += v * dzv;
            }
        }
    }
    let nx = x.len();
    vec![
        Tensor::from_parts(x.shape().to_vec(), gstack[..nx].to_vec()),
        Tensor::from_parts(h.shape().to_vec(), gstack[nx..].to_vec()),
        Tensor::from_parts(c.shape().to_vec(), gc_prev),
        Tensor::from_parts(w.shape().to_vec(), gw),
        Tensor::from_parts(vec![4 * nh], dz),
    ]
}
