use std::fmt;

use super::conv::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-supplied backward rule for [`Graph::custom`].
pub trait BackwardRule: Send + Sync {
    /// Returns one gradient per input, each the same length as that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    MulConst(Var, Vec<f64>),
    Sum(Var),
    Mean(Var, Vec<usize>),
    Reshape(Var),
    Concat(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeometry,
    },
    ConvT2d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeometry,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Custom(Vec<Var>, Box<dyn BackwardRule>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::Clamp(..) => "clamp",
            Op::MulConst(..) => "mul_const",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvT2d { .. } => "conv_transpose2d",
            Op::Linear { .. } => "linear",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Custom(..) => "custom",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-forward-pass tape. Nodes are appended in execution order, so the
/// node list is already topologically sorted.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it is differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        let value = Tensor {
            grad: None,
            ..tensor
        };
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient from the most recent [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copy of the recorded value with its gradient attached.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor {
        let mut t = self.value(v).clone();
        t.requires_grad = self.nodes[v.0].requires_grad;
        t.grad = self.grad(v).map(<[f64]>::to_vec);
        t
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor {
                requires_grad,
                ..value
            },
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::InvalidShape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect())?;
        self.push(out, op, &[a])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::AddScalar(a), |v| v + c)
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.map(a, Op::LeakyRelu(a, alpha), |v| if v > 0.0 { v } else { alpha * v })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Abs(a), f64::abs)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(a, Op::Clamp(a, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        if factors.len() != self.value(a).numel() {
            return Err(Error::InvalidShape("mul_const length mismatch".into()));
        }
        let x = self.value(a);
        let data = x.data().iter().zip(&factors).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(out, Op::MulConst(a, factors), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Arithmetic mean over `axes` (all axes when `None`); reduced axes are
    /// dropped from the output shape.
    pub fn mean(&mut self, a: Var, axes: Option<&[usize]>) -> Result<Var> {
        let x = self.value(a);
        if x.numel() == 0 {
            return Err(Error::Domain("mean of empty tensor".into()));
        }
        let rank = x.shape().len();
        let axes: Vec<usize> = match axes {
            None => (0..rank).collect(),
            Some(ax) => {
                let mut ax = ax.to_vec();
                ax.sort_unstable();
                ax.dedup();
                if ax.iter().any(|&d| d >= rank) {
                    return Err(Error::InvalidShape(format!(
                        "mean axes {ax:?} invalid for shape {:?}",
                        x.shape()
                    )));
                }
                ax
            }
        };
        let (out_shape, map, count) = reduction_map(x.shape(), &axes);
        let mut out = vec![0.0; out_shape.iter().product()];
        for (v, &o) in x.data().iter().zip(&map) {
            out[o] += v;
        }
        out.iter_mut().for_each(|v| *v /= count as f64);
        let t = Tensor::new(&out_shape, out)?;
        self.push(t, Op::Mean(a, axes), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a), &[a])
    }

    /// Channel-wise concatenation of two `[B, C, H, W]` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::InvalidShape(format!(
                "concat_skip needs matching batch and spatial dims, got {sa:?} and {sb:?}"
            )));
        }
        let (bsz, c1, c2, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let shape = [bsz, c1 + c2, sa[2], sa[3]];
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(bsz * (c1 + c2) * plane);
        for i in 0..bsz {
            data.extend_from_slice(&x[i * c1 * plane..(i + 1) * c1 * plane]);
            data.extend_from_slice(&y[i * c2 * plane..(i + 1) * c2 * plane]);
        }
        let t = Tensor::new(&shape, data)?;
        self.push(t, Op::Concat(a, b), &[a, b])
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeometry::conv(self.shape(x), self.shape(k), stride, padding)?;
        let out = conv::conv2d_forward(self.value(x), self.value(k), self.value(b), stride, padding)?;
        self.push(out, Op::Conv2d { x, k, b, geom }, &[x, k, b])
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeometry::transposed(self.shape(x), self.shape(k), stride, padding)?;
        let out = conv::conv_transpose2d_forward(
            self.value(x),
            self.value(k),
            self.value(b),
            stride,
            padding,
        )?;
        self.push(out, Op::ConvT2d { x, k, b, geom }, &[x, k, b])
    }

    /// `x[B, in] · w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::InvalidShape(format!(
                "linear: x {sx:?}, w {sw:?}, b {sb:?}"
            )));
        }
        let (bsz, fin, fout) = (sx[0], sx[1], sw[0]);
        let mut out = Vec::with_capacity(bsz * fout);
        for _ in 0..bsz {
            out.extend_from_slice(self.value(b).data());
        }
        conv::gemm(bsz, fin, fout, self.value(x).data(), false, self.value(w).data(), true, 1.0, &mut out);
        let t = Tensor::new(&[bsz, fout], out)?;
        self.push(t, Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Batch normalization over axis 1. In training mode the batch statistics
    /// are used and returned as `(mean, biased variance)` per channel; in
    /// evaluation mode `running` supplies them.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::InvalidShape(format!("batch_norm on {shape:?}")));
        }
        let (bsz, ch) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::InvalidShape(format!(
                "batch_norm affine params must be [{ch}]"
            )));
        }
        let n = bsz * plane;
        let train = running.is_none();
        if train && n < 2 {
            return Err(Error::Domain(format!(
                "batch_norm in training mode needs at least 2 values per channel, got {n}"
            )));
        }
        let xd = self.value(x).data();
        let (mean, var) = match running {
            Some((m, v)) => {
                if m.len() != ch || v.len() != ch {
                    return Err(Error::InvalidShape("running stats length".into()));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let vals = (0..bsz).flat_map(|b| xd[(b * ch + c) * plane..][..plane].iter());
                    let m = vals.clone().sum::<f64>() / n as f64;
                    mean[c] = m;
                    var[c] = vals.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..bsz {
            for c in 0..ch {
                let off = (b * ch + c) * plane;
                for i in off..off + plane {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + bt[c];
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        let v = self.push(t, op, &[x, gamma, beta])?;
        Ok((v, mean, var))
    }

    /// Records an op with a caller-supplied output and backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor,
        rule: Box<dyn BackwardRule>,
    ) -> Result<Var> {
        self.push(output, Op::Custom(inputs.to_vec(), rule), inputs)
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients from any previous
    /// sweep are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                let contributions = self.backward_node(i, &gout);
                for (v, g) in contributions {
                    accumulate(&mut self.grads[v.0], g);
                }
            }
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, gout: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut out = Vec::new();
        let mut emit = |v: Var, f: &dyn Fn() -> Vec<f64>| {
            if self.needs(v) {
                out.push((v, f()));
            }
        };
        let x_of = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, &|| gout.to_vec());
                emit(*b, &|| gout.to_vec());
            }
            Op::Sub(a, b) => {
                emit(*a, &|| gout.to_vec());
                emit(*b, &|| gout.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                emit(*a, &|| gout.iter().zip(x_of(*b)).map(|(g, q)| g * q).collect());
                emit(*b, &|| gout.iter().zip(x_of(*a)).map(|(g, p)| g * p).collect());
            }
            Op::Scale(a, c) => emit(*a, &|| gout.iter().map(|g| g * c).collect()),
            Op::AddScalar(a) => emit(*a, &|| gout.to_vec()),
            Op::LeakyRelu(a, alpha) => emit(*a, &|| {
                gout.iter()
                    .zip(x_of(*a))
                    .map(|(g, &v)| if v > 0.0 { *g } else { alpha * g })
                    .collect()
            }),
            Op::Sigmoid(a) => emit(*a, &|| {
                gout.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect()
            }),
            Op::Tanh(a) => emit(*a, &|| {
                gout.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect()
            }),
            Op::Log(a) => emit(*a, &|| gout.iter().zip(x_of(*a)).map(|(g, v)| g / v).collect()),
            Op::Abs(a) => emit(*a, &|| {
                gout.iter()
                    .zip(x_of(*a))
                    .map(|(g, &v)| if v > 0.0 { *g } else if v < 0.0 { -g } else { 0.0 })
                    .collect()
            }),
            Op::Clamp(a, lo, hi) => emit(*a, &|| {
                gout.iter()
                    .zip(x_of(*a))
                    .map(|(g, &v)| if v < *lo || v > *hi { 0.0 } else { *g })
                    .collect()
            }),
            Op::MulConst(a, f) => emit(*a, &|| gout.iter().zip(f).map(|(g, q)| g * q).collect()),
            Op::Sum(a) => emit(*a, &|| vec![gout[0]; self.value(*a).numel()]),
            Op::Mean(a, axes) => emit(*a, &|| {
                let (_, map, count) = reduction_map(self.shape(*a), axes);
                map.iter().map(|&o| gout[o] / count as f64).collect()
            }),
            Op::Reshape(a) => emit(*a, &|| gout.to_vec()),
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bsz, c1, c2, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                let split = |first: bool| {
                    let mut g = Vec::new();
                    for i in 0..bsz {
                        let base = i * (c1 + c2) * plane;
                        if first {
                            g.extend_from_slice(&gout[base..base + c1 * plane]);
                        } else {
                            g.extend_from_slice(&gout[base + c1 * plane..base + (c1 + c2) * plane]);
                        }
                    }
                    g
                };
                emit(*a, &|| split(true));
                emit(*b, &|| split(false));
            }
            Op::Conv2d { x, k, b, geom } => {
                let need = [self.needs(*x), self.needs(*k), self.needs(*b)];
                let grads = conv::conv2d_backward(self.value(*x), self.value(*k), geom, gout, need);
                for (v, g) in [*x, *k, *b].into_iter().zip(grads) {
                    if let Some(g) = g {
                        out.push((v, g));
                    }
                }
            }
            Op::ConvT2d { x, k, b, geom } => {
                let need = [self.needs(*x), self.needs(*k), self.needs(*b)];
                let grads =
                    conv::conv_transpose2d_backward(self.value(*x), self.value(*k), geom, gout, need);
                for (v, g) in [*x, *k, *b].into_iter().zip(grads) {
                    if let Some(g) = g {
                        out.push((v, g));
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (bsz, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                emit(*x, &|| {
                    let mut dx = vec![0.0; bsz * fin];
                    conv::gemm(bsz, fout, fin, gout, false, x_of(*w), false, 0.0, &mut dx);
                    dx
                });
                emit(*w, &|| {
                    let mut dw = vec![0.0; fout * fin];
                    conv::gemm(fout, bsz, fin, gout, true, x_of(*x), false, 0.0, &mut dw);
                    dw
                });
                emit(*b, &|| {
                    let mut db = vec![0.0; fout];
                    for row in gout.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    db
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = self.shape(*x);
                let (bsz, ch) = (shape[0], shape[1]);
                let plane: usize = shape[2..].iter().product();
                let n = (bsz * plane) as f64;
                let mut sum_g = vec![0.0; ch];
                let mut sum_gx = vec![0.0; ch];
                for b in 0..bsz {
                    for c in 0..ch {
                        let off = (b * ch + c) * plane;
                        for j in off..off + plane {
                            sum_g[c] += gout[j];
                            sum_gx[c] += gout[j] * xhat[j];
                        }
                    }
                }
                let gam = x_of(*gamma);
                emit(*x, &|| {
                    let mut dx = vec![0.0; gout.len()];
                    for b in 0..bsz {
                        for c in 0..ch {
                            let off = (b * ch + c) * plane;
                            let s = gam[c] * inv_std[c];
                            for j in off..off + plane {
                                dx[j] = if *train {
                                    s * (gout[j] - sum_g[c] / n - xhat[j] * sum_gx[c] / n)
                                } else {
                                    s * gout[j]
                                };
                            }
                        }
                    }
                    dx
                });
                emit(*gamma, &|| sum_gx.clone());
                emit(*beta, &|| sum_g.clone());
            }
            Op::Custom(inputs, rule) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = rule.backward(&ins, &node.value, gout);
                for (v, g) in inputs.iter().zip(grads) {
                    if self.needs(*v) {
                        out.push((*v, g));
                    }
                }
            }
        }
        out
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
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

/// For each flat input index, the flat output index after reducing `axes`.
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>, usize) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(d, _)| !axes.contains(d))
        .map(|(_, &s)| s)
        .collect();
    let count: usize = axes.iter().map(|&d| shape[d]).product();
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut o = 0;
        for (d, &i) in idx.iter().enumerate() {
            if !axes.contains(&d) {
                o = o * shape[d] + i;
            }
        }
        map.push(o);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, map, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn activations_pointwise() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, -1.0, 3.0]));
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(s).data()[0], 0.5);
        let l = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(l).data()[1], -0.2);
        assert_eq!(g.value(l).data()[2], 3.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn mean_values_and_axes() {
        let mut g = Graph::new();
        let x = g.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let m = g.mean(x, None).unwrap();
        assert_eq!(g.value(m).item().unwrap(), 2.5);

        let y = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let rows = g.mean(y, Some(&[1])).unwrap();
        assert_eq!(g.value(rows).data(), &[2.0, 5.0]);
        let cols = g.mean(y, Some(&[0])).unwrap();
        assert_eq!(g.value(cols).data(), &[2.5, 3.5, 4.5]);
        assert!(g.mean(y, Some(&[2])).is_err());

        let e = g.constant(Tensor::zeros(&[0]));
        assert!(matches!(g.mean(e, None), Err(Error::Domain(_))));
    }

    #[test]
    fn linear_loss_grad_is_mean_of_inputs() {
        // loss = mean(w * x) for scalar w
        let xs = [1.0, 2.0, 6.0];
        let mut g = Graph::new();
        let w = g.param(t(&[1, 1], &[0.7]));
        let x = g.constant(t(&[3, 1], &xs));
        let zero = g.constant(Tensor::zeros(&[1]));
        let wx = g.linear(x, w, zero).unwrap();
        let loss = g.mean(wx, None).unwrap();
        g.backward(loss).unwrap();
        assert!((g.grad(w).unwrap()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, -2.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn fan_out_gradients_sum() {
        let data = [0.3, -1.1, 2.0];
        let branch = |use_a: bool, use_b: bool| {
            let mut g = Graph::new();
            let x = g.param(t(&[3], &data));
            let mut terms = Vec::new();
            if use_a {
                let a = g.tanh(x).unwrap();
                terms.push(g.sum(a).unwrap());
            }
            if use_b {
                let b = g.mul(x, x).unwrap();
                terms.push(g.sum(b).unwrap());
            }
            let loss = if terms.len() == 2 {
                g.add(terms[0], terms[1]).unwrap()
            } else {
                terms[0]
            };
            g.backward(loss).unwrap();
            g.grad(x).unwrap().to_vec()
        };
        let both = branch(true, true);
        let a = branch(true, false);
        let b = branch(false, true);
        for i in 0..3 {
            assert!((both[i] - (a[i] + b[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let p = g.mul(x, c).unwrap();
        let loss = g.sum(p).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn batch_norm_constant_channel_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 1, 2, 2], 3.0));
        let gamma = g.constant(t(&[1], &[1.0]));
        let beta = g.constant(t(&[1], &[0.0]));
        let (y, m, v) = g.batch_norm(x, gamma, beta, 1e-5, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(m, vec![3.0]);
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn batch_norm_needs_two_values_in_training() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 1, 1], 3.0));
        let gamma = g.constant(t(&[1], &[1.0]));
        let beta = g.constant(t(&[1], &[0.0]));
        assert!(matches!(
            g.batch_norm(x, gamma, beta, 1e-5, None),
            Err(Error::Domain(_))
        ));
        assert!(g
            .batch_norm(x, gamma, beta, 1e-5, Some((&[0.0], &[1.0])))
            .is_ok());
    }

    #[test]
    fn concat_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let b = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(c), &[1, 5, 4, 4]);
        let d = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(matches!(g.concat_channels(a, d), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[1e308]));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
    }
}
