//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes that do not
//! depend on a trainable leaf carry no gradient, so constants and frozen
//! parameters cost nothing in [`Graph::backward`]. Shape errors inside the
//! graph are programming errors and panic; public model entry points
//! validate their inputs before building a graph.

mod kernels;

use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;

pub use kernels::Conv2dGeometry;

use crate::params::ParamStore;
use crate::signal::StftKernel;
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    Atan2(Var, Var),
    Gelu(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    LogClamp(Var, f64),
    MatMul(Var, Var),
    AddBias(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Gather(Var, Arc<Vec<usize>>),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Grn { x: Var, gamma: Var, beta: Var, eps: f64 },
    DepthwiseConv1d { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, geo: Conv2dGeometry },
    Istft { amp: Var, phase: Var, kernel: Arc<StftKernel> },
    StftMag { x: Var, kernel: Arc<StftKernel> },
    HingeMean(Var, f64),
    L1Mean(Var, Var),
    BceWithLogits(Var, Arc<Vec<f64>>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    aux: Vec<f64>,
    aux2: Vec<f64>,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of every trainable parameter bound into the graph. Parameters
    /// the loss does not reach get a zero gradient.
    pub fn params(&self, store: &ParamStore) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, v)| {
                let shape = store.get(name).ok()?.shape().to_vec();
                let g = self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(&shape));
                Some((name.clone(), g))
            })
            .collect()
    }
}

const LN_EPS: f64 = 1e-6;

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_full(value, op, requires_grad, Vec::new(), Vec::new())
    }

    fn push_full(
        &mut self,
        value: Tensor,
        op: Op,
        requires_grad: bool,
        aux: Vec<f64>,
        aux2: Vec<f64>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
            aux2,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_full(value, Op::Leaf, false, Vec::new(), Vec::new())
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_full(value, Op::Leaf, true, Vec::new(), Vec::new())
    }

    /// Binds a named parameter once per graph; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|_| panic!("parameter `{name}` missing from store"))
            .clone();
        let v = if trainable {
            self.variable(value)
        } else {
            self.constant(value)
        };
        if trainable {
            self.params.insert(name.to_string(), v);
        }
        v
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        self.push(value, Op::Mean(x), &[x])
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut iter = terms.iter();
        let first = *iter.next().expect("add_all needs at least one term");
        iter.fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sin(x), f64::sin)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, Op::Cos(x), f64::cos)
    }

    /// Elementwise `atan2(y, x)`, mapped into (−π, π].
    pub fn atan2(&mut self, y: Var, x: Var) -> Var {
        self.binary(y, x, Op::Atan2(y, x), |a, b| {
            crate::signal::wrapped_phase(Complex64::new(b, a))
        })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), kernels::gelu)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v >= 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `ln(max(x, floor))`.
    pub fn log_clamp(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Op::LogClamp(x, floor), |v| v.max(floor).ln())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2().expect("matmul lhs");
        let (k2, n) = self.value(b).dims2().expect("matmul rhs");
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let value = Tensor::new(vec![m, n], out).unwrap();
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let c = self.value(bias).len();
        let xv = self.value(x);
        assert_eq!(*xv.shape().last().unwrap(), c, "bias width");
        let b = self.value(bias).data();
        let data = xv.data().iter().enumerate().map(|(i, v)| v + b[i % c]).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).unwrap();
        self.push(value, Op::AddBias(x, bias), &[x, bias])
    }

    /// `x · w + b` for `x: rows × in`, `w: in × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).dims2().unwrap().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).dims2().unwrap();
                assert_eq!(r, rows, "concat row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out).unwrap();
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let (rows, cols) = self.value(x).dims2().unwrap();
        assert!(start + width <= cols, "column slice out of range");
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + width]);
        }
        let value = Tensor::new(vec![rows, width], out).unwrap();
        self.push(value, Op::SliceCols(x, start), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose().expect("transpose needs a matrix");
        self.push(value, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let value = self.value(x).clone().reshape(shape).expect("reshape");
        self.push(value, Op::Reshape(x), &[x])
    }

    /// Builds a tensor of `shape` whose element `i` is `x.flat[index[i]]`.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>, shape: Vec<usize>) -> Var {
        let src = self.value(x).data();
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, data).expect("gather shape");
        self.push(value, Op::Gather(x, index), &[x])
    }

    /// Layer normalization over the last axis (ε = 1e-6).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let cols = *self.value(x).shape().last().unwrap();
        let (y, xhat, inv) = kernels::layer_norm(
            self.value(x).data(),
            cols,
            self.value(gamma).data(),
            self.value(beta).data(),
            LN_EPS,
        );
        let value = Tensor::new(self.value(x).shape().to_vec(), y).unwrap();
        let rg = [x, gamma, beta].iter().any(|&v| self.needs(v));
        self.push_full(value, Op::LayerNorm { x, gamma, beta }, rg, xhat, inv)
    }

    /// Global response normalization of a `frames × channels` map.
    pub fn grn(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (_, c) = self.value(x).dims2().unwrap();
        let (y, norms) = kernels::grn(
            self.value(x).data(),
            c,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let value = Tensor::new(self.value(x).shape().to_vec(), y).unwrap();
        let rg = [x, gamma, beta].iter().any(|&v| self.needs(v));
        self.push_full(value, Op::Grn { x, gamma, beta, eps }, rg, norms, Vec::new())
    }

    /// `x: frames × channels`, `w: channels × taps`, `b: channels`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (_, c) = self.value(x).dims2().unwrap();
        let (wc, taps) = self.value(w).dims2().unwrap();
        assert_eq!(wc, c, "depthwise channel count");
        assert_eq!(taps % 2, 1, "depthwise kernel must be odd");
        let y = kernels::depthwise_conv1d(
            self.value(x).data(),
            c,
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::new(self.value(x).shape().to_vec(), y).unwrap();
        self.push(value, Op::DepthwiseConv1d { x, w, b }, &[x, w, b])
    }

    /// `x: in_channels × height × width`, `w: out × in × kh × kw`, `b: out`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Var {
        let (cin, h, wd) = self.value(x).dims3().expect("conv2d input");
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv2d weight rank");
        assert_eq!(ws[1], cin, "conv2d input channels");
        let geo = Conv2dGeometry {
            in_channels: cin,
            height: h,
            width: wd,
            out_channels: ws[0],
            kernel: (ws[2], ws[3]),
            stride,
            padding,
        };
        let y = kernels::conv2d(&geo, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = Tensor::new(vec![geo.out_channels, geo.out_height(), geo.out_width()], y).unwrap();
        self.push(value, Op::Conv2d { x, w, b, geo }, &[x, w, b])
    }

    /// Waveform from amplitude/phase spectra (`frames × bins`).
    pub(crate) fn istft(&mut self, amp: Var, phase: Var, kernel: Arc<StftKernel>) -> Var {
        let (frames, _) = self.value(amp).dims2().unwrap();
        let spec: Vec<Complex64> = self
            .value(amp)
            .data()
            .iter()
            .zip(self.value(phase).data())
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect();
        let samples = kernel.synthesize(frames, &spec).expect("istft geometry");
        let value = Tensor::new(vec![samples.len()], samples).unwrap();
        self.push(value, Op::Istft { amp, phase, kernel }, &[amp, phase])
    }

    /// Linear amplitude spectrogram (`frames × bins`) of a 1-D signal.
    pub(crate) fn stft_magnitude(&mut self, x: Var, kernel: Arc<StftKernel>) -> Var {
        let (frames, spec) = kernel.analyze(self.value(x).data());
        let bins = spec.len() / frames.max(1);
        let mag = spec.iter().map(|c| c.norm()).collect();
        let value = Tensor::new(vec![frames, bins], mag).unwrap();
        let (re, im): (Vec<f64>, Vec<f64>) = spec.iter().map(|c| (c.re, c.im)).unzip();
        let rg = self.needs(x);
        self.push_full(value, Op::StftMag { x, kernel }, rg, re, im)
    }

    /// `mean(max(0, 1 − sign·x))`: generator hinge with `sign = 1`, the
    /// discriminator's fake branch with `sign = −1`.
    pub fn hinge_mean(&mut self, x: Var, sign: f64) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().map(|v| (1.0 - sign * v).max(0.0)).sum::<f64>()
            / self.value(x).len() as f64);
        self.push(value, Op::HingeMean(x, sign), &[x])
    }

    /// Mean absolute difference.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "l1 shape mismatch");
        let s: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y).abs()).sum();
        let value = Tensor::scalar(s / va.len() as f64);
        self.push(value, Op::L1Mean(a, b), &[a, b])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against fixed targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Arc<Vec<f64>>) -> Var {
        let z = self.value(logits).data();
        assert_eq!(z.len(), targets.len(), "bce target count");
        let s: f64 = z
            .iter()
            .zip(targets.iter())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(s / z.len() as f64);
        self.push(value, Op::BceWithLogits(logits, targets), &[logits])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data).unwrap();
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, like(*a, gd.iter().zip(vb).map(|(g, y)| g * y).collect()));
                acc(*b, like(*b, gd.iter().zip(va).map(|(g, x)| g * x).collect()));
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Sum(x) => acc(*x, Tensor::full(self.value(*x).shape(), gd[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, Tensor::full(self.value(*x).shape(), gd[0] / n));
            }
            Op::Abs(x) => {
                let vx = self.value(*x).data();
                acc(*x, like(*x, gd.iter().zip(vx).map(|(g, v)| g * sign(*v)).collect()));
            }
            Op::Exp(x) => acc(*x, like(*x, gd.iter().zip(out).map(|(g, y)| g * y).collect())),
            Op::Sin(x) => {
                let vx = self.value(*x).data();
                acc(*x, like(*x, gd.iter().zip(vx).map(|(g, v)| g * v.cos()).collect()));
            }
            Op::Cos(x) => {
                let vx = self.value(*x).data();
                acc(*x, like(*x, gd.iter().zip(vx).map(|(g, v)| -g * v.sin()).collect()));
            }
            Op::Atan2(y, x) => {
                let (vy, vx) = (self.value(*y).data(), self.value(*x).data());
                let r2 = |i: usize| {
                    let r = vx[i] * vx[i] + vy[i] * vy[i];
                    if r > 0.0 {
                        r
                    } else {
                        f64::INFINITY
                    }
                };
                acc(*y, like(*y, (0..gd.len()).map(|i| gd[i] * vx[i] / r2(i)).collect()));
                acc(*x, like(*x, (0..gd.len()).map(|i| -gd[i] * vy[i] / r2(i)).collect()));
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                acc(*x, like(*x, gd.iter().zip(vx).map(|(g, v)| g * kernels::gelu_grad(*v)).collect()));
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                acc(*x, like(*x, gd.iter().zip(vx).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect()));
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x).data();
                acc(
                    *x,
                    like(*x, gd.iter().zip(vx).map(|(g, v)| if *v >= 0.0 { *g } else { g * slope }).collect()),
                );
            }
            Op::Sigmoid(x) => acc(*x, like(*x, gd.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect())),
            Op::LogClamp(x, floor) => {
                let vx = self.value(*x).data();
                acc(
                    *x,
                    like(*x, gd.iter().zip(vx).map(|(g, v)| if *v > *floor { g / v } else { 0.0 }).collect()),
                );
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().1;
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut da, 0.0);
                    acc(*a, like(*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut db, 0.0);
                    acc(*b, like(*b, db));
                }
            }
            Op::AddBias(x, bias) => {
                acc(*x, g.clone());
                let c = self.value(*bias).len();
                let mut db = vec![0.0; c];
                for (i, v) in gd.iter().enumerate() {
                    db[i % c] += v;
                }
                acc(*bias, like(*bias, db));
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().unwrap().1;
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    acc(p, like(p, d));
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (rows, cols) = self.value(*x).dims2().unwrap();
                let w = g.dims2().unwrap().1;
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                acc(*x, like(*x, d));
            }
            Op::Transpose(x) => acc(*x, g.transpose().unwrap()),
            Op::Reshape(x) => acc(*x, like(*x, gd.to_vec())),
            Op::Gather(x, index) => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (gv, &i) in gd.iter().zip(index.iter()) {
                    d[i] += gv;
                }
                acc(*x, like(*x, d));
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (dx, dgamma, dbeta) =
                    kernels::layer_norm_backward(gd, &node.aux, &node.aux2, self.value(*gamma).data());
                acc(*x, like(*x, dx));
                acc(*gamma, like(*gamma, dgamma));
                acc(*beta, like(*beta, dbeta));
            }
            Op::Grn { x, gamma, beta, eps } => {
                let (dx, dgamma, dbeta) = kernels::grn_backward(
                    gd,
                    self.value(*x).data(),
                    &node.aux,
                    self.value(*gamma).data(),
                    *eps,
                );
                acc(*x, like(*x, dx));
                acc(*gamma, like(*gamma, dgamma));
                acc(*beta, like(*beta, dbeta));
            }
            Op::DepthwiseConv1d { x, w, b } => {
                let c = self.value(*x).dims2().unwrap().1;
                let (dx, dw, db) =
                    kernels::depthwise_conv1d_backward(gd, self.value(*x).data(), c, self.value(*w).data());
                acc(*x, like(*x, dx));
                acc(*w, like(*w, dw));
                acc(*b, like(*b, db));
            }
            Op::Conv2d { x, w, b, geo } => {
                let need_w = self.needs(*w) || self.needs(*b);
                let (dx, dw, db) = kernels::conv2d_backward(
                    geo,
                    gd,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    self.needs(*x),
                    need_w,
                );
                if let Some(dx) = dx {
                    acc(*x, like(*x, dx));
                }
                if let (Some(dw), Some(db)) = (dw, db) {
                    acc(*w, like(*w, dw));
                    acc(*b, like(*b, db));
                }
            }
            Op::Istft { amp, phase, kernel } => {
                let frames = self.value(*amp).dims2().unwrap().0;
                let dspec = kernel.synthesize_adjoint(frames, gd).expect("istft geometry");
                let (va, vp) = (self.value(*amp).data(), self.value(*phase).data());
                let mut da = vec![0.0; va.len()];
                let mut dp = vec![0.0; va.len()];
                for i in 0..va.len() {
                    let (s, c) = vp[i].sin_cos();
                    let d = dspec[i];
                    da[i] = d.re * c + d.im * s;
                    dp[i] = va[i] * (d.im * c - d.re * s);
                }
                acc(*amp, like(*amp, da));
                acc(*phase, like(*phase, dp));
            }
            Op::StftMag { x, kernel } => {
                let dspec: Vec<Complex64> = (0..out.len())
                    .map(|i| {
                        if out[i] > 0.0 {
                            Complex64::new(gd[i] * node.aux[i] / out[i], gd[i] * node.aux2[i] / out[i])
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect();
                let dx = kernel.analyze_adjoint(self.value(*x).len(), &dspec);
                acc(*x, like(*x, dx));
            }
            Op::HingeMean(x, s) => {
                let vx = self.value(*x).data();
                let n = vx.len() as f64;
                acc(
                    *x,
                    like(*x, vx.iter().map(|v| if 1.0 - s * v > 0.0 { -s * gd[0] / n } else { 0.0 }).collect()),
                );
            }
            Op::L1Mean(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let n = va.len() as f64;
                let d: Vec<f64> = va.iter().zip(vb).map(|(x, y)| gd[0] * sign(x - y) / n).collect();
                acc(*b, like(*b, d.iter().map(|v| -v).collect()));
                acc(*a, like(*a, d));
            }
            Op::BceWithLogits(x, targets) => {
                let vx = self.value(*x).data();
                let n = vx.len() as f64;
                acc(
                    *x,
                    like(*x, vx.iter().zip(targets.iter()).map(|(z, y)| gd[0] * (sigmoid(*z) - y) / n).collect()),
                );
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests;
