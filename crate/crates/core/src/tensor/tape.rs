use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom, PoolGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Cross-channel local response normalization settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            size: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 2.0,
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        arg: Vec<u32>,
    },
    Lrn {
        x: Var,
        params: LrnParams,
        dims: (usize, usize, usize),
        scale: Vec<T>,
    },
    Reshape(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Softmax(Var),
    CrossEntropy {
        p: Var,
        labels: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Unary {
        x: Var,
        df: fn(T, T) -> T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Append-only record of executed operations.
///
/// Nodes are stored in execution order, so every node's inputs precede it and
/// [`Tape::backward`] can sweep the record once in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Whether gradients flow to `v`.
    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, tracked: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push("leaf", t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push("constant", t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            T::zero(),
            &mut out,
            (n as isize, 1),
        );
        let tracked = self.any_tracked(&[a, b]);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| shape_err("add", self.value(a).shape(), self.value(b).shape()))?;
        let tracked = self.any_tracked(&[a, b]);
        self.push("add", out, Op::Add(a, b), tracked)
    }

    /// Broadcast-add a per-channel vector along axis 1 of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(shape_err("add_bias", sx, sb));
        }
        let channels = sx[1];
        let inner: usize = sx[2..].iter().product();
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for sample in out.data_mut().chunks_mut(channels * inner) {
            for (plane, &bc) in sample.chunks_mut(inner).zip(bias) {
                plane.iter_mut().for_each(|v| *v = *v + bc);
            }
        }
        let tracked = self.any_tracked(&[x, b]);
        self.push("add_bias", out, Op::AddBias(x, b), tracked)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        let tracked = self.any_tracked(&[x]);
        self.push("scale", out, Op::Scale(x, c), tracked)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let tracked = self.any_tracked(&[x]);
        self.push("sum", out, Op::Sum(x), tracked)
    }

    /// 2-D convolution of `x[N,C,H,W]` with `w[F,C,K,K]` and symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || stride == 0 {
            return Err(shape_err("conv2d", sx, sw));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (f, k) = (sw[0], sw[2]);
        let (ho, wo) = match (
            ConvGeom::out_extent(h, k, stride, pad),
            ConvGeom::out_extent(wd, k, stride, pad),
        ) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => return Err(shape_err("conv2d", sx, sw)),
        };
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let (patch, plane) = (geom.patch_len(), geom.plane());
        let (in_len, out_len) = (c * h * wd, f * plane);
        let mut cols = vec![T::zero(); patch * plane];
        let mut out = vec![T::zero(); n * out_len];
        let (xd, wdata) = (self.value(x).data(), self.value(w).data());
        for (xs, ys) in xd.chunks(in_len).zip(out.chunks_mut(out_len)) {
            kernels::im2col(xs, &geom, &mut cols);
            T::gemm(
                f,
                patch,
                plane,
                T::one(),
                wdata,
                (patch as isize, 1),
                &cols,
                (plane as isize, 1),
                T::zero(),
                ys,
                (plane as isize, 1),
            );
        }
        let tracked = self.any_tracked(&[x, w]);
        self.push(
            "conv2d",
            Tensor::new(vec![n, f, ho, wo], out)?,
            Op::Conv2d { x, w, geom },
            tracked,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let tracked = self.any_tracked(&[x]);
        self.push("relu", out, Op::Relu(x), tracked)
    }

    /// Max pooling over square windows without padding.
    pub fn max_pool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 4 || window == 0 || stride == 0 || sx[2] < window || sx[3] < window {
            return Err(shape_err("max_pool2d", &sx, &[window, window]));
        }
        let geom = PoolGeom {
            planes: sx[0] * sx[1],
            h: sx[2],
            w: sx[3],
            window,
            stride,
            ho: (sx[2] - window) / stride + 1,
            wo: (sx[3] - window) / stride + 1,
        };
        let (out, arg) = kernels::maxpool(self.value(x).data(), &geom);
        let tracked = self.any_tracked(&[x]);
        self.push(
            "max_pool2d",
            Tensor::new(vec![sx[0], sx[1], geom.ho, geom.wo], out)?,
            Op::MaxPool { x, arg },
            tracked,
        )
    }

    /// Local response normalization across axis 1.
    pub fn lrn(&mut self, x: Var, params: LrnParams) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() < 2 || params.size == 0 {
            return Err(shape_err("lrn", &sx, &[params.size]));
        }
        let dims = (sx[0], sx[1], sx[2..].iter().product::<usize>());
        let (out, scale) = kernels::lrn_forward(
            self.value(x).data(),
            dims.0,
            dims.1,
            dims.2,
            params.size,
            T::of(params.alpha),
            T::of(params.beta),
            T::of(params.k),
        );
        let tracked = self.any_tracked(&[x]);
        let scale = if tracked { scale } else { Vec::new() };
        self.push(
            "lrn",
            Tensor::new(sx, out)?,
            Op::Lrn { x, params, dims, scale },
            tracked,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let tracked = self.any_tracked(&[x]);
        self.push("reshape", out, Op::Reshape(x), tracked)
    }

    /// Collapse all axes after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        let n = s[0];
        let rest = s[1..].iter().product::<usize>().max(1);
        self.reshape(x, vec![n, rest])
    }

    /// Inverted dropout: kept activations are divided by `keep`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, keep: f64, rng: &mut R) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::invalid(
                "dropout",
                format!("keep probability {keep} outside (0, 1]"),
            ));
        }
        let inv = T::of(1.0 / keep);
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < keep { inv } else { T::zero() })
            .collect();
        let src = self.value(x);
        let out = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        )?;
        let tracked = self.any_tracked(&[x]);
        self.push("dropout", out, Op::Dropout { x, mask }, tracked)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let width = *src.shape().last().expect("rank >= 1");
        let mut out = src.data().to_vec();
        for row in out.chunks_mut(width) {
            softmax_in_place(row);
        }
        let out = Tensor::new(src.shape().to_vec(), out)?;
        let tracked = self.any_tracked(&[x]);
        self.push("softmax", out, Op::Softmax(x), tracked)
    }

    fn check_labels(&self, op: &'static str, x: Var, labels: &[usize]) -> Result<usize> {
        let s = self.value(x).shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(shape_err(op, s, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
            return Err(Error::invalid(op, format!("label {bad} outside {} classes", s[1])));
        }
        Ok(s[1])
    }

    /// Mean negative log-likelihood of probability rows `p[N,K]` at integer labels.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let width = self.check_labels("cross_entropy", p, labels)?;
        let data = self.value(p).data();
        let n = T::of(labels.len() as f64);
        let total: T = labels.iter().enumerate().map(|(i, &y)| -data[i * width + y].ln()).sum();
        let tracked = self.any_tracked(&[p]);
        self.push(
            "cross_entropy",
            Tensor::scalar(total / n),
            Op::CrossEntropy {
                p,
                labels: labels.to_vec(),
            },
            tracked,
        )
    }

    /// Fused `cross_entropy(softmax(logits), labels)` evaluated via log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let width = self.check_labels("softmax_cross_entropy", logits, labels)?;
        let z = self.value(logits).data();
        let mut probs = z.to_vec();
        let mut total = T::zero();
        for (i, row) in probs.chunks_mut(width).enumerate() {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total = total + lse - row[labels[i]];
            softmax_in_place(row);
        }
        let n = T::of(labels.len() as f64);
        let tracked = self.any_tracked(&[logits]);
        self.push(
            "softmax_cross_entropy",
            Tensor::scalar(total / n),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            tracked,
        )
    }

    /// Elementwise map with a caller-supplied derivative `df(x, f(x))`.
    pub fn unary(&mut self, x: Var, f: fn(T) -> T, df: fn(T, T) -> T) -> Result<Var> {
        let out = self.value(x).map(f);
        let tracked = self.any_tracked(&[x]);
        self.push("unary", out, Op::Unary { x, df }, tracked)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        if self.nodes[loss.0].tracked {
            grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.is_tracked(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        gd,
                        (n as isize, 1),
                        vb.data(),
                        (1, n as isize),
                        T::zero(),
                        &mut da,
                        (k as isize, 1),
                    );
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.is_tracked(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        va.data(),
                        (1, k as isize),
                        gd,
                        (n as isize, 1),
                        T::zero(),
                        &mut db,
                        (n as isize, 1),
                    );
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.is_tracked(*b) {
                    let s = g.shape();
                    let channels = s[1];
                    let inner: usize = s[2..].iter().product();
                    let mut db = vec![T::zero(); channels];
                    for sample in gd.chunks(channels * inner) {
                        for (plane, d) in sample.chunks(inner).zip(db.iter_mut()) {
                            *d = *d + plane.iter().copied().sum::<T>();
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![channels], db)?);
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * *c)),
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(shape, gd[0]));
            }
            Op::Conv2d { x, w, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let f = wv.shape()[0];
                let (patch, plane) = (geom.patch_len(), geom.plane());
                let in_len = geom.c * geom.h * geom.w;
                let mut cols = vec![T::zero(); patch * plane];
                if self.is_tracked(*w) {
                    let mut dw = vec![T::zero(); f * patch];
                    for (xs, dys) in xv.data().chunks(in_len).zip(gd.chunks(f * plane)) {
                        kernels::im2col(xs, geom, &mut cols);
                        T::gemm(
                            f,
                            plane,
                            patch,
                            T::one(),
                            dys,
                            (plane as isize, 1),
                            &cols,
                            (1, plane as isize),
                            T::one(),
                            &mut dw,
                            (patch as isize, 1),
                        );
                    }
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                }
                if self.is_tracked(*x) {
                    let mut dx = vec![T::zero(); xv.numel()];
                    for (dxs, dys) in dx.chunks_mut(in_len).zip(gd.chunks(f * plane)) {
                        T::gemm(
                            patch,
                            f,
                            plane,
                            T::one(),
                            wv.data(),
                            (1, patch as isize),
                            dys,
                            (plane as isize, 1),
                            T::zero(),
                            &mut cols,
                            (plane as isize, 1),
                        );
                        kernels::col2im_add(&cols, geom, dxs);
                    }
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    xv.zip_map(g, |a, d| if a > T::zero() { d } else { T::zero() })?,
                );
            }
            Op::MaxPool { x, arg } => {
                let xv = self.value(*x);
                let mut dx = vec![T::zero(); xv.numel()];
                for (&i, &d) in arg.iter().zip(gd) {
                    dx[i as usize] = dx[i as usize] + d;
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Lrn { x, params, dims, scale } => {
                let xv = self.value(*x);
                let dx = kernels::lrn_backward(
                    xv.data(),
                    scale,
                    gd,
                    dims.0,
                    dims.1,
                    dims.2,
                    params.size,
                    T::of(params.alpha),
                    T::of(params.beta),
                );
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(shape)?);
            }
            Op::Dropout { x, mask } => {
                let dx = gd.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let width = *g.shape().last().expect("rank >= 1");
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, dr), out) in y.chunks(width).zip(gd.chunks(width)).zip(dx.chunks_mut(width)) {
                    let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yi), &di) in out.iter_mut().zip(yr).zip(dr) {
                        *o = yi * (di - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::CrossEntropy { p, labels } => {
                let pv = self.value(*p);
                let width = pv.shape()[1];
                let scale = gd[0] / T::of(labels.len() as f64);
                let mut dp = vec![T::zero(); pv.numel()];
                for (i, &y) in labels.iter().enumerate() {
                    dp[i * width + y] = -scale / pv.data()[i * width + y];
                }
                let dp = Tensor::new(pv.shape().to_vec(), dp)?;
                if !dp.is_finite() {
                    return Err(Error::NonFinite {
                        op: "cross_entropy backward",
                    });
                }
                self.accumulate(grads, *p, dp);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let shape = self.value(*logits).shape().to_vec();
                let width = shape[1];
                let scale = gd[0] / T::of(labels.len() as f64);
                let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    dz[i * width + y] = dz[i * width + y] - scale;
                }
                self.accumulate(grads, *logits, Tensor::new(shape, dz)?);
            }
            Op::Unary { x, df } => {
                let xv = self.value(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(gd)
                    .map(|((&a, &y), &d)| df(a, y) * d)
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Gradients of one scalar loss with respect to every recorded node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss at `v`; nodes not on a path to the loss have none.
    pub fn get(&self, v: Var) -> Result<&Tensor<T>> {
        self.grads
            .get(v.0)
            .and_then(Option::as_ref)
            .ok_or(Error::NoGradient(v.0))
    }

    pub fn take(&mut self, v: Var) -> Result<Tensor<T>> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .ok_or(Error::NoGradient(v.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(vec![1, 2], vec![0.0, 0.0])).unwrap();
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = vec![0.3, -1.2, 2.5, 0.0];
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![1, 4], z.clone())).unwrap();
        let b = tape
            .constant(t(vec![1, 4], z.iter().map(|v| v + 17.25).collect()))
            .unwrap();
        let (sa, sb) = (tape.softmax(a).unwrap(), tape.softmax(b).unwrap());
        for (p, q) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(vec![1, 1, 5, 5])).unwrap();
        let w = tape.constant(Tensor::ones(vec![1, 1, 3, 3])).unwrap();
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(vec![2, 3, 4], |i| i as f64 * 0.1)).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(vec![2, 3, 4]));
    }

    #[test]
    fn softmax_then_cross_entropy_gradient_is_p_minus_onehot() {
        let z = vec![0.2, -0.7, 1.1];
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![1, 3], z)).unwrap();
        let p = tape.softmax(x).unwrap();
        let l = tape.cross_entropy(p, &[1]).unwrap();
        let g = tape.backward(l).unwrap();
        let probs = tape.value(p).data().to_vec();
        let gx = g.get(x).unwrap().data();
        for k in 0..3 {
            let expect = probs[k] - if k == 1 { 1.0 } else { 0.0 };
            assert!((gx[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_and_composed_cross_entropy_agree() {
        let z = t(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.1, -0.4]);
        let labels = [2, 0];
        let mut tape = Tape::new();
        let a = tape.leaf(z.clone()).unwrap();
        let p = tape.softmax(a).unwrap();
        let l1 = tape.cross_entropy(p, &labels).unwrap();
        let b = tape.leaf(z).unwrap();
        let l2 = tape.softmax_cross_entropy(b, &labels).unwrap();
        let (v1, v2) = (tape.value(l1).item().unwrap(), tape.value(l2).item().unwrap());
        assert!((v1 - v2).abs() < 1e-12);
        let g1 = tape.backward(l1).unwrap();
        let g2 = tape.backward(l2).unwrap();
        for (x, y) in g1.get(a).unwrap().data().iter().zip(g2.get(b).unwrap().data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::ones(vec![3])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn detached_nodes_report_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::ones(vec![3])).unwrap();
        let c = tape.constant(Tensor::ones(vec![3])).unwrap();
        let unused = tape.leaf(Tensor::ones(vec![3])).unwrap();
        let y = tape.add(x, c).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_ok());
        assert!(matches!(g.get(c), Err(Error::NoGradient(_))));
        assert!(matches!(g.get(unused), Err(Error::NoGradient(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::ones(vec![2, 3])).unwrap();
        let b = tape.constant(Tensor::<f64>::ones(vec![2, 3])).unwrap();
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let p = tape.constant(t(vec![1, 2], vec![0.0, 1.0])).unwrap();
        assert!(matches!(tape.cross_entropy(p, &[0]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn dropout_keeps_expected_scale() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::<f64>::ones(vec![10_000])).unwrap();
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.05);
    }
}
