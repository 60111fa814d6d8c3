//! Reverse-mode automatic differentiation on an eager tape.
//!
//! Values are computed immediately when an op is recorded. `Tape::backward`
//! emits the adjoint computation as *new tape nodes* built from the same
//! primitive ops, so the returned gradients are themselves differentiable:
//! calling `backward` on a scalar function of a gradient yields second
//! derivatives. Every primitive's vector-Jacobian product is expressed in
//! terms of the primitive set, which is closed under this operation
//! (`MatMul`/`Transpose`, the conv trio `Conv1d`/`ConvAdj`/`KernelCorr`,
//! broadcast/reduction pairs, and elementwise maps).

pub mod nn;

use std::cell::RefCell;

use crate::error::{Result, SobolevError};

/// A dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SobolevError::Dimension(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { data, shape })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            data: vec![v],
            shape: vec![1],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let shape = vec![data.len()];
        Tensor { data, shape }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor {
            data: vec![1.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddColVec(Var, Var),
    RowSum(Var),
    ColSum(Var),
    BroadcastCol(Var),
    BroadcastRow(Var),
    Sum(Var),
    Dot(Var, Var),
    MulScalar(Var, Var),
    Reshape(Var),
    Tanh(Var),
    Softplus(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Recip(Var),
    Sqrt(Var),
    Conv1d(Var, Var),
    ConvAdj(Var, Var),
    KernelCorr(Var, Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Eager computation tape. Create one per forward/backward episode.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn input(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape.clone()
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn record(&self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let rg = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        self.push(op, value, rg)
    }

    fn with<T>(&self, v: Var, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.nodes.borrow()[v.0].value)
    }

    fn with2<T>(&self, a: Var, b: Var, f: impl FnOnce(&Tensor, &Tensor) -> T) -> T {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }

    // ----- elementwise and scalar ops -----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| {
            assert_eq!(x.shape, y.shape, "add shape mismatch");
            Tensor {
                data: x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect(),
                shape: x.shape.clone(),
            }
        });
        self.record(Op::Add(a, b), value, &[a, b])
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| {
            assert_eq!(x.shape, y.shape, "mul shape mismatch");
            Tensor {
                data: x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
                shape: x.shape.clone(),
            }
        });
        self.record(Op::Mul(a, b), value, &[a, b])
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let value = self.with(a, |x| Tensor {
            data: x.data.iter().map(|p| p * k).collect(),
            shape: x.shape.clone(),
        });
        self.record(Op::Scale(a, k), value, &[a])
    }

    pub fn add_const(&self, a: Var, k: f64) -> Var {
        let value = self.with(a, |x| Tensor {
            data: x.data.iter().map(|p| p + k).collect(),
            shape: x.shape.clone(),
        });
        self.record(Op::AddConst(a), value, &[a])
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: impl Fn(Var) -> Op) -> Var {
        let value = self.with(a, |x| Tensor {
            data: x.data.iter().map(|p| f(*p)).collect(),
            shape: x.shape.clone(),
        });
        self.record(op(a), value, &[a])
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let value = self.with(a, |x| {
            assert_eq!(
                x.len(),
                shape.iter().product::<usize>(),
                "reshape element count mismatch"
            );
            Tensor {
                data: x.data.clone(),
                shape: shape.to_vec(),
            }
        });
        self.record(Op::Reshape(a), value, &[a])
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    /// ln(1 + e^x), computed stably.
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, |p| p.max(0.0) + (-p.abs()).exp().ln_1p(), Op::Softplus)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |p| p.max(0.0), Op::Relu)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln)
    }

    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, f64::recip, Op::Recip)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt)
    }

    // ----- linear algebra -----

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| {
            let (m, n) = (x.shape[0], x.shape[1]);
            let (n2, p) = (y.shape[0], y.shape[1]);
            assert_eq!(n, n2, "matmul inner dimension mismatch");
            let mut out = vec![0.0; m * p];
            for i in 0..m {
                for k in 0..n {
                    let xv = x.data[i * n + k];
                    if xv == 0.0 {
                        continue;
                    }
                    let row = &y.data[k * p..(k + 1) * p];
                    let acc = &mut out[i * p..(i + 1) * p];
                    for (o, yv) in acc.iter_mut().zip(row) {
                        *o += xv * yv;
                    }
                }
            }
            Tensor {
                data: out,
                shape: vec![m, p],
            }
        });
        self.record(Op::MatMul(a, b), value, &[a, b])
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = self.with(a, |x| {
            let (m, n) = (x.shape[0], x.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = x.data[i * n + j];
                }
            }
            Tensor {
                data: out,
                shape: vec![n, m],
            }
        });
        self.record(Op::Transpose(a), value, &[a])
    }

    /// Add vector `b` (length m) to every column of `x` ([m, ncols]).
    pub fn add_col_vec(&self, x: Var, b: Var) -> Var {
        let value = self.with2(x, b, |xm, bv| {
            let (m, n) = (xm.shape[0], xm.shape[1]);
            assert_eq!(bv.len(), m, "bias length mismatch");
            let mut out = xm.data.clone();
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] += bv.data[i];
                }
            }
            Tensor {
                data: out,
                shape: vec![m, n],
            }
        });
        self.record(Op::AddColVec(x, b), value, &[x, b])
    }

    /// Sum over columns: [m, n] -> [m].
    pub fn row_sum(&self, x: Var) -> Var {
        let value = self.with(x, |xm| {
            let (m, n) = (xm.shape[0], xm.shape[1]);
            let data = (0..m)
                .map(|i| xm.data[i * n..(i + 1) * n].iter().sum())
                .collect();
            Tensor {
                data,
                shape: vec![m],
            }
        });
        self.record(Op::RowSum(x), value, &[x])
    }

    /// Sum over rows: [m, n] -> [n].
    pub fn col_sum(&self, x: Var) -> Var {
        let value = self.with(x, |xm| {
            let (m, n) = (xm.shape[0], xm.shape[1]);
            let mut data = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    data[j] += xm.data[i * n + j];
                }
            }
            Tensor {
                data,
                shape: vec![n],
            }
        });
        self.record(Op::ColSum(x), value, &[x])
    }

    /// Repeat vector `v` (length m) as `ncols` columns: -> [m, ncols].
    pub fn broadcast_col(&self, v: Var, ncols: usize) -> Var {
        let value = self.with(v, |vv| {
            let m = vv.len();
            let mut data = vec![0.0; m * ncols];
            for i in 0..m {
                for j in 0..ncols {
                    data[i * ncols + j] = vv.data[i];
                }
            }
            Tensor {
                data,
                shape: vec![m, ncols],
            }
        });
        self.record(Op::BroadcastCol(v), value, &[v])
    }

    /// Repeat vector `v` (length n) as `nrows` rows: -> [nrows, n].
    pub fn broadcast_row(&self, v: Var, nrows: usize) -> Var {
        let value = self.with(v, |vv| {
            let n = vv.len();
            let mut data = vec![0.0; nrows * n];
            for i in 0..nrows {
                data[i * n..(i + 1) * n].copy_from_slice(&vv.data);
            }
            Tensor {
                data,
                shape: vec![nrows, n],
            }
        });
        self.record(Op::BroadcastRow(v), value, &[v])
    }

    /// Sum of all elements -> scalar.
    pub fn sum(&self, x: Var) -> Var {
        let value = self.with(x, |xm| Tensor::scalar(xm.data.iter().sum()));
        self.record(Op::Sum(x), value, &[x])
    }

    /// Flattened inner product -> scalar.
    pub fn dot(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| {
            assert_eq!(x.len(), y.len(), "dot length mismatch");
            Tensor::scalar(x.data.iter().zip(&y.data).map(|(p, q)| p * q).sum())
        });
        self.record(Op::Dot(a, b), value, &[a, b])
    }

    /// Multiply every element of `x` by the scalar variable `s`.
    pub fn mul_scalar(&self, x: Var, s: Var) -> Var {
        let value = self.with2(x, s, |xm, sv| {
            let k = sv.item();
            Tensor {
                data: xm.data.iter().map(|p| p * k).collect(),
                shape: xm.shape.clone(),
            }
        });
        self.record(Op::MulScalar(x, s), value, &[x, s])
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.with(x, Tensor::len);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of squares -> scalar.
    pub fn sumsq(&self, x: Var) -> Var {
        self.dot(x, x)
    }

    /// Column-wise softmax of [k, n] with the usual constant max shift
    /// (exactly gradient-neutral by shift invariance).
    pub fn softmax_cols(&self, x: Var) -> Var {
        let (k, shift) = self.with(x, |xm| {
            let (k, n) = (xm.shape[0], xm.shape[1]);
            let mut shift = vec![f64::NEG_INFINITY; n];
            for i in 0..k {
                for j in 0..n {
                    shift[j] = shift[j].max(xm.data[i * n + j]);
                }
            }
            (k, shift)
        });
        let c = self.constant(Tensor::vector(shift));
        let centered = self.sub(x, self.broadcast_row(c, k));
        let e = self.exp(centered);
        let z = self.col_sum(e);
        let inv = self.recip(z);
        self.mul(e, self.broadcast_row(inv, k))
    }

    /// Column-wise log-softmax of [k, n].
    pub fn log_softmax_cols(&self, x: Var) -> Var {
        let (k, shift) = self.with(x, |xm| {
            let (k, n) = (xm.shape[0], xm.shape[1]);
            let mut shift = vec![f64::NEG_INFINITY; n];
            for i in 0..k {
                for j in 0..n {
                    shift[j] = shift[j].max(xm.data[i * n + j]);
                }
            }
            (k, shift)
        });
        let c = self.constant(Tensor::vector(shift));
        let centered = self.sub(x, self.broadcast_row(c, k));
        let e = self.exp(centered);
        let logz = self.ln(self.col_sum(e));
        self.sub(centered, self.broadcast_row(logz, k))
    }

    // ----- 1-D convolution trio (stride 1, same zero padding, odd K) -----

    /// y[o, t] = sum_{i, tau} k[o, i, tau] x[i, t + tau - pad];
    /// x: [cin, L], kernel: [cout, cin, K] -> [cout, L].
    pub fn conv1d(&self, x: Var, kernel: Var) -> Var {
        let value = self.with2(x, kernel, |xm, km| conv1d_forward(xm, km));
        self.record(Op::Conv1d(x, kernel), value, &[x, kernel])
    }

    /// Adjoint of `conv1d` in its signal argument:
    /// <y, conv1d(x, k)> = <x, conv1d_adjoint(y, k)>; y: [cout, L] -> [cin, L].
    pub fn conv1d_adjoint(&self, y: Var, kernel: Var) -> Var {
        let value = self.with2(y, kernel, |ym, km| conv_adjoint_forward(ym, km));
        self.record(Op::ConvAdj(y, kernel), value, &[y, kernel])
    }

    /// Adjoint of `conv1d` in its kernel argument:
    /// <y, conv1d(x, k)> = <k, kernel_corr(x, y)>; -> [cout, cin, K].
    pub fn kernel_corr(&self, x: Var, y: Var, ksize: usize) -> Var {
        let value = self.with2(x, y, |xm, ym| kernel_corr_forward(xm, ym, ksize));
        self.record(Op::KernelCorr(x, y), value, &[x, y])
    }

    // ----- reverse sweep -----

    /// Adjoints of `y` with respect to each var in `wrt`, seeded with ones.
    ///
    /// The adjoints are recorded on the tape with the same primitives, so the
    /// result can be differentiated again by a further `backward` call.
    pub fn backward(&self, y: Var, wrt: &[Var]) -> Vec<Var> {
        let top = y.0;
        let mut adjoint: Vec<Option<Var>> = vec![None; top + 1];
        let seed_shape = self.shape(y);
        adjoint[top] = Some(self.constant(Tensor::ones(&seed_shape)));
        for i in (0..=top).rev() {
            let Some(cot) = adjoint[i] else { continue };
            let op = {
                let nodes = self.nodes.borrow();
                if !nodes[i].requires_grad {
                    continue;
                }
                nodes[i].op.clone()
            };
            let push = |target: Var, contribution: Var, adjoint: &mut Vec<Option<Var>>| {
                if target.0 > top || !self.nodes.borrow()[target.0].requires_grad {
                    return;
                }
                adjoint[target.0] = Some(match adjoint[target.0] {
                    Some(prev) => self.add(prev, contribution),
                    None => contribution,
                });
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    push(a, cot, &mut adjoint);
                    push(b, cot, &mut adjoint);
                }
                Op::Mul(a, b) => {
                    push(a, self.mul(cot, b), &mut adjoint);
                    push(b, self.mul(cot, a), &mut adjoint);
                }
                Op::Scale(a, k) => push(a, self.scale(cot, k), &mut adjoint),
                Op::AddConst(a) => push(a, cot, &mut adjoint),
                Op::MatMul(a, b) => {
                    push(a, self.matmul(cot, self.transpose(b)), &mut adjoint);
                    push(b, self.matmul(self.transpose(a), cot), &mut adjoint);
                }
                Op::Transpose(a) => push(a, self.transpose(cot), &mut adjoint),
                Op::AddColVec(x, b) => {
                    push(x, cot, &mut adjoint);
                    push(b, self.row_sum(cot), &mut adjoint);
                }
                Op::RowSum(x) => {
                    let n = self.with(x, |t| t.shape[1]);
                    push(x, self.broadcast_col(cot, n), &mut adjoint);
                }
                Op::ColSum(x) => {
                    let m = self.with(x, |t| t.shape[0]);
                    push(x, self.broadcast_row(cot, m), &mut adjoint);
                }
                Op::BroadcastCol(v) => push(v, self.row_sum(cot), &mut adjoint),
                Op::BroadcastRow(v) => push(v, self.col_sum(cot), &mut adjoint),
                Op::Sum(x) => {
                    let shape = self.shape(x);
                    let ones = self.constant(Tensor::ones(&shape));
                    push(x, self.mul_scalar(ones, cot), &mut adjoint);
                }
                Op::Dot(a, b) => {
                    push(a, self.mul_scalar(b, cot), &mut adjoint);
                    push(b, self.mul_scalar(a, cot), &mut adjoint);
                }
                Op::MulScalar(x, s) => {
                    push(x, self.mul_scalar(cot, s), &mut adjoint);
                    push(s, self.dot(cot, x), &mut adjoint);
                }
                Op::Reshape(a) => {
                    let shape = self.shape(a);
                    push(a, self.reshape(cot, &shape), &mut adjoint);
                }
                Op::Tanh(a) => {
                    // d tanh = 1 - tanh^2, reusing the recorded output.
                    let t = Var(i);
                    let sq = self.mul(t, t);
                    let deriv = self.add_const(self.scale(sq, -1.0), 1.0);
                    push(a, self.mul(cot, deriv), &mut adjoint);
                }
                Op::Softplus(a) => {
                    // d softplus = sigmoid(a) = 1 / (1 + e^{-a}).
                    let e = self.exp(self.scale(a, -1.0));
                    let sig = self.recip(self.add_const(e, 1.0));
                    push(a, self.mul(cot, sig), &mut adjoint);
                }
                Op::Relu(a) => {
                    let step = self.with(a, |t| Tensor {
                        data: t.data.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect(),
                        shape: t.shape.clone(),
                    });
                    let step = self.constant(step);
                    push(a, self.mul(cot, step), &mut adjoint);
                }
                Op::Exp(a) => push(a, self.mul(cot, Var(i)), &mut adjoint),
                Op::Ln(a) => push(a, self.mul(cot, self.recip(a)), &mut adjoint),
                Op::Recip(a) => {
                    let ysq = self.mul(Var(i), Var(i));
                    push(a, self.scale(self.mul(cot, ysq), -1.0), &mut adjoint);
                }
                Op::Sqrt(a) => {
                    let half_inv = self.scale(self.recip(Var(i)), 0.5);
                    push(a, self.mul(cot, half_inv), &mut adjoint);
                }
                Op::Conv1d(x, k) => {
                    let ksize = self.with(k, |t| t.shape[2]);
                    push(x, self.conv1d_adjoint(cot, k), &mut adjoint);
                    push(k, self.kernel_corr(x, cot, ksize), &mut adjoint);
                }
                Op::ConvAdj(y, k) => {
                    let ksize = self.with(k, |t| t.shape[2]);
                    push(y, self.conv1d(cot, k), &mut adjoint);
                    push(k, self.kernel_corr(cot, y, ksize), &mut adjoint);
                }
                Op::KernelCorr(x, y) => {
                    push(x, self.conv1d_adjoint(y, cot), &mut adjoint);
                    push(y, self.conv1d(x, cot), &mut adjoint);
                }
            }
        }
        wrt.iter()
            .map(|v| match adjoint.get(v.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(*v);
                    self.constant(Tensor::zeros(&shape))
                }
            })
            .collect()
    }
}

fn conv1d_forward(x: &Tensor, k: &Tensor) -> Tensor {
    let (cin, l) = (x.shape[0], x.shape[1]);
    let (cout, cin2, ks) = (k.shape[0], k.shape[1], k.shape[2]);
    assert_eq!(cin, cin2, "conv1d channel mismatch");
    assert!(ks % 2 == 1, "conv1d kernel width must be odd");
    let pad = (ks - 1) / 2;
    let mut out = vec![0.0; cout * l];
    for o in 0..cout {
        for i in 0..cin {
            let krow = &k.data[(o * cin + i) * ks..(o * cin + i + 1) * ks];
            let xrow = &x.data[i * l..(i + 1) * l];
            for t in 0..l {
                let mut acc = 0.0;
                for (tau, kv) in krow.iter().enumerate() {
                    let s = t + tau;
                    if s >= pad && s - pad < l {
                        acc += kv * xrow[s - pad];
                    }
                }
                out[o * l + t] += acc;
            }
        }
    }
    Tensor {
        data: out,
        shape: vec![cout, l],
    }
}

fn conv_adjoint_forward(y: &Tensor, k: &Tensor) -> Tensor {
    let (cout, l) = (y.shape[0], y.shape[1]);
    let (cout2, cin, ks) = (k.shape[0], k.shape[1], k.shape[2]);
    assert_eq!(cout, cout2, "conv adjoint channel mismatch");
    let pad = (ks - 1) / 2;
    let mut out = vec![0.0; cin * l];
    for o in 0..cout {
        for i in 0..cin {
            let krow = &k.data[(o * cin + i) * ks..(o * cin + i + 1) * ks];
            let yrow = &y.data[o * l..(o + 1) * l];
            for u in 0..l {
                let mut acc = 0.0;
                for (tau, kv) in krow.iter().enumerate() {
                    let t = u + pad;
                    if t >= tau && t - tau < l {
                        acc += kv * yrow[t - tau];
                    }
                }
                out[i * l + u] += acc;
            }
        }
    }
    Tensor {
        data: out,
        shape: vec![cin, l],
    }
}

fn kernel_corr_forward(x: &Tensor, y: &Tensor, ks: usize) -> Tensor {
    let (cin, l) = (x.shape[0], x.shape[1]);
    let (cout, l2) = (y.shape[0], y.shape[1]);
    assert_eq!(l, l2, "kernel corr length mismatch");
    let pad = (ks - 1) / 2;
    let mut out = vec![0.0; cout * cin * ks];
    for o in 0..cout {
        for i in 0..cin {
            let xrow = &x.data[i * l..(i + 1) * l];
            let yrow = &y.data[o * l..(o + 1) * l];
            for tau in 0..ks {
                let mut acc = 0.0;
                for (t, yv) in yrow.iter().enumerate() {
                    let s = t + tau;
                    if s >= pad && s - pad < l {
                        acc += yv * xrow[s - pad];
                    }
                }
                out[(o * cin + i) * ks + tau] = acc;
            }
        }
    }
    Tensor {
        data: out,
        shape: vec![cout, cin, ks],
    }
}

/// Central finite-difference gradient of a black-box scalar function.
pub fn numerical_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let x0 = probe[i];
        probe[i] = x0 + eps;
        let fp = f(&probe);
        probe[i] = x0 - eps;
        let fm = f(&probe);
        probe[i] = x0;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    g
}
