use super::value::{split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Convolution padding mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` on each side; needs odd kernel extents.
    Same,
    Valid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MaxAxis {
        a: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    LogSumExp(Var, usize),
    Concat(Vec<Var>, usize),
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Repeat(Var, usize),
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        pad: (usize, usize),
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MaxAxis { .. } => "max_axis",
            Op::LogSumExp(..) => "logsumexp",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Repeat(..) => "repeat",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Upsample2(..) => "upsample2",
        }
    }
}

/// Names of every differentiable operation with a registered backward rule.
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "linear",
    "add",
    "sub",
    "mul",
    "div",
    "add_bias",
    "scale",
    "offset",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "sum_axis",
    "max_axis",
    "logsumexp",
    "concat",
    "slice",
    "reshape",
    "repeat",
    "conv2d",
    "maxpool2",
    "upsample2",
];

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are stored in insertion order, which is a topological order since
/// every op only refers to nodes that already exist. A tape serves exactly one
/// forward/backward pair.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// c = op(a) * op(b) + beta * c with op(a): m x k and op(b): k x n, row-major.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements of the slices, whose lengths are asserted.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn conv_out(extent: usize, k: usize, pad: usize) -> Option<usize> {
    (extent + 2 * pad).checked_sub(k).map(|v| v + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let hw = self.ho * self.wo;
        for c in 0..self.c {
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = ((c * self.kh + u) * self.kw + v) * hw;
                    for oi in 0..self.ho {
                        let dst = &mut cols[row + oi * self.wo..row + (oi + 1) * self.wo];
                        let ii = oi + u;
                        if ii < self.ph || ii - self.ph >= self.h {
                            dst.iter_mut().for_each(|d| *d = 0.0);
                            continue;
                        }
                        let src = &x[(c * self.h + ii - self.ph) * self.w..][..self.w];
                        for (oj, d) in dst.iter_mut().enumerate() {
                            let jj = oj + v;
                            *d = if jj < self.pw || jj - self.pw >= self.w {
                                0.0
                            } else {
                                src[jj - self.pw]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let hw = self.ho * self.wo;
        for c in 0..self.c {
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = ((c * self.kh + u) * self.kw + v) * hw;
                    for oi in 0..self.ho {
                        let ii = oi + u;
                        if ii < self.ph || ii - self.ph >= self.h {
                            continue;
                        }
                        let src = &cols[row + oi * self.wo..row + (oi + 1) * self.wo];
                        let dst = &mut dx[(c * self.h + ii - self.ph) * self.w..][..self.w];
                        for (oj, s) in src.iter().enumerate() {
                            let jj = oj + v;
                            if jj >= self.pw && jj - self.pw < self.w {
                                dst[jj - self.pw] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn grad_slot<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Makes the backward rule of `op_name` deliberately wrong (the incoming
    /// gradient is scaled by 1.5). Used as a negative control for gradient
    /// checks.
    pub fn inject_fault(&mut self, op_name: &str) {
        self.fault = Some(op_name.to_string());
    }

    /// A differentiable input (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A non-differentiable input (data, noise draws).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(op.name(), value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, op, &[a, b])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(out, op, &[a])
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// `x W^T + b` applied over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let in_dim = *sx.last().unwrap_or(&0);
        if sx.is_empty() || sw.len() != 2 || sw[1] != in_dim {
            return Err(Error::shape("linear", format!("x {:?}, W {:?}", sx, sw)));
        }
        let out_dim = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?}, expected [{}]", self.shape(b), out_dim),
                ));
            }
        }
        let rows = self.value(x).len() / in_dim.max(1);
        let mut out = vec![0.0; rows * out_dim];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for r in out.chunks_mut(out_dim) {
                r.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(
            rows,
            in_dim,
            out_dim,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            beta,
        );
        let mut shape = sx;
        *shape.last_mut().unwrap() = out_dim;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, &inputs)
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds `b` (shape `[C]`) to every slice along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&0);
        if self.shape(b) != [c] {
            return Err(Error::shape(
                "add_bias",
                format!("x {:?}, bias {:?}", self.shape(x), self.shape(b)),
            ));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for r in out.data_mut().chunks_mut(c.max(1)) {
            r.iter_mut().zip(&bias).for_each(|(o, b)| *o += b);
        }
        self.push(out, Op::AddBias(x, b), &[x, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Adds the constant `c` to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::DomainError {
                op: "log",
                detail: format!("log of non-positive value {bad}"),
            });
        }
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::EmptyInput { op: "mean" });
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::shape(
                op,
                format!("axis {} out of range for {:?}", axis, self.shape(a)),
            ));
        }
        Ok(())
    }

    fn reduced_shape(&self, a: Var, axis: usize) -> Vec<usize> {
        let mut s = self.shape(a).to_vec();
        s.remove(axis);
        s
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", a, axis)?;
        let (outer, n, inner) = split_axis(self.shape(a), axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &x[(o * n + j) * inner..][..inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += s);
            }
        }
        let shape = self.reduced_shape(a, axis);
        self.push(Tensor::new(shape, out)?, Op::SumAxis(a, axis), &[a])
    }

    /// Maximum over `axis`. The gradient is routed to the first maximal
    /// index along the axis.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("max_axis", a, axis)?;
        let (outer, n, inner) = split_axis(self.shape(a), axis);
        if n == 0 {
            return Err(Error::EmptyInput { op: "max_axis" });
        }
        let x = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    let v = x[(o * n + j) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        argmax[o * inner + i] = j;
                    }
                }
            }
        }
        let shape = self.reduced_shape(a, axis);
        self.push(
            Tensor::new(shape, out)?,
            Op::MaxAxis { a, axis, argmax },
            &[a],
        )
    }

    /// `max + log(sum(exp(x - max)))` over `axis`; finite for any finite input.
    pub fn logsumexp_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("logsumexp", a, axis)?;
        let (outer, n, inner) = split_axis(self.shape(a), axis);
        if n == 0 {
            return Err(Error::EmptyInput { op: "logsumexp" });
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| x[(o * n + j) * inner + i];
                let m = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..n).map(|j| (at(j) - m).exp()).sum();
                out[o * inner + i] = m + s.ln();
            }
        }
        let shape = self.reduced_shape(a, axis);
        self.push(Tensor::new(shape, out)?, Op::LogSumExp(a, axis), &[a])
    }

    /// Log-sum-exp of all elements of a vector, as a scalar.
    pub fn logsumexp(&mut self, v: Var) -> Result<Var> {
        if self.shape(v).len() != 1 {
            return Err(Error::shape(
                "logsumexp",
                format!("expected a vector, got {:?}", self.shape(v)),
            ));
        }
        self.logsumexp_axis(v, 0)
    }

    // ---- shape manipulation ----

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput { op: "concat" })?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", s, base)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                out.extend_from_slice(&self.value(p).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat(parts.to_vec(), axis),
            parts,
        )
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", a, axis)?;
        let (outer, n, inner) = split_axis(self.shape(a), axis);
        if start + len > n {
            return Err(Error::shape(
                "slice",
                format!("[{}, {}) out of range {}", start, start + len, n),
            ));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = self.shape(a).to_vec();
        shape[axis] = len;
        self.push(Tensor::new(shape, out)?, Op::Slice { a, axis, start }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Repeats each entry of the leading axis `times` times consecutively:
    /// `[N, ...] -> [N * times, ...]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(Error::shape("repeat", "cannot repeat a scalar"));
        }
        let rows = t.shape()[0];
        let stride = t.len() / rows.max(1);
        let mut out = Vec::with_capacity(t.len() * times);
        for r in 0..rows {
            let src = &t.data()[r * stride..(r + 1) * stride];
            for _ in 0..times {
                out.extend_from_slice(src);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] *= times;
        self.push(Tensor::new(shape, out)?, Op::Repeat(a, times), &[a])
    }

    // ---- spatial ----

    /// 2-D cross-correlation. `x` is `[B, C, H, W]` or `[C, H, W]`, `k` is
    /// `[O, C, kh, kw]`, optional bias `[O]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(k).to_vec();
        let batched = sx.len() == 4;
        if !(sx.len() == 3 || batched) || sk.len() != 4 {
            return Err(Error::shape("conv2d", format!("x {:?}, k {:?}", sx, sk)));
        }
        let (bn, c, h, w) = if batched {
            (sx[0], sx[1], sx[2], sx[3])
        } else {
            (1, sx[0], sx[1], sx[2])
        };
        let (o, kc, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", c, kc),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape("conv2d", format!("bias {:?}", self.shape(b))));
            }
        }
        let (ph, pw) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::shape(
                        "conv2d",
                        "same padding needs odd kernel extents",
                    ));
                }
                (kh / 2, kw / 2)
            }
            Padding::Valid => (0, 0),
        };
        let (ho, wo) = match (conv_out(h, kh, ph), conv_out(w, kw, pw)) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => return Err(Error::shape("conv2d", "kernel larger than input")),
        };
        let g = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            ph,
            pw,
            ho,
            wo,
        };
        let ckk = c * kh * kw;
        let hw = ho * wo;
        let mut cols = vec![0.0; ckk * hw];
        let mut out = vec![0.0; bn * o * hw];
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        for bi in 0..bn {
            g.im2col(&xd[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
            let dst = &mut out[bi * o * hw..(bi + 1) * o * hw];
            gemm(o, ckk, hw, kd, false, &cols, false, dst, 0.0);
            if let Some(b) = b {
                let bias = self.value(b).data();
                for (oc, plane) in dst.chunks_mut(hw).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bias[oc]);
                }
            }
        }
        let shape = if batched {
            vec![bn, o, ho, wo]
        } else {
            vec![o, ho, wo]
        };
        let inputs: Vec<Var> = [Some(x), Some(k), b].into_iter().flatten().collect();
        self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d {
                x,
                k,
                b,
                pad: (ph, pw),
            },
            &inputs,
        )
    }

    /// 2x2 max pooling with stride 2 over the last two axes.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || !s[s.len() - 1].is_multiple_of(2) || !s[s.len() - 2].is_multiple_of(2) {
            return Err(Error::shape(
                "maxpool2",
                format!("needs even extents, got {:?}", s),
            ));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = self.value(x).len() / (h * w).max(1);
        let (h2, w2) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = vec![0.0; planes * h2 * w2];
        let mut argmax = vec![0usize; planes * h2 * w2];
        for p in 0..planes {
            for i in 0..h2 {
                for j in 0..w2 {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = p * h * w + (2 * i + di) * w + 2 * j + dj;
                        if xd[idx] > best {
                            best = xd[idx];
                            at = idx;
                        }
                    }
                    let o = (p * h2 + i) * w2 + j;
                    out[o] = best;
                    argmax[o] = at;
                }
            }
        }
        let mut shape = s;
        let r = shape.len();
        shape[r - 2] = h2;
        shape[r - 1] = w2;
        self.push(Tensor::new(shape, out)?, Op::MaxPool2 { x, argmax }, &[x])
    }

    /// Nearest-neighbour 2x upsampling over the last two axes.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::shape("upsample2", format!("{:?}", s)));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = self.value(x).len() / (h * w).max(1);
        let xd = self.value(x).data();
        let mut out = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out[(p * 2 * h + i) * 2 * w + j] = xd[(p * h + i / 2) * w + j / 2];
                }
            }
        }
        let mut shape = s;
        let r = shape.len();
        shape[r - 2] = 2 * h;
        shape[r - 1] = 2 * w;
        self.push(Tensor::new(shape, out)?, Op::Upsample2(x), &[x])
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar `loss`, visiting nodes in exact reverse
    /// insertion order. Gradients of differentiable leaves are then available
    /// through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 || ls.iter().any(|&d| d != 1) {
            return Err(Error::NotScalar { shape: ls.to_vec() });
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = self.grads[i].take() else {
                continue;
            };
            if self.fault.as_deref() == Some(self.nodes[i].op.name()) {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
            self.backward_node(i, &g);
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shape(v).to_vec(), g.clone()).ok()
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    gemm(m, n, k, g, false, val(*b), true, da, 1.0);
                }
                if let Some(db) = grad_slot(grads, nodes, *b) {
                    gemm(k, m, n, val(*a), true, g, false, db, 1.0);
                }
            }
            Op::Linear { x, w, b } => {
                let sw = nodes[w.0].value.shape();
                let (o, inn) = (sw[0], sw[1]);
                let rows = g.len() / o.max(1);
                if let Some(dx) = grad_slot(grads, nodes, *x) {
                    gemm(rows, o, inn, g, false, val(*w), false, dx, 1.0);
                }
                if let Some(dw) = grad_slot(grads, nodes, *w) {
                    gemm(o, rows, inn, g, true, val(*x), false, dw, 1.0);
                }
                if let Some(b) = b {
                    if let Some(db) = grad_slot(grads, nodes, *b) {
                        for r in g.chunks(o) {
                            db.iter_mut().zip(r).for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    da.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(db) = grad_slot(grads, nodes, *b) {
                    db.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    da.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(db) = grad_slot(grads, nodes, *b) {
                    db.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for j in 0..g.len() {
                        da[j] += g[j] * vb[j];
                    }
                }
                if let Some(db) = grad_slot(grads, nodes, *b) {
                    for j in 0..g.len() {
                        db[j] += g[j] * va[j];
                    }
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for j in 0..g.len() {
                        da[j] += g[j] / vb[j];
                    }
                }
                if let Some(db) = grad_slot(grads, nodes, *b) {
                    for j in 0..g.len() {
                        db[j] -= g[j] * va[j] / (vb[j] * vb[j]);
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(dx) = grad_slot(grads, nodes, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if let Some(db) = grad_slot(grads, nodes, *b) {
                    let c = db.len().max(1);
                    for r in g.chunks(c) {
                        db.iter_mut().zip(r).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    da.iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    da.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::Tanh(a) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for j in 0..g.len() {
                        da[j] += g[j] * (1.0 - out[j] * out[j]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for j in 0..g.len() {
                        da[j] += g[j] * out[j] * (1.0 - out[j]);
                    }
                }
            }
            Op::Relu(a) => {
                let va = val(*a);
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for j in 0..g.len() {
                        if va[j] > 0.0 {
                            da[j] += g[j];
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for j in 0..g.len() {
                        da[j] += g[j] * out[j];
                    }
                }
            }
            Op::Log(a) => {
                let va = val(*a);
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for j in 0..g.len() {
                        da[j] += g[j] / va[j];
                    }
                }
            }
            Op::Square(a) => {
                let va = val(*a);
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for j in 0..g.len() {
                        da[j] += 2.0 * va[j] * g[j];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    let s = g[0] / da.len() as f64;
                    da.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SumAxis(a, axis) => {
                let (outer, n, inner) = split_axis(nodes[a.0].value.shape(), *axis);
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for o in 0..outer {
                        for j in 0..n {
                            let dst = &mut da[(o * n + j) * inner..][..inner];
                            dst.iter_mut()
                                .zip(&g[o * inner..(o + 1) * inner])
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
            Op::MaxAxis { a, axis, argmax } => {
                let (_, n, inner) = split_axis(nodes[a.0].value.shape(), *axis);
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for (idx, &j) in argmax.iter().enumerate() {
                        let (o, i) = (idx / inner.max(1), idx % inner.max(1));
                        da[(o * n + j) * inner + i] += g[idx];
                    }
                }
            }
            Op::LogSumExp(a, axis) => {
                let (outer, n, inner) = split_axis(nodes[a.0].value.shape(), *axis);
                let va = val(*a);
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for o in 0..outer {
                        for j in 0..n {
                            for i in 0..inner {
                                let at = (o * n + j) * inner + i;
                                da[at] += g[o * inner + i] * (va[at] - out[o * inner + i]).exp();
                            }
                        }
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let shape = nodes[i].value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.shape()[*axis];
                    if let Some(dp) = grad_slot(grads, nodes, *p) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..][..n * inner];
                            dp[o * n * inner..(o + 1) * n * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += n;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, n, inner) = split_axis(nodes[a.0].value.shape(), *axis);
                let len = nodes[i].value.shape()[*axis];
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    for o in 0..outer {
                        let dst = &mut da[(o * n + start) * inner..][..len * inner];
                        dst.iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Repeat(a, times) => {
                if let Some(da) = grad_slot(grads, nodes, *a) {
                    let rows = nodes[a.0].value.shape()[0];
                    let stride = da.len() / rows.max(1);
                    for r in 0..rows {
                        for t in 0..*times {
                            let src = &g[(r * times + t) * stride..][..stride];
                            da[r * stride..(r + 1) * stride]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
            Op::Conv2d { x, k, b, pad } => {
                let sx = nodes[x.0].value.shape();
                let sk = nodes[k.0].value.shape();
                let (bn, c, h, w) = if sx.len() == 4 {
                    (sx[0], sx[1], sx[2], sx[3])
                } else {
                    (1, sx[0], sx[1], sx[2])
                };
                let (o, kh, kw) = (sk[0], sk[2], sk[3]);
                let so = nodes[i].value.shape();
                let (ho, wo) = (so[so.len() - 2], so[so.len() - 1]);
                let geom = ConvGeom {
                    c,
                    h,
                    w,
                    kh,
                    kw,
                    ph: pad.0,
                    pw: pad.1,
                    ho,
                    wo,
                };
                let ckk = c * kh * kw;
                let hw = ho * wo;
                let xd = val(*x);
                let kd = val(*k);
                if let Some(b) = b {
                    if let Some(db) = grad_slot(grads, nodes, *b) {
                        for bi in 0..bn {
                            for (oc, plane) in
                                g[bi * o * hw..(bi + 1) * o * hw].chunks(hw).enumerate()
                            {
                                db[oc] += plane.iter().sum::<f64>();
                            }
                        }
                    }
                }
                let need_k = nodes[k.0].requires_grad;
                let need_x = nodes[x.0].requires_grad;
                let mut cols = vec![0.0; ckk * hw];
                if need_k {
                    let mut dk = vec![0.0; o * ckk];
                    for bi in 0..bn {
                        geom.im2col(&xd[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
                        let gb = &g[bi * o * hw..(bi + 1) * o * hw];
                        gemm(o, hw, ckk, gb, false, &cols, true, &mut dk, 1.0);
                    }
                    if let Some(slot) = grad_slot(grads, nodes, *k) {
                        slot.iter_mut().zip(&dk).for_each(|(d, s)| *d += s);
                    }
                }
                if need_x {
                    let mut dx = vec![0.0; bn * c * h * w];
                    for bi in 0..bn {
                        let gb = &g[bi * o * hw..(bi + 1) * o * hw];
                        gemm(ckk, o, hw, kd, true, gb, false, &mut cols, 0.0);
                        geom.col2im(&cols, &mut dx[bi * c * h * w..(bi + 1) * c * h * w]);
                    }
                    if let Some(slot) = grad_slot(grads, nodes, *x) {
                        slot.iter_mut().zip(&dx).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(dx) = grad_slot(grads, nodes, *x) {
                    for (o, &at) in argmax.iter().enumerate() {
                        dx[at] += g[o];
                    }
                }
            }
            Op::Upsample2(x) => {
                let s = nodes[x.0].value.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                if let Some(dx) = grad_slot(grads, nodes, *x) {
                    let planes = dx.len() / (h * w).max(1);
                    for p in 0..planes {
                        for i2 in 0..2 * h {
                            for j2 in 0..2 * w {
                                dx[(p * h + i2 / 2) * w + j2 / 2] +=
                                    g[(p * 2 * h + i2) * 2 * w + j2];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
