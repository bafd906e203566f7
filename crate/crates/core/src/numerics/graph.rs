//! Tensor-level reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation evaluates its
//! forward value eagerly and records the inputs (plus whatever it needs for
//! the backward pass). [`Graph::backward`] walks the nodes in strictly
//! decreasing order, so the append order is the topological order.

use super::fft::transform_in_place;
use super::{NumericsError, Tensor};

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sentinel gather index that produces a zero.
pub const GATHER_ZERO: usize = usize::MAX;

/// Forward primitives addressable by tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Relu,
    Softmax,
    LayerNorm,
    Concat { axis: usize },
    Reshape,
    MaxReduce { axis: usize },
    Log,
    Sigmoid,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

/// How the right operand of a binary op is expanded over the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// rhs is one row of length `d`, repeated over every row of lhs.
    Row(usize),
    /// rhs is one column: lhs `[n, d]`, rhs `[n, 1]`.
    Col(usize),
}

impl Broadcast {
    /// Calls `f(i, j)` for every lhs index `i` and its rhs index `j`.
    #[inline(always)]
    fn for_each(self, n: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Broadcast::Same => (0..n).for_each(|i| f(i, i)),
            Broadcast::Scalar => (0..n).for_each(|i| f(i, 0)),
            Broadcast::Row(d) => {
                for r in 0..n / d {
                    for j in 0..d {
                        f(r * d + j, j);
                    }
                }
            }
            Broadcast::Col(d) => {
                for r in 0..n / d {
                    for j in 0..d {
                        f(r * d + j, r);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Log,
    Sqrt,
    Exp,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
    Transpose {
        x: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum {
        x: Var,
        scale: f64,
    },
    SumAxis {
        x: Var,
        axis_split: (usize, usize, usize),
        scale: f64,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Dft {
        x: Var,
        inverse: bool,
    },
    Chamfer {
        a: Var,
        b: Var,
        nn_of_a: Vec<usize>,
        nn_of_b: Vec<usize>,
    },
    NearestMeanDist {
        pred: Var,
        target: Var,
        nearest: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Computation graph owning every intermediate value of one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Nodes the loss does not
    /// depend on get an all-zero tensor.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn drop_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

/// `c (+)= a · b` for row-major operands addressed through explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides and extents describe in-bounds views of the slices:
    // a is m×k, b is k×n and c is a dense m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

    /// A differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(NumericsError::RankMismatch {
                op,
                expected: 2,
                shape: other.to_vec(),
            }),
        }
    }

    /// Dispatches one of the tagged forward primitives.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(NumericsError::Arity {
                    op: kind_name(kind),
                    expected: n,
                    got: inputs.len(),
                })
            }
        };
        match kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Relu => {
                arity(1)?;
                Ok(self.relu(inputs[0]))
            }
            OpKind::Softmax => {
                arity(1)?;
                Ok(self.softmax(inputs[0]))
            }
            OpKind::LayerNorm => {
                arity(1)?;
                Ok(self.layer_norm(inputs[0], super::LAYER_NORM_EPS))
            }
            OpKind::Concat { axis } => self.concat(inputs, axis),
            OpKind::Reshape => Err(NumericsError::Arity {
                op: "reshape",
                expected: 1,
                got: 0,
            }),
            OpKind::MaxReduce { axis } => {
                arity(1)?;
                self.max_axis(inputs[0], axis)
            }
            OpKind::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            OpKind::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            OpKind::Mean => {
                arity(1)?;
                Ok(self.mean(inputs[0]))
            }
        }
    }

    // ---------------------------------------------------------------- linear

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m, k] · [n, k]ᵀ → [m, n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        let (m, k) = self.dims2(op, a)?;
        let (br, bc) = self.dims2(op, b)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        let bs = if trans_b { (1, k) } else { (n, 1) };
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            bs,
            &mut out,
            false,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul { a, b, trans_b }, Tensor::from_parts(vec![m, n], out), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Transpose { x }, Tensor::from_parts(vec![c, r], out), rg))
    }

    // ---------------------------------------------------------- elementwise

    fn broadcast_rule(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        let nb: usize = sb.iter().product();
        if nb == 1 {
            return Ok(Broadcast::Scalar);
        }
        let last = *sa.last().unwrap();
        let row_like = matches!(sb, [d] if *d == last) || matches!(sb, [1, d] if *d == last);
        if row_like {
            return Ok(Broadcast::Row(last));
        }
        if let ([n, d], [nb, 1]) = (sa, sb) {
            if n == nb {
                return Ok(Broadcast::Col(*d));
            }
        }
        Err(NumericsError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast_rule(kind.name(), a, b)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if kind == BinaryKind::Div && bv.contains(&0.0) {
            return Err(NumericsError::DivisionByZero);
        }
        let mut out = vec![0.0; av.len()];
        match kind {
            BinaryKind::Add => bcast.for_each(av.len(), |i, j| out[i] = av[i] + bv[j]),
            BinaryKind::Sub => bcast.for_each(av.len(), |i, j| out[i] = av[i] - bv[j]),
            BinaryKind::Mul => bcast.for_each(av.len(), |i, j| out[i] = av[i] * bv[j]),
            BinaryKind::Div => bcast.for_each(av.len(), |i, j| out[i] = av[i] / bv[j]),
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Binary { kind, a, b, bcast }, Tensor::from_parts(shape, out), rg))
    }

    /// Elementwise sum. The right operand may be a scalar, a single row
    /// matching the last axis, or (for rank-2 lhs `[n, d]`) a column `[n, 1]`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Elementwise quotient; any zero divisor is an error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let src = self.value(x).data();
        let out: Vec<f64> = match kind {
            UnaryKind::Relu => src.iter().map(|v| v.max(0.0)).collect(),
            UnaryKind::Sigmoid => src.iter().map(|&v| sigmoid(v)).collect(),
            UnaryKind::Exp => src.iter().map(|v| v.exp()).collect(),
            UnaryKind::Log => {
                if let Some(&bad) = src.iter().find(|v| !(**v > 0.0)) {
                    return Err(NumericsError::NonPositiveLog(bad));
                }
                src.iter().map(|v| v.ln()).collect()
            }
            UnaryKind::Sqrt => {
                if let Some(&bad) = src.iter().find(|v| !(**v >= 0.0)) {
                    return Err(NumericsError::NegativeSqrt(bad));
                }
                src.iter().map(|v| v.sqrt()).collect()
            }
        };
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Unary { kind, x }, Tensor::from_parts(shape, out), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x).expect("relu is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x).expect("exp is total")
    }

    /// Natural log. Non-positive input is an error rather than NaN.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    /// Square root. The gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(Op::Affine { x, scale: factor }, Tensor::from_parts(shape, out), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    // ------------------------------------------------------ normalizations

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Op::Softmax { x }, Tensor::from_parts(shape, out), rg)
    }

    /// Normalizes each row over the last axis to zero mean, unit variance.
    /// No affine terms; compose with `mul`/`add` for gain and bias.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        let src = t.data();
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                xhat[r * cols + c] = (row[c] - mean) * inv;
            }
        }
        let shape = t.shape().to_vec();
        let value = Tensor::from_parts(shape, xhat.clone());
        let rg = self.rg(&[x]);
        self.push(Op::LayerNorm { x, xhat, inv_std }, value, rg)
    }

    // -------------------------------------------------------------- shaping

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(NumericsError::Arity {
            op: "concat",
            expected: 1,
            got: 0,
        })?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(NumericsError::AxisOutOfRange {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            Tensor::from_parts(shape, out),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Reshape { x }, value, rg))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if start >= end || end > c {
            return Err(NumericsError::SliceOutOfRange {
                op: "slice_cols",
                start,
                end,
                len: c,
            });
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SliceCols { x, start }, Tensor::from_parts(vec![r, w], out), rg))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_rows", x)?;
        if start >= end || end > r {
            return Err(NumericsError::SliceOutOfRange {
                op: "slice_rows",
                start,
                end,
                len: r,
            });
        }
        let out = self.value(x).data()[start * c..end * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Op::SliceRows { x, start },
            Tensor::from_parts(vec![end - start, c], out),
            rg,
        ))
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(x).data();
        if index.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "gather",
                lhs: vec![index.len()],
                rhs: shape.to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n);
        for &i in &index {
            if i == GATHER_ZERO {
                out.push(0.0);
            } else if i < src.len() {
                out.push(src[i]);
            } else {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    len: src.len(),
                });
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Gather { x, index }, Tensor::from_parts(shape.to_vec(), out), rg))
    }

    /// Rows of a rank-2 tensor picked by index, in order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("gather_rows", x)?;
        let mut index = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            if row >= r {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather_rows",
                    index: row,
                    len: r,
                });
            }
            index.extend(row * c..(row + 1) * c);
        }
        self.gather(x, index, &[rows.len(), c])
    }

    // ----------------------------------------------------------- reductions

    /// Maximum over `axis`, which is removed from the shape. Ties resolve to
    /// the first occurrence, which then receives the whole gradient.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(NumericsError::AxisOutOfRange {
                op: "max_reduce",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    let si = (o * len + a) * inner + i;
                    let oi = o * inner + i;
                    if src[si] > out[oi] {
                        out[oi] = src[si];
                        argmax[oi] = si;
                    }
                }
            }
        }
        let shape = drop_axis(t.shape(), axis);
        let rg = self.rg(&[x]);
        Ok(self.push(Op::MaxAxis { x, argmax }, Tensor::from_parts(shape, out), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Op::Sum { x, scale: 1.0 }, Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let scale = 1.0 / t.numel() as f64;
        let s: f64 = t.data().iter().sum::<f64>() * scale;
        let rg = self.rg(&[x]);
        self.push(Op::Sum { x, scale }, Tensor::scalar(s), rg)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(NumericsError::AxisOutOfRange {
                op: "sum_axis",
                axis,
                rank: t.rank(),
            });
        }
        let split = split_axis(t.shape(), axis);
        let (outer, len, inner) = split;
        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let shape = drop_axis(t.shape(), axis);
        let rg = self.rg(&[x]);
        Ok(self.push(
            Op::SumAxis {
                x,
                axis_split: split,
                scale,
            },
            Tensor::from_parts(shape, out),
            rg,
        ))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    // ------------------------------------------------------- domain kernels

    /// DFT along axis 0 of a `[n, 2c]` tensor whose column `j < c` holds the
    /// real part and column `j + c` the imaginary part of channel `j`.
    pub fn dft_rows(&mut self, x: Var, inverse: bool) -> Result<Var> {
        let (n, w) = self.dims2("dft", x)?;
        if w % 2 != 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "dft",
                lhs: vec![n, w],
                rhs: vec![n, w + 1],
            });
        }
        let out = complex_columns_transform(self.value(x).data(), n, w / 2, inverse, 1.0);
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Dft { x, inverse }, Tensor::from_parts(vec![n, w], out), rg))
    }

    /// Bidirectional mean squared nearest-neighbour distance between two
    /// `[*, 3]` point sets.
    pub fn chamfer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca) = self.dims2("chamfer", a)?;
        let (nb, cb) = self.dims2("chamfer", b)?;
        if ca != 3 || cb != 3 {
            return Err(NumericsError::ShapeMismatch {
                op: "chamfer",
                lhs: vec![na, ca],
                rhs: vec![nb, cb],
            });
        }
        let pa = self.value(a).data();
        let pb = self.value(b).data();
        let (sa, nn_of_a) = nearest_sq(pa, pb);
        let (sb, nn_of_b) = nearest_sq(pb, pa);
        let loss = sa.iter().sum::<f64>() / na as f64 + sb.iter().sum::<f64>() / nb as f64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Chamfer { a, b, nn_of_a, nn_of_b }, Tensor::scalar(loss), rg))
    }

    /// For each row `i` of `pred` (`[h, 3m]`, m points per row) returns
    /// `(1/m) Σ_x min_y ‖target_x − pred_{i,y}‖` with `target` of shape `[m, 3]`.
    pub fn nearest_mean_dist(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (h, w) = self.dims2("nearest_mean_dist", pred)?;
        let (m, c) = self.dims2("nearest_mean_dist", target)?;
        if c != 3 || w != 3 * m {
            return Err(NumericsError::ShapeMismatch {
                op: "nearest_mean_dist",
                lhs: vec![h, w],
                rhs: vec![m, c],
            });
        }
        let pv = self.value(pred).data();
        let tv = self.value(target).data();
        let mut out = vec![0.0; h];
        let mut nearest = vec![0; h * m];
        for i in 0..h {
            let row = &pv[i * w..(i + 1) * w];
            let (d2, nn) = nearest_sq(tv, row);
            out[i] = d2.iter().map(|v| v.sqrt()).sum::<f64>() / m as f64;
            nearest[i * m..(i + 1) * m].copy_from_slice(&nn);
        }
        let rg = self.rg(&[pred, target]);
        Ok(self.push(
            Op::NearestMeanDist { pred, target, nearest },
            Tensor::from_parts(vec![h], out),
            rg,
        ))
    }

    // ------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(lv.shape()));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let entry = &mut grads[v.0];
        if entry.is_none() {
            *entry = Some(Tensor::zeros(node.value.shape()));
        }
        entry.as_mut().map(|t| t.data_mut())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (m, k) = self.value(*a).dims2();
                let n = node.value.dims2().1;
                if let Some(da) = self.slot(grads, *a) {
                    // dA = dC · Bᵀ   (or dC · B when B was used transposed)
                    let bs = if *trans_b { (k, 1) } else { (1, n) };
                    gemm(m, n, k, gd, (n, 1), bv, bs, da, true);
                }
                if let Some(db) = self.slot(grads, *b) {
                    if *trans_b {
                        // dB = dCᵀ · A, shape [n, k]
                        gemm(n, m, k, gd, (1, n), av, (k, 1), db, true);
                    } else {
                        // dB = Aᵀ · dC, shape [k, n]
                        gemm(k, m, n, av, (1, k), gd, (n, 1), db, true);
                    }
                }
            }
            Op::Binary { kind, a, b, bcast } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = gd.len();
                if let Some(da) = self.slot(grads, *a) {
                    match kind {
                        BinaryKind::Add | BinaryKind::Sub => da.iter_mut().zip(gd).for_each(|(d, g)| *d += g),
                        BinaryKind::Mul => bcast.for_each(n, |i, j| da[i] += gd[i] * bv[j]),
                        BinaryKind::Div => bcast.for_each(n, |i, j| da[i] += gd[i] / bv[j]),
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    match kind {
                        BinaryKind::Add => bcast.for_each(n, |i, j| db[j] += gd[i]),
                        BinaryKind::Sub => bcast.for_each(n, |i, j| db[j] -= gd[i]),
                        BinaryKind::Mul => bcast.for_each(n, |i, j| db[j] += gd[i] * av[i]),
                        BinaryKind::Div => bcast.for_each(n, |i, j| db[j] -= gd[i] * av[i] / (bv[j] * bv[j])),
                    }
                }
            }
            Op::Unary { kind, x } => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for idx in 0..dx.len() {
                        dx[idx] += gd[idx]
                            * match kind {
                                UnaryKind::Relu => {
                                    if xv[idx] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryKind::Sigmoid => y[idx] * (1.0 - y[idx]),
                                UnaryKind::Exp => y[idx],
                                UnaryKind::Log => 1.0 / xv[idx],
                                UnaryKind::Sqrt => {
                                    if y[idx] > 0.0 {
                                        0.5 / y[idx]
                                    } else {
                                        0.0
                                    }
                                }
                            };
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (d, gi) in dx.iter_mut().zip(gd) {
                        *d += gi * scale;
                    }
                }
            }
            Op::Softmax { x } => {
                let (rows, cols) = node.value.dims2();
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &gd[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            dx[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let (rows, cols) = node.value.dims2();
                if let Some(dx) = self.slot(grads, *x) {
                    let nf = cols as f64;
                    for r in 0..rows {
                        let xr = &xhat[r * cols..(r + 1) * cols];
                        let gr = &gd[r * cols..(r + 1) * cols];
                        let sg: f64 = gr.iter().sum();
                        let sgx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / nf;
                        for c in 0..cols {
                            dx[r * cols + c] += k * (nf * gr[c] - sg - xr[c] * sgx);
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if let Some(dv) = self.slot(grads, v) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for k in 0..len * inner {
                                dv[dst + k] += gd[src + k];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (d, gi) in dx.iter_mut().zip(gd) {
                        *d += gi;
                    }
                }
            }
            Op::Transpose { x } => {
                let (r, c) = self.value(*x).dims2();
                if let Some(dx) = self.slot(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += gd[j * r + i];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims2();
                let w = node.value.dims2().1;
                if let Some(dx) = self.slot(grads, *x) {
                    for i in 0..r {
                        for j in 0..w {
                            dx[i * c + start + j] += gd[i * w + j];
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.value(*x).dims2().1;
                if let Some(dx) = self.slot(grads, *x) {
                    let off = start * c;
                    for (k, gi) in gd.iter().enumerate() {
                        dx[off + k] += gi;
                    }
                }
            }
            Op::MaxAxis { x, argmax } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (k, &src) in argmax.iter().enumerate() {
                        dx[src] += gd[k];
                    }
                }
            }
            Op::Sum { x, scale } => {
                if let Some(dx) = self.slot(grads, *x) {
                    let v = gd[0] * scale;
                    dx.iter_mut().for_each(|d| *d += v);
                }
            }
            Op::SumAxis {
                x,
                axis_split: (outer, len, inner),
                scale,
            } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for o in 0..*outer {
                        for a in 0..*len {
                            let base = (o * len + a) * inner;
                            for i in 0..*inner {
                                dx[base + i] += gd[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::Gather { x, index } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (k, &src) in index.iter().enumerate() {
                        if src != GATHER_ZERO {
                            dx[src] += gd[k];
                        }
                    }
                }
            }
            Op::Dft { x, inverse } => {
                let (n, w) = node.value.dims2();
                if let Some(dx) = self.slot(grads, *x) {
                    // The adjoint of the unnormalized forward transform is the
                    // unnormalized inverse (n · idft); the adjoint of idft is
                    // dft / n.
                    let nf = n as f64;
                    let adj = if *inverse {
                        complex_columns_transform(gd, n, w / 2, false, 1.0 / nf)
                    } else {
                        complex_columns_transform(gd, n, w / 2, true, nf)
                    };
                    for (d, v) in dx.iter_mut().zip(adj) {
                        *d += v;
                    }
                }
            }
            Op::Chamfer { a, b, nn_of_a, nn_of_b } => {
                let pa = self.value(*a).data();
                let pb = self.value(*b).data();
                let na = nn_of_a.len() as f64;
                let nb = nn_of_b.len() as f64;
                let s = gd[0];
                // Accumulate into owned buffers first: a and b may alias.
                let mut ga = vec![0.0; pa.len()];
                let mut gb = vec![0.0; pb.len()];
                for (i, &j) in nn_of_a.iter().enumerate() {
                    for k in 0..3 {
                        let d = 2.0 * (pa[3 * i + k] - pb[3 * j + k]) * s / na;
                        ga[3 * i + k] += d;
                        gb[3 * j + k] -= d;
                    }
                }
                for (j, &i) in nn_of_b.iter().enumerate() {
                    for k in 0..3 {
                        let d = 2.0 * (pb[3 * j + k] - pa[3 * i + k]) * s / nb;
                        gb[3 * j + k] += d;
                        ga[3 * i + k] -= d;
                    }
                }
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(&ga).for_each(|(d, v)| *d += v);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.iter_mut().zip(&gb).for_each(|(d, v)| *d += v);
                }
            }
            Op::NearestMeanDist { pred, target, nearest } => {
                let pv = self.value(*pred).data();
                let tv = self.value(*target).data();
                let (h, w) = self.value(*pred).dims2();
                let m = w / 3;
                let mut gp = vec![0.0; pv.len()];
                let mut gt = vec![0.0; tv.len()];
                for i in 0..h {
                    let s = gd[i] / m as f64;
                    for x in 0..m {
                        let y = nearest[i * m + x];
                        let p = &pv[i * w + 3 * y..i * w + 3 * y + 3];
                        let t = &tv[3 * x..3 * x + 3];
                        let dist = ((t[0] - p[0]).powi(2) + (t[1] - p[1]).powi(2) + (t[2] - p[2]).powi(2)).sqrt();
                        if dist > 0.0 {
                            for k in 0..3 {
                                let d = s * (p[k] - t[k]) / dist;
                                gp[i * w + 3 * y + k] += d;
                                gt[3 * x + k] -= d;
                            }
                        }
                    }
                }
                if let Some(dp) = self.slot(grads, *pred) {
                    dp.iter_mut().zip(&gp).for_each(|(d, v)| *d += v);
                }
                if let Some(dt) = self.slot(grads, *target) {
                    dt.iter_mut().zip(&gt).for_each(|(d, v)| *d += v);
                }
            }
        }
    }
}

fn kind_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::MatMul => "matmul",
        OpKind::Add => "add",
        OpKind::Mul => "mul",
        OpKind::Relu => "relu",
        OpKind::Softmax => "softmax",
        OpKind::LayerNorm => "layer_norm",
        OpKind::Concat { .. } => "concat",
        OpKind::Reshape => "reshape",
        OpKind::MaxReduce { .. } => "max_reduce",
        OpKind::Log => "log",
        OpKind::Sigmoid => "sigmoid",
        OpKind::Mean => "mean",
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Squared distance from every point of `from` to its nearest point in `to`,
/// with the nearest index (first on ties).
pub(crate) fn nearest_sq(from: &[f64], to: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let nf = from.len() / 3;
    let nt = to.len() / 3;
    let mut best = vec![f64::INFINITY; nf];
    let mut idx = vec![0; nf];
    for i in 0..nf {
        let (x, y, z) = (from[3 * i], from[3 * i + 1], from[3 * i + 2]);
        for j in 0..nt {
            let dx = x - to[3 * j];
            let dy = y - to[3 * j + 1];
            let dz = z - to[3 * j + 2];
            let d = dx * dx + dy * dy + dz * dz;
            if d < best[i] {
                best[i] = d;
                idx[i] = j;
            }
        }
    }
    (best, idx)
}

/// Transforms each complex column pair of a `[n, 2c]` buffer along axis 0,
/// then multiplies by `post_scale`.
fn complex_columns_transform(src: &[f64], n: usize, channels: usize, inverse: bool, post_scale: f64) -> Vec<f64> {
    let w = 2 * channels;
    let mut out = vec![0.0; src.len()];
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for c in 0..channels {
        for r in 0..n {
            re[r] = src[r * w + c];
            im[r] = src[r * w + channels + c];
        }
        transform_in_place(&mut re, &mut im, inverse);
        for r in 0..n {
            out[r * w + c] = re[r] * post_scale;
            out[r * w + channels + c] = im[r] * post_scale;
        }
    }
    out
}
