//! Reverse-mode automatic differentiation over dense rank-1/rank-2 tensors.
//!
//! A [`Tape`] is an append-only arena of nodes. Every operation records its
//! inputs by node id and stores its forward value, so a single backward sweep
//! in reverse creation order yields exact analytic gradients. Tapes are plain
//! owned values: one tape per training step, dropped afterwards. Construction
//! and backward are single-threaded and allocation order is fixed, so repeated
//! runs over identical inputs are bit-identical.

use crate::error::{CoreError, Result};

// ── Shapes and tensors ──────────────────────────────────────────────────────

/// Layout of a tensor: a vector of length `n` or a row-major `r x c` matrix.
/// Scalars are represented as `Vector(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Vector(n) => *n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Shape::Vector(1))
    }
}

/// A dense tensor value. `requires_grad` marks trainable leaves; `grad` is the
/// accumulator used by the optimizer between backward and the update step.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Shape,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    fn checked(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if shape.len() != values.len() {
            return Err(CoreError::domain(format!(
                "tensor values length {} does not match shape {:?}",
                values.len(),
                shape
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::numeric(format!(
                "non-finite value {bad} rejected at tensor creation"
            )));
        }
        Ok(Tensor { shape, values, requires_grad: false, grad: None })
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::checked(Shape::Vector(n), values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::checked(Shape::Matrix(rows, cols), values)
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::checked(Shape::Vector(1), vec![v])
    }

    /// Marks the tensor trainable and installs a zeroed gradient accumulator.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.values.len()]);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

// ── Tape nodes ──────────────────────────────────────────────────────────────

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// y = W x, W rank-2, x rank-1.
    MatVec { w: NodeId, x: NodeId },
    /// Element-wise sum of same-shape inputs.
    AddN { inputs: Vec<NodeId> },
    /// Element-wise product of two same-shape inputs.
    Mul { a: NodeId, b: NodeId },
    /// x scaled by a scalar node: y_i = s * x_i.
    ScaleBy { x: NodeId, s: NodeId },
    /// y_i = mul * x_i + add with f64 constants.
    Affine { x: NodeId, mul: f64 },
    Concat { parts: Vec<NodeId> },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    /// Natural log, domain (0, inf).
    Log { x: NodeId },
    /// Max-subtraction stabilised softmax over a vector.
    Softmax { x: NodeId },
    /// log(softmax(x)), computed stably as x - max - log(sum(exp(x - max))).
    LogSoftmax { x: NodeId },
    /// Vector -> scalar sum.
    Sum { x: NodeId },
    /// Vector -> scalar mean.
    Mean { x: NodeId },
    Dot { a: NodeId, b: NodeId },
    /// Pick coordinate i of a vector as a scalar node.
    Index { x: NodeId, i: usize },
    /// Row r of a matrix as a vector node.
    Row { m: NodeId, r: usize },
    /// Element-wise max; on ties the gradient routes to `a`.
    MaxPair { a: NodeId, b: NodeId },
    /// Clamp into [lo, hi]; gradient passes only strictly inside.
    Clamp { x: NodeId, lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], addressed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the backward output with respect to node `id`, if the node
    /// participates in the differentiable subgraph.
    pub fn of(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Append-only arena of differentiable operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a tensor as a leaf. Gradient flows back to it iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(t, Op::Leaf, needs)
    }

    /// Non-trainable scalar leaf.
    pub fn constant(&mut self, v: f64) -> Result<NodeId> {
        Ok(self.leaf(Tensor::scalar(v)?))
    }

    /// Non-trainable vector leaf.
    pub fn constant_vector(&mut self, values: Vec<f64>) -> Result<NodeId> {
        Ok(self.leaf(Tensor::vector(values)?))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value.values
    }

    /// Value of a scalar node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.values[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Shape, values: Vec<f64>, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        let value = Tensor { shape, values, requires_grad: false, grad: None };
        self.push(value, op, needs)
    }

    fn vec_shape(&self, id: NodeId, op: &'static str) -> Result<usize> {
        match self.nodes[id.0].value.shape {
            Shape::Vector(n) => Ok(n),
            s => Err(CoreError::ShapeMismatch { op, left: s, right: Shape::Vector(0) }),
        }
    }

    fn same_vec(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<usize> {
        let (sa, sb) = (self.nodes[a.0].value.shape, self.nodes[b.0].value.shape);
        match (sa, sb) {
            (Shape::Vector(n), Shape::Vector(m)) if n == m => Ok(n),
            _ => Err(CoreError::ShapeMismatch { op, left: sa, right: sb }),
        }
    }

    // ── Operations ──────────────────────────────────────────────────────────

    /// y = W x.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = match self.nodes[w.0].value.shape {
            Shape::Matrix(r, c) => (r, c),
            s => {
                return Err(CoreError::ShapeMismatch {
                    op: "matvec",
                    left: s,
                    right: self.nodes[x.0].value.shape,
                })
            }
        };
        let n = self.vec_shape(x, "matvec")?;
        if n != cols {
            return Err(CoreError::ShapeMismatch {
                op: "matvec",
                left: Shape::Matrix(rows, cols),
                right: Shape::Vector(n),
            });
        }
        let wv = &self.nodes[w.0].value.values;
        let xv = &self.nodes[x.0].value.values;
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &wv[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for c in 0..cols {
                acc += row[c] * xv[c];
            }
            out[r] = acc;
        }
        Ok(self.push_op(Shape::Vector(rows), out, Op::MatVec { w, x }, &[w, x]))
    }

    /// y = W x + b.
    pub fn linear(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.add_n(&[a, b])
    }

    /// Element-wise sum of one or more same-shape nodes.
    pub fn add_n(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let Some(first) = inputs.first() else {
            return Err(CoreError::domain("add_n requires at least one input"));
        };
        let shape = self.nodes[first.0].value.shape;
        for id in inputs {
            let s = self.nodes[id.0].value.shape;
            if s != shape {
                return Err(CoreError::ShapeMismatch { op: "add_n", left: shape, right: s });
            }
        }
        let mut out = vec![0.0; shape.len()];
        for id in inputs {
            for (o, v) in out.iter_mut().zip(&self.nodes[id.0].value.values) {
                *o += v;
            }
        }
        Ok(self.push_op(shape, out, Op::AddN { inputs: inputs.to_vec() }, inputs))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.same_vec(a, b, "mul")?;
        let av = &self.nodes[a.0].value.values;
        let bv = &self.nodes[b.0].value.values;
        let out: Vec<f64> = (0..n).map(|i| av[i] * bv[i]).collect();
        Ok(self.push_op(Shape::Vector(n), out, Op::Mul { a, b }, &[a, b]))
    }

    /// y_i = s * x_i where `s` is a scalar node.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.nodes[s.0].value.shape.is_scalar() {
            return Err(CoreError::ShapeMismatch {
                op: "scale_by",
                left: self.nodes[s.0].value.shape,
                right: Shape::Vector(1),
            });
        }
        let sv = self.scalar_value(s);
        let shape = self.nodes[x.0].value.shape;
        let out: Vec<f64> = self.nodes[x.0].value.values.iter().map(|v| v * sv).collect();
        Ok(self.push_op(shape, out, Op::ScaleBy { x, s }, &[x, s]))
    }

    /// y_i = mul * x_i + add with plain f64 constants.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let shape = self.nodes[x.0].value.shape;
        let out: Vec<f64> = self.nodes[x.0].value.values.iter().map(|v| mul * v + add).collect();
        self.push_op(shape, out, Op::Affine { x, mul }, &[x])
    }

    /// Concatenates rank-1 nodes in order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::domain("concat requires at least one input"));
        }
        let mut out = Vec::new();
        for id in parts {
            self.vec_shape(*id, "concat")?;
            out.extend_from_slice(&self.nodes[id.0].value.values);
        }
        let n = out.len();
        Ok(self.push_op(Shape::Vector(n), out, Op::Concat { parts: parts.to_vec() }, parts))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let shape = self.nodes[x.0].value.shape;
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .values
            .iter()
            .map(|v| {
                if *v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        self.push_op(shape, out, Op::Sigmoid { x }, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let shape = self.nodes[x.0].value.shape;
        let out: Vec<f64> = self.nodes[x.0].value.values.iter().map(|v| v.tanh()).collect();
        self.push_op(shape, out, Op::Tanh { x }, &[x])
    }

    /// Natural log; every input coordinate must be strictly positive.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x.0].value.shape;
        if let Some(bad) = self.nodes[x.0].value.values.iter().find(|v| **v <= 0.0) {
            return Err(CoreError::domain(format!("log of non-positive value {bad}")));
        }
        let out: Vec<f64> = self.nodes[x.0].value.values.iter().map(|v| v.ln()).collect();
        Ok(self.push_op(shape, out, Op::Log { x }, &[x]))
    }

    /// Softmax over a non-empty vector, stabilised by max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.vec_shape(x, "softmax")?;
        if n == 0 {
            return Err(CoreError::domain("softmax over an empty set"));
        }
        let xv = &self.nodes[x.0].value.values;
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        Ok(self.push_op(Shape::Vector(n), out, Op::Softmax { x }, &[x]))
    }

    /// log(softmax(x)) computed without forming the softmax first.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.vec_shape(x, "log_softmax")?;
        if n == 0 {
            return Err(CoreError::domain("log_softmax over an empty set"));
        }
        let xv = &self.nodes[x.0].value.values;
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = xv.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let out: Vec<f64> = xv.iter().map(|v| v - lse).collect();
        Ok(self.push_op(Shape::Vector(n), out, Op::LogSoftmax { x }, &[x]))
    }

    /// Vector -> scalar sum.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.vec_shape(x, "sum")?;
        let s: f64 = self.nodes[x.0].value.values.iter().sum();
        Ok(self.push_op(Shape::Vector(1), vec![s], Op::Sum { x }, &[x]))
    }

    /// Vector -> scalar mean; empty input is a domain error.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.vec_shape(x, "mean")?;
        if n == 0 {
            return Err(CoreError::domain("mean over an empty vector"));
        }
        let s: f64 = self.nodes[x.0].value.values.iter().sum();
        Ok(self.push_op(Shape::Vector(1), vec![s / n as f64], Op::Mean { x }, &[x]))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.same_vec(a, b, "dot")?;
        let av = &self.nodes[a.0].value.values;
        let bv = &self.nodes[b.0].value.values;
        let mut s = 0.0;
        for i in 0..n {
            s += av[i] * bv[i];
        }
        Ok(self.push_op(Shape::Vector(1), vec![s], Op::Dot { a, b }, &[a, b]))
    }

    /// Scalar node holding coordinate `i` of vector node `x`.
    pub fn index(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let n = self.vec_shape(x, "index")?;
        if i >= n {
            return Err(CoreError::domain(format!("index {i} out of range for vector of {n}")));
        }
        let v = self.nodes[x.0].value.values[i];
        Ok(self.push_op(Shape::Vector(1), vec![v], Op::Index { x, i }, &[x]))
    }

    /// Vector node holding row `r` of matrix node `m`.
    pub fn row(&mut self, m: NodeId, r: usize) -> Result<NodeId> {
        let (rows, cols) = match self.nodes[m.0].value.shape {
            Shape::Matrix(rr, cc) => (rr, cc),
            s => return Err(CoreError::ShapeMismatch { op: "row", left: s, right: Shape::Matrix(0, 0) }),
        };
        if r >= rows {
            return Err(CoreError::domain(format!("row {r} out of range for matrix with {rows} rows")));
        }
        let out = self.nodes[m.0].value.values[r * cols..(r + 1) * cols].to_vec();
        Ok(self.push_op(Shape::Vector(cols), out, Op::Row { m, r }, &[m]))
    }

    /// Element-wise maximum; on exact ties the gradient routes to `a`.
    pub fn max_pair(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.same_vec(a, b, "max_pair")?;
        let av = &self.nodes[a.0].value.values;
        let bv = &self.nodes[b.0].value.values;
        let out: Vec<f64> = (0..n).map(|i| if av[i] >= bv[i] { av[i] } else { bv[i] }).collect();
        Ok(self.push_op(Shape::Vector(n), out, Op::MaxPair { a, b }, &[a, b]))
    }

    /// Clamp into [lo, hi]; the gradient is passed through only where the
    /// input lies strictly inside the interval.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo < hi) {
            return Err(CoreError::domain(format!("clamp bounds [{lo}, {hi}] are not ordered")));
        }
        let shape = self.nodes[x.0].value.shape;
        let out: Vec<f64> = self.nodes[x.0].value.values.iter().map(|v| v.clamp(lo, hi)).collect();
        Ok(self.push_op(shape, out, Op::Clamp { x, lo, hi }, &[x]))
    }

    // ── Backward ────────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar output node. Returns per-node gradients for
    /// every node on a differentiable path between a `requires_grad` leaf and
    /// the output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if !self.nodes[output.0].value.shape.is_scalar() {
            return Err(CoreError::domain(format!(
                "backward requires a scalar output, got {:?}",
                self.nodes[output.0].value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, update: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.nodes[id.0].value.len()]);
        }
        update(slot.as_mut().unwrap());
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatVec { w, x } => {
                let (rows, cols) = match self.nodes[w.0].value.shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!("matvec weight is rank-2 by construction"),
                };
                let wv = &self.nodes[w.0].value.values;
                let xv = &self.nodes[x.0].value.values;
                self.accumulate(grads, *w, |dw| {
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let drow = &mut dw[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            drow[c] += gr * xv[c];
                        }
                    }
                });
                self.accumulate(grads, *x, |dx| {
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &wv[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dx[c] += gr * row[c];
                        }
                    }
                });
            }
            Op::AddN { inputs } => {
                for id in inputs {
                    self.accumulate(grads, *id, |d| {
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv += gv;
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                let av = &self.nodes[a.0].value.values;
                let bv = &self.nodes[b.0].value.values;
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::ScaleBy { x, s } => {
                let sv = self.nodes[s.0].value.values[0];
                let xv = &self.nodes[x.0].value.values;
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * sv;
                    }
                });
                self.accumulate(grads, *s, |d| {
                    let mut acc = 0.0;
                    for i in 0..xv.len() {
                        acc += g[i] * xv[i];
                    }
                    d[0] += acc;
                });
            }
            Op::Affine { x, mul } => {
                let mul = *mul;
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * mul;
                    }
                });
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for id in parts {
                    let len = self.nodes[id.0].value.len();
                    let slice = &g[off..off + len];
                    self.accumulate(grads, *id, |d| {
                        for (dv, gv) in d.iter_mut().zip(slice) {
                            *dv += gv;
                        }
                    });
                    off += len;
                }
            }
            Op::Sigmoid { x } => {
                let yv = &node.value.values;
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::Tanh { x } => {
                let yv = &node.value.values;
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - yv[i] * yv[i]);
                    }
                });
            }
            Op::Log { x } => {
                let xv = &self.nodes[x.0].value.values;
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / xv[i];
                    }
                });
            }
            Op::Softmax { x } => {
                let yv = &node.value.values;
                let gy: f64 = g.iter().zip(yv).map(|(gv, yvv)| gv * yvv).sum();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += yv[i] * (g[i] - gy);
                    }
                });
            }
            Op::LogSoftmax { x } => {
                let yv = &node.value.values;
                let gsum: f64 = g.iter().sum();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] - yv[i].exp() * gsum;
                    }
                });
            }
            Op::Sum { x } => {
                self.accumulate(grads, *x, |d| {
                    for dv in d.iter_mut() {
                        *dv += g[0];
                    }
                });
            }
            Op::Mean { x } => {
                let n = self.nodes[x.0].value.len() as f64;
                self.accumulate(grads, *x, |d| {
                    for dv in d.iter_mut() {
                        *dv += g[0] / n;
                    }
                });
            }
            Op::Dot { a, b } => {
                let av = &self.nodes[a.0].value.values;
                let bv = &self.nodes[b.0].value.values;
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[0] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[0] * av[i];
                    }
                });
            }
            Op::Index { x, i } => {
                let i = *i;
                self.accumulate(grads, *x, |d| {
                    d[i] += g[0];
                });
            }
            Op::Row { m, r } => {
                let cols = node.value.len();
                let r = *r;
                self.accumulate(grads, *m, |d| {
                    for c in 0..cols {
                        d[r * cols + c] += g[c];
                    }
                });
            }
            Op::MaxPair { a, b } => {
                let av = &self.nodes[a.0].value.values;
                let bv = &self.nodes[b.0].value.values;
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        if av[i] >= bv[i] {
                            d[i] += g[i];
                        }
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        if av[i] < bv[i] {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &self.nodes[x.0].value.values;
                let (lo, hi) = (*lo, *hi);
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        if xv[i] > lo && xv[i] < hi {
                            d[i] += g[i];
                        }
                    }
                });
            }
        }
    }
}

// ── Composite losses ────────────────────────────────────────────────────────

/// Mean binary cross-entropy between per-element scores in (0, 1) and 0/1
/// labels. Scores are clamped into [floor, 1 - floor] before the logs.
pub fn bce_loss(tape: &mut Tape, scores: NodeId, labels: &[f64], floor: f64) -> Result<NodeId> {
    let n = tape.value(scores).len();
    if n != labels.len() {
        return Err(CoreError::ShapeMismatch {
            op: "bce_loss",
            left: Shape::Vector(n),
            right: Shape::Vector(labels.len()),
        });
    }
    if n == 0 {
        return Err(CoreError::domain("bce_loss over an empty set"));
    }
    if labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(CoreError::domain("bce_loss labels must be 0 or 1"));
    }
    let s = tape.clamp(scores, floor, 1.0 - floor)?;
    let log_s = tape.log(s)?;
    let one_minus = tape.affine(s, -1.0, 1.0);
    let log_one_minus = tape.log(one_minus)?;
    let y = tape.constant_vector(labels.to_vec())?;
    let y_inv = tape.affine(y, -1.0, 1.0);
    let pos = tape.mul(y, log_s)?;
    let neg = tape.mul(y_inv, log_one_minus)?;
    let both = tape.add(pos, neg)?;
    let mean = tape.mean(both)?;
    Ok(tape.affine(mean, -1.0, 0.0))
}

/// Categorical cross-entropy of a gold class against raw logits.
pub fn cross_entropy_loss(tape: &mut Tape, logits: NodeId, gold: usize) -> Result<NodeId> {
    let log_probs = tape.log_softmax(logits)?;
    let picked = tape.index(log_probs, gold)?;
    Ok(tape.affine(picked, -1.0, 0.0))
}
