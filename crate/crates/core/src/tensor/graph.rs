use crate::error::{Error, Result};

use super::kernels;
use super::{Shape, Tensor};

/// Handle to a node of a [`Graph`].
///
/// Handles are only meaningful for the graph that issued them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(usize);

impl Value {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, n: usize, p: usize },
    Add { a: usize, b: usize, bc: Broadcast },
    Sub { a: usize, b: usize, bc: Broadcast },
    Mul { a: usize, b: usize, bc: Broadcast },
    Scale { a: usize, factor: f64 },
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Log(usize),
    Softmax(usize),
    Concat { a: usize, b: usize },
    Slice { a: usize, start: usize },
    Sum(usize),
    Row { table: usize, row: usize },
    Reshape(usize),
}

impl Op {
    fn parents(&self) -> [Option<usize>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::MatMul { a, b, .. }
            | Op::Add { a, b, .. }
            | Op::Sub { a, b, .. }
            | Op::Mul { a, b, .. }
            | Op::Concat { a, b } => [Some(a), Some(b)],
            Op::Scale { a, .. }
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::Slice { a, .. }
            | Op::Sum(a)
            | Op::Reshape(a) => [Some(a), None],
            Op::Row { table, .. } => [Some(table), None],
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in execution order, so any node's parents have
/// smaller indices; backward walks indices in reverse. Gradients persist
/// across calls to [`Graph::backward`] and accumulate until
/// [`Graph::zero_grad`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Value {
        let grad = requires_grad.then(|| vec![0.0; value.numel()]);
        self.nodes.push(Node {
            value,
            grad,
            op: Op::Leaf,
            requires_grad,
        });
        Value(self.nodes.len() - 1)
    }

    /// Leaf that requires a gradient.
    pub fn param(&mut self, value: Tensor) -> Value {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Value {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Value) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Value) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    /// Scalar content of a single-element node.
    pub fn item(&self, v: Value) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, or `None` when the node does not require one.
    pub fn grad(&self, v: Value) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let data = node
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Some(Tensor::new(node.value.shape().clone(), data).expect("grad shape"))
    }

    /// Borrow the accumulated gradient buffer without copying.
    pub fn grad_slice(&self, v: Value) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Value {
        let requires_grad = op
            .parents()
            .iter()
            .flatten()
            .any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Value(self.nodes.len() - 1)
    }

    /// Matrix product. Rank-1 operands act as a row (left) or column
    /// (right) vector and the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let sa = self.shape(a).clone();
        let sb = self.shape(b).clone();
        let mismatch = || Error::Dimension {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        let (m, n, a_vec) = match sa.dims() {
            [n] => (1, *n, true),
            [m, n] => (*m, *n, false),
            _ => return Err(mismatch()),
        };
        let (n2, p, b_vec) = match sb.dims() {
            [n2] => (*n2, 1, true),
            [n2, p] => (*n2, *p, false),
            _ => return Err(mismatch()),
        };
        if n != n2 {
            return Err(mismatch());
        }
        let out = kernels::matmul(self.data(a), self.data(b), m, n, p);
        let dims: Vec<usize> = match (a_vec, b_vec) {
            (true, true) => vec![],
            (true, false) => vec![p],
            (false, true) => vec![m],
            (false, false) => vec![m, p],
        };
        let t = Tensor::new(dims, out)?;
        Ok(self.push(t, Op::MatMul { a: a.0, b: b.0, m, n, p }))
    }

    fn broadcast(&self, op: &'static str, a: Value, b: Value) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok(Broadcast::Same)
        } else if sb.numel() == 1 {
            Ok(Broadcast::RhsScalar)
        } else if sa.numel() == 1 {
            Ok(Broadcast::LhsScalar)
        } else {
            Err(Error::Dimension {
                op,
                left: sa.clone(),
                right: sb.clone(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Value,
        b: Value,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Value> {
        let bc = self.broadcast(name, a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let (shape, data): (Shape, Vec<f64>) = match bc {
            Broadcast::Same => (
                self.shape(a).clone(),
                da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::RhsScalar => {
                let y = db[0];
                (self.shape(a).clone(), da.iter().map(|&x| f(x, y)).collect())
            }
            Broadcast::LhsScalar => {
                let x = da[0];
                (self.shape(b).clone(), db.iter().map(|&y| f(x, y)).collect())
            }
        };
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, make(a.0, b.0, bc)))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("add", a, b, |x, y| x + y, |a, b, bc| Op::Add { a, b, bc })
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("sub", a, b, |x, y| x - y, |a, b, bc| Op::Sub { a, b, bc })
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("mul", a, b, |x, y| x * y, |a, b, bc| Op::Mul { a, b, bc })
    }

    pub fn scale(&mut self, a: Value, factor: f64) -> Value {
        let t = self.map(a, |x| x * factor);
        self.push(t, Op::Scale { a: a.0, factor })
    }

    fn map(&self, a: Value, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        Tensor::new(v.shape().clone(), data).expect("same shape")
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let t = self.map(a, kernels::sigmoid);
        self.push(t, Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: Value) -> Value {
        let t = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(t, Op::Relu(a.0))
    }

    pub fn log(&mut self, a: Value) -> Value {
        let t = self.map(a, f64::ln);
        self.push(t, Op::Log(a.0))
    }

    /// Softmax over all elements, stabilized by subtracting the maximum.
    pub fn softmax(&mut self, a: Value) -> Result<Value> {
        let z = self.value(a);
        if z.numel() == 0 {
            return Err(Error::contract("softmax of an empty vector"));
        }
        if let Some(bad) = z.data().iter().find(|x| !x.is_finite()) {
            return Err(Error::NumericDomain {
                op: "softmax",
                detail: format!("non-finite logit {bad}"),
            });
        }
        let t = Tensor::new(z.shape().clone(), kernels::softmax(z.data()))?;
        Ok(self.push(t, Op::Softmax(a.0)))
    }

    /// Concatenate two rank-1 values.
    pub fn concat(&mut self, a: Value, b: Value) -> Result<Value> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rank() != 1 || sb.rank() != 1 {
            return Err(Error::Dimension {
                op: "concat",
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        let mut data = self.data(a).to_vec();
        data.extend_from_slice(self.data(b));
        Ok(self.push(Tensor::vector(data), Op::Concat { a: a.0, b: b.0 }))
    }

    /// Contiguous `[start, start + len)` window of a rank-1 value.
    pub fn slice(&mut self, a: Value, start: usize, len: usize) -> Result<Value> {
        let s = self.shape(a);
        if s.rank() != 1 || start + len > s.numel() {
            return Err(Error::Dimension {
                op: "slice",
                left: s.clone(),
                right: Shape::new([start, start + len]),
            });
        }
        let data = self.data(a)[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice { a: a.0, start }))
    }

    /// Single element of a rank-1 value, as a scalar.
    pub fn element(&mut self, a: Value, index: usize) -> Result<Value> {
        let v = self.slice(a, index, 1)?;
        self.reshape(v, &[])
    }

    pub fn sum(&mut self, a: Value) -> Value {
        let s: f64 = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    /// Row `row` of a rank-2 table (embedding lookup).
    pub fn row(&mut self, table: Value, row: usize) -> Result<Value> {
        let s = self.shape(table);
        let [rows, cols] = *s.dims() else {
            return Err(Error::Dimension {
                op: "row",
                left: s.clone(),
                right: Shape::new([row]),
            });
        };
        if row >= rows {
            return Err(Error::contract(format!(
                "row index {row} out of range for table with {rows} rows"
            )));
        }
        let data = self.data(table)[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row { table: table.0, row }))
    }

    pub fn reshape(&mut self, a: Value, dims: &[usize]) -> Result<Value> {
        let t = self.value(a).clone().reshaped(dims)?;
        Ok(self.push(t, Op::Reshape(a.0)))
    }

    /// Reverse-mode sweep from a single-element root.
    ///
    /// Adds this pass's gradients onto whatever is already accumulated.
    pub fn backward(&mut self, root: Value) -> Result<()> {
        let root_numel = self.value(root).numel();
        if root_numel != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar root, got shape {}",
                self.shape(root)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pass[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            self.propagate(i, &g, &mut pass);
            let node = &mut self.nodes[i];
            let acc = node.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (a, x) in acc.iter_mut().zip(&g) {
                *a += x;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |p: usize| nodes[p].requires_grad;
        let data = |p: usize| nodes[p].value.data();
        let mut into = |p: usize, f: &mut dyn FnMut(&mut [f64])| {
            let n = nodes[p].value.numel();
            f(pass[p].get_or_insert_with(|| vec![0.0; n]));
        };
        let out = nodes[i].value.data();
        match nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, n, p } => {
                if wants(a) {
                    into(a, &mut |da| kernels::matmul_grad_lhs(g, data(b), da, m, n, p));
                }
                if wants(b) {
                    into(b, &mut |db| kernels::matmul_grad_rhs(data(a), g, db, m, n, p));
                }
            }
            Op::Add { a, b, bc } | Op::Sub { a, b, bc } => {
                let sign = if matches!(nodes[i].op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if wants(a) {
                    let scalar = matches!(bc, Broadcast::LhsScalar);
                    into(a, &mut |da| reduce_into(da, g, 1.0, scalar));
                }
                if wants(b) {
                    let scalar = matches!(bc, Broadcast::RhsScalar);
                    into(b, &mut |db| reduce_into(db, g, sign, scalar));
                }
            }
            Op::Mul { a, b, bc } => {
                if wants(a) {
                    let scalar = matches!(bc, Broadcast::LhsScalar);
                    into(a, &mut |da| mul_grad(da, g, data(b), scalar));
                }
                if wants(b) {
                    let scalar = matches!(bc, Broadcast::RhsScalar);
                    into(b, &mut |db| mul_grad(db, g, data(a), scalar));
                }
            }
            Op::Scale { a, factor } => {
                if wants(a) {
                    into(a, &mut |da| kernels::axpy(factor, g, da));
                }
            }
            Op::Tanh(a) => {
                if wants(a) {
                    into(a, &mut |da| {
                        for ((d, gi), t) in da.iter_mut().zip(g).zip(out) {
                            *d += gi * (1.0 - t * t);
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                if wants(a) {
                    into(a, &mut |da| {
                        for ((d, gi), s) in da.iter_mut().zip(g).zip(out) {
                            *d += gi * s * (1.0 - s);
                        }
                    });
                }
            }
            Op::Relu(a) => {
                if wants(a) {
                    into(a, &mut |da| {
                        for ((d, gi), x) in da.iter_mut().zip(g).zip(data(a)) {
                            if *x > 0.0 {
                                *d += gi;
                            }
                        }
                    });
                }
            }
            Op::Log(a) => {
                if wants(a) {
                    into(a, &mut |da| {
                        for ((d, gi), x) in da.iter_mut().zip(g).zip(data(a)) {
                            *d += gi / x;
                        }
                    });
                }
            }
            Op::Softmax(a) => {
                if wants(a) {
                    let inner = kernels::dot(g, out);
                    into(a, &mut |da| {
                        for ((d, gi), pi) in da.iter_mut().zip(g).zip(out) {
                            *d += pi * (gi - inner);
                        }
                    });
                }
            }
            Op::Concat { a, b } => {
                let na = nodes[a].value.numel();
                if wants(a) {
                    into(a, &mut |da| kernels::axpy(1.0, &g[..na], da));
                }
                if wants(b) {
                    into(b, &mut |db| kernels::axpy(1.0, &g[na..], db));
                }
            }
            Op::Slice { a, start } => {
                if wants(a) {
                    into(a, &mut |da| kernels::axpy(1.0, g, &mut da[start..start + g.len()]));
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let gi = g[0];
                    into(a, &mut |da| da.iter_mut().for_each(|d| *d += gi));
                }
            }
            Op::Row { table, row } => {
                if wants(table) {
                    let cols = g.len();
                    into(table, &mut |dt| {
                        kernels::axpy(1.0, g, &mut dt[row * cols..(row + 1) * cols])
                    });
                }
            }
            Op::Reshape(a) => {
                if wants(a) {
                    into(a, &mut |da| kernels::axpy(1.0, g, da));
                }
            }
        }
    }
}

/// Gradient of an elementwise product into one operand, given the other.
fn mul_grad(dst: &mut [f64], g: &[f64], other: &[f64], dst_scalar: bool) {
    if dst_scalar {
        dst[0] += kernels::dot(g, other);
    } else if other.len() == 1 {
        kernels::axpy(other[0], g, dst);
    } else {
        for ((d, gi), y) in dst.iter_mut().zip(g).zip(other) {
            *d += gi * y;
        }
    }
}

/// Add `sign * g` into `dst`, summing everything into one slot when the
/// destination was broadcast from a scalar.
fn reduce_into(dst: &mut [f64], g: &[f64], sign: f64, scalar: bool) {
    if scalar {
        dst[0] += sign * g.iter().sum::<f64>();
    } else {
        kernels::axpy(sign, g, dst);
    }
}
