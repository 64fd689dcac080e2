//! Define-by-run reverse-mode differentiation over dense row-major tensors.
//!
//! A [`Tape`] records every operation together with its forward value. The
//! tape is rebuilt for each evaluation; [`Tape::backward`] walks the nodes in
//! reverse insertion order and accumulates adjoints for every node.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor of rank 0, 1 or 2.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        if shape.len() > 2 {
            return Err(Error::contract(format!(
                "tensors have rank at most 2, got shape {shape:?}"
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "expected a scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.data.len(), other.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn accumulate(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind<T> {
    Leaf,
    MatMul,
    /// Elementwise add; the right operand may be a row vector broadcast over
    /// the rows of a matrix (bias add).
    Add,
    Sub,
    Mul,
    Tanh,
    Softplus,
    Square,
    Sum,
    Scale(T),
    Log,
    Exp,
}

impl<T> OpKind<T> {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Tanh => "tanh",
            OpKind::Softplus => "softplus",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Scale(_) => "scale",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: OpKind<T>,
    inputs: [usize; 2],
    value: Tensor<T>,
}

/// Recording of a computation, confined to a single thread of use.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; nodes the loss does not depend on
    /// have no entry.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of the loss w.r.t. `v`, zero-filled when `v` does not reach
    /// the loss.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }
}

fn broadcast_row(left: &[usize], right: &[usize]) -> bool {
    left.len() == 2 && right.len() == 1 && left[1] == right[0]
}

fn check_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::non_finite(format!("{op} output")))
    }
}

pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn op(&self, v: Var) -> OpKind<T> {
        self.nodes[v.0].op
    }

    fn push(&mut self, op: OpKind<T>, inputs: &[Var], value: Tensor<T>) -> Result<Var> {
        check_finite(op.name(), &value)?;
        let mut idx = [0usize; 2];
        for (slot, v) in idx.iter_mut().zip(inputs) {
            *slot = v.0;
        }
        self.nodes.push(Node { op, inputs: idx, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input tensor. Rejects non-finite data.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(OpKind::Leaf, &[], t)
    }

    pub fn constant(&mut self, v: T) -> Result<Var> {
        self.leaf(Tensor::scalar(v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let data = matmul_into(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(
            OpKind::MatMul,
            &[a, b],
            Tensor {
                shape: vec![n, m],
                data,
            },
        )
    }

    fn binary(&mut self, op: OpKind<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            ta.zip_map(tb, f)
        } else if matches!(op, OpKind::Add | OpKind::Sub) && broadcast_row(ta.shape(), tb.shape()) {
            let cols = tb.len();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, tb.data()[i % cols]))
                .collect();
            Tensor {
                shape: ta.shape().to_vec(),
                data,
            }
        } else {
            return Err(Error::Shape {
                op: op.name(),
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        };
        self.push(op, &[a, b], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Mul, a, b, |x, y| x * y)
    }

    fn unary(&mut self, op: OpKind<T>, a: Var, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(op, &[a], value)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Tanh, a, T::tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Softplus, a, Scalar::softplus)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Square, a, |x| x * x)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Log, a, T::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(OpKind::Exp, a, T::exp)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(OpKind::Scale(c), a, |x| x * c)
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(OpKind::Sum, &[a], Tensor::scalar(s))
    }

    /// Reverse sweep from a scalar node. Does not modify the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract(format!("unknown node {}", loss.0)));
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else { continue };
            let grads = lower;
            let node = &self.nodes[id];
            let [ia, ib] = node.inputs;
            match node.op {
                OpKind::Leaf => {}
                OpKind::MatMul => {
                    let a = &self.nodes[ia].value;
                    let b = &self.nodes[ib].value;
                    let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
                    // dA = G B^T, accumulated row by row against B^T
                    let mut bt = vec![T::zero(); m * k];
                    for p in 0..k {
                        for j in 0..m {
                            bt[j * k + p] = b.data[p * m + j];
                        }
                    }
                    let da = matmul_into(&g.data, &bt, n, m, k);
                    // dB = A^T G
                    let mut db = vec![T::zero(); k * m];
                    for i in 0..n {
                        let grow = &g.data[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = a.data[i * k + p];
                            if aip == T::zero() {
                                continue;
                            }
                            let drow = &mut db[p * m..(p + 1) * m];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d = *d + aip * gv;
                            }
                        }
                    }
                    accumulate(
                        grads,
                        ia,
                        Tensor {
                            shape: a.shape.clone(),
                            data: da,
                        },
                    );
                    accumulate(
                        grads,
                        ib,
                        Tensor {
                            shape: b.shape.clone(),
                            data: db,
                        },
                    );
                }
                OpKind::Add | OpKind::Sub => {
                    let sign = if matches!(node.op, OpKind::Sub) {
                        -T::one()
                    } else {
                        T::one()
                    };
                    let sb = &self.nodes[ib].value.shape;
                    let gb = if *sb == g.shape {
                        g.map(|x| x * sign)
                    } else {
                        let cols = sb[0];
                        let mut d = vec![T::zero(); cols];
                        for row in g.data.chunks(cols) {
                            for (acc, &x) in d.iter_mut().zip(row) {
                                *acc = *acc + x;
                            }
                        }
                        Tensor {
                            shape: sb.clone(),
                            data: d.into_iter().map(|x| x * sign).collect(),
                        }
                    };
                    accumulate(grads, ib, gb);
                    accumulate(grads, ia, g.clone());
                }
                OpKind::Mul => {
                    let ga = g.zip_map(&self.nodes[ib].value, |x, y| x * y);
                    let gb = g.zip_map(&self.nodes[ia].value, |x, y| x * y);
                    accumulate(grads, ia, ga);
                    accumulate(grads, ib, gb);
                }
                OpKind::Tanh => {
                    let one = T::one();
                    let ga = g.zip_map(&node.value, |x, y| x * (one - y * y));
                    accumulate(grads, ia, ga);
                }
                OpKind::Softplus => {
                    let ga = g.zip_map(&self.nodes[ia].value, |x, v| x * v.sigmoid());
                    accumulate(grads, ia, ga);
                }
                OpKind::Square => {
                    let two = T::lit(2.0);
                    let ga = g.zip_map(&self.nodes[ia].value, |x, v| x * two * v);
                    accumulate(grads, ia, ga);
                }
                OpKind::Log => {
                    let ga = g.zip_map(&self.nodes[ia].value, |x, v| x / v);
                    accumulate(grads, ia, ga);
                }
                OpKind::Exp => {
                    let ga = g.zip_map(&node.value, |x, y| x * y);
                    accumulate(grads, ia, ga);
                }
                OpKind::Scale(c) => {
                    accumulate(grads, ia, g.map(|x| x * c));
                }
                OpKind::Sum => {
                    let s = g.data[0];
                    let shape = self.nodes[ia].value.shape.clone();
                    accumulate(grads, ia, Tensor::filled(&shape, s));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}
