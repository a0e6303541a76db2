//! Eager reverse-mode differentiation over the [`Matrix`] primitive catalog.
//!
//! Every operation is recorded as a node holding its forward value. Nodes are
//! appended in evaluation order, so parents always precede children and a
//! single reverse sweep computes all adjoints of one scalar output.

use std::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{Axis, Matrix};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Recip(usize),
    SoftmaxRows(usize),
    CumProd(usize, Axis),
    CumSum(usize, Axis),
    Triu(usize, isize),
    Roll(usize, isize),
    Flip(usize),
    Transpose(usize),
    Sum(usize),
    SelectRow(usize, usize),
    VStack(Vec<usize>),
    /// Row maxima treated as constants: no adjoint flows through.
    RowMaxDetached(usize),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a, _) | Sigmoid(a) | Exp(a) | Ln(a) | Tanh(a) | Recip(a)
            | SoftmaxRows(a) | CumProd(a, _) | CumSum(a, _) | Triu(a, _) | Roll(a, _)
            | Flip(a) | Transpose(a) | Sum(a) | SelectRow(a, _) | RowMaxDetached(a) => vec![*a],
            VStack(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Single-threaded recording of primitive applications.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Adjoints of one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `var`; nodes the output does not depend on get zeros.
    pub fn wrt(&self, var: Var) -> Result<Matrix> {
        if var.tape != self.tape || var.index >= self.adjoints.len() {
            return Err(Error::UnknownNode(var.index));
        }
        Ok(match &self.adjoints[var.index] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.index];
                Matrix::zeros(r, c)
            }
        })
    }
}

/// Adjoint of an inclusive cumulative product along one line.
///
/// With `y_k = x_0 * .. * x_k`, the adjoint of `x_j` is
/// `prefix_{<j} * S_j` where `S_j = g_j + x_{j+1} * S_{j+1}`. No division,
/// so zero entries are fine.
fn cumprod_line_adjoint(x: &[f64], g: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut suffix = vec![0.0; n];
    let mut acc = 0.0;
    for j in (0..n).rev() {
        acc = if j + 1 < n { g[j] + x[j + 1] * acc } else { g[j] };
        suffix[j] = acc;
    }
    let mut prefix = 1.0;
    let mut out = vec![0.0; n];
    for j in 0..n {
        out[j] = prefix * suffix[j];
        prefix *= x[j];
    }
    out
}

fn reverse_cumsum_line(g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    let mut acc = 0.0;
    for j in (0..g.len()).rev() {
        acc += g[j];
        out[j] = acc;
    }
    out
}

/// Applies a line-wise adjoint along `axis`.
fn along_axis(
    x: &Matrix,
    g: &Matrix,
    axis: Axis,
    f: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> Matrix {
    match axis {
        Axis::AlongRows => {
            let mut data = Vec::with_capacity(x.len());
            for r in 0..x.rows() {
                data.extend(f(x.row(r), g.row(r)));
            }
            Matrix::new(x.rows(), x.cols(), data).expect("shape preserved")
        }
        Axis::AlongColumns => along_axis(&x.transpose(), &g.transpose(), Axis::AlongRows, f).transpose(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, var: Var) -> usize {
        assert!(
            var.tape == self.id && var.index < self.nodes.len(),
            "variable {} does not belong to this tape",
            var.index
        );
        var.index
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = forward(&op, &NodeValues(&self.nodes))?;
        self.nodes.push(Node { op, value });
        Ok(Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        })
    }

    /// Records a leaf (parameter or constant input).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[self.idx(var)].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.idx(a), self.idx(b));
        self.push(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.idx(a), self.idx(b));
        self.push(op)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Mul(self.idx(a), self.idx(b));
        self.push(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::MatMul(self.idx(a), self.idx(b));
        self.push(op)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let op = Op::Scale(self.idx(a), factor);
        self.push(op).expect("scale cannot fail")
    }

    pub fn add_scalar(&mut self, a: Var, value: f64) -> Var {
        let op = Op::AddScalar(self.idx(a), value);
        self.push(op).expect("add_scalar cannot fail")
    }

    /// `1 - a`, as `(-a) + 1` (bit-identical to `1 - a`).
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let op = Op::Sigmoid(self.idx(a));
        self.push(op).expect("sigmoid cannot fail")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let op = Op::Exp(self.idx(a));
        self.push(op).expect("exp cannot fail")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let op = Op::Tanh(self.idx(a));
        self.push(op).expect("tanh cannot fail")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let op = Op::Ln(self.idx(a));
        self.push(op)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let op = Op::Recip(self.idx(a));
        self.push(op)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let op = Op::SoftmaxRows(self.idx(a));
        self.push(op).expect("softmax cannot fail")
    }

    pub fn cumprod(&mut self, a: Var, axis: Axis) -> Var {
        let op = Op::CumProd(self.idx(a), axis);
        self.push(op).expect("cumprod cannot fail")
    }

    pub fn cumsum(&mut self, a: Var, axis: Axis) -> Var {
        let op = Op::CumSum(self.idx(a), axis);
        self.push(op).expect("cumsum cannot fail")
    }

    pub fn triu(&mut self, a: Var, offset: isize) -> Var {
        let op = Op::Triu(self.idx(a), offset);
        self.push(op).expect("triu cannot fail")
    }

    pub fn roll(&mut self, a: Var, shift: isize) -> Var {
        let op = Op::Roll(self.idx(a), shift);
        self.push(op).expect("roll cannot fail")
    }

    pub fn flip(&mut self, a: Var) -> Var {
        let op = Op::Flip(self.idx(a));
        self.push(op).expect("flip cannot fail")
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let op = Op::Transpose(self.idx(a));
        self.push(op).expect("transpose cannot fail")
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let op = Op::Sum(self.idx(a));
        self.push(op).expect("sum cannot fail")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let op = Op::SelectRow(self.idx(a), row);
        self.push(op)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::argument("vstack of zero nodes"));
        }
        let op = Op::VStack(parts.iter().map(|&p| self.idx(p)).collect());
        self.push(op)
    }

    /// Per-row maxima as a `rows x 1` node that blocks gradient flow.
    pub fn row_max_detached(&mut self, a: Var) -> Var {
        let op = Op::RowMaxDetached(self.idx(a));
        self.push(op).expect("row max cannot fail")
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if output.tape != self.id || output.index >= self.nodes.len() {
            return Err(Error::UnknownNode(output.index));
        }
        let out_shape = self.nodes[output.index].value.shape();
        if out_shape != (1, 1) {
            return Err(Error::argument(format!(
                "backward needs a scalar output, got shape {out_shape:?}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[output.index] = Some(Matrix::scalar(1.0));

        for i in (0..=output.index).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        use Op::*;
        let val = |k: usize| &self.nodes[k].value;
        let y = val(i);
        let mut acc = |k: usize, contrib: Matrix| -> Result<()> {
            match &mut adj[k] {
                Some(existing) => *existing = existing.add(&contrib)?,
                slot @ None => *slot = Some(contrib),
            }
            Ok(())
        };
        match &self.nodes[i].op {
            Leaf | RowMaxDetached(_) => {}
            Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Mul(a, b) => {
                let (va, vb) = (val(*a).clone(), val(*b).clone());
                acc(*a, g.hadamard(&vb)?)?;
                acc(*b, g.hadamard(&va)?)?;
            }
            MatMul(a, b) => {
                let (va, vb) = (val(*a).clone(), val(*b).clone());
                acc(*a, g.matmul(&vb.transpose())?)?;
                acc(*b, va.transpose().matmul(g)?)?;
            }
            Scale(a, k) => acc(*a, g.scale(*k))?,
            AddScalar(a, _) => acc(*a, g.clone())?,
            Sigmoid(a) => acc(*a, g.hadamard(&y.map(|s| s * (1.0 - s)))?)?,
            Exp(a) => acc(*a, g.hadamard(y)?)?,
            Ln(a) => {
                let x = val(*a).clone();
                acc(*a, g.hadamard(&x.recip()?)?)?
            }
            Tanh(a) => acc(*a, g.hadamard(&y.map(|t| 1.0 - t * t))?)?,
            Recip(a) => acc(*a, g.hadamard(&y.map(|r| -r * r))?)?,
            SoftmaxRows(a) => {
                let gy = g.hadamard(y)?;
                let dots = gy.row_sums();
                let contrib = Matrix::from_fn(y.rows(), y.cols(), |r, c| {
                    y.get(r, c) * (g.get(r, c) - dots.get(r, 0))
                });
                acc(*a, contrib)?
            }
            CumProd(a, axis) => {
                let x = val(*a).clone();
                acc(*a, along_axis(&x, g, *axis, cumprod_line_adjoint))?
            }
            CumSum(a, axis) => {
                let x = val(*a).clone();
                acc(*a, along_axis(&x, g, *axis, |_, g| reverse_cumsum_line(g)))?
            }
            Triu(a, b) => acc(*a, g.triu(*b))?,
            Roll(a, k) => acc(*a, g.roll(-*k))?,
            Flip(a) => acc(*a, g.flip())?,
            Transpose(a) => acc(*a, g.transpose())?,
            Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::ones(r, c).scale(g.get(0, 0)))?
            }
            SelectRow(a, row) => {
                let (r, c) = val(*a).shape();
                let contrib =
                    Matrix::from_fn(r, c, |rr, cc| if rr == *row { g.get(0, cc) } else { 0.0 });
                acc(*a, contrib)?
            }
            VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    let contrib = Matrix::from_fn(r, c, |rr, cc| g.get(offset + rr, cc));
                    offset += r;
                    acc(p, contrib)?;
                }
            }
        }
        Ok(())
    }

    /// Recomputes every node from the recorded leaves, optionally substituting
    /// some leaf values. Returns all node values in tape order.
    pub fn replay(&self, overrides: &[(Var, Matrix)]) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let value = match node.op {
                Op::Leaf => overrides
                    .iter()
                    .find(|(v, _)| v.tape == self.id && v.index == i)
                    .map(|(_, m)| m.clone())
                    .unwrap_or_else(|| node.value.clone()),
                ref op => forward(op, &values)?,
            };
            values.push(value);
        }
        Ok(values)
    }
}

struct NodeValues<'a>(&'a [Node]);

impl std::ops::Index<usize> for NodeValues<'_> {
    type Output = Matrix;

    fn index(&self, i: usize) -> &Matrix {
        &self.0[i].value
    }
}

fn forward<V: std::ops::Index<usize, Output = Matrix>>(op: &Op, values: &V) -> Result<Matrix> {
    use Op::*;
    let v = |i: usize| &values[i];
    Ok(match op {
        Leaf => unreachable!("leaves carry their own value"),
        Add(a, b) => v(*a).add(v(*b))?,
        Sub(a, b) => v(*a).sub(v(*b))?,
        Mul(a, b) => v(*a).hadamard(v(*b))?,
        MatMul(a, b) => v(*a).matmul(v(*b))?,
        Scale(a, k) => v(*a).scale(*k),
        AddScalar(a, k) => v(*a).add_scalar(*k),
        Sigmoid(a) => v(*a).sigmoid(),
        Exp(a) => v(*a).exp(),
        Ln(a) => v(*a).ln()?,
        Tanh(a) => v(*a).tanh(),
        Recip(a) => v(*a).recip()?,
        SoftmaxRows(a) => v(*a).softmax_rows(),
        CumProd(a, axis) => v(*a).cumprod(*axis),
        CumSum(a, axis) => v(*a).cumsum(*axis),
        Triu(a, b) => v(*a).triu(*b),
        Roll(a, k) => v(*a).roll(*k),
        Flip(a) => v(*a).flip(),
        Transpose(a) => v(*a).transpose(),
        Sum(a) => Matrix::scalar(v(*a).sum()),
        SelectRow(a, r) => v(*a).select_row(*r)?,
        VStack(parts) => Matrix::vstack(&parts.iter().map(|&p| v(p)).collect::<Vec<_>>())?,
        RowMaxDetached(a) => v(*a).row_max(),
    })
}

impl Tape {
    /// True when every node's parents were recorded before it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.op.parents().iter().all(|&p| p < i))
    }
}
