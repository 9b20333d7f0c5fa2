//! Reverse-mode differentiation over small dense matrices.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes a node holding
//! its cached forward value, so parents always precede children and a single
//! reverse sweep applies the chain rule. Nodes built only from constants do
//! not request gradients and are skipped during the sweep.

use super::tensor::{matmul_into, Real, Tensor};
use crate::error::DiffError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Offset(usize),
    Tanh(usize),
    Square(usize),
    AbsPow(usize, T),
    SignedPow(usize, T),
    Softplus(usize),
    SumAll(usize),
    SumCols(usize),
    Col(usize, usize),
    ConcatCols(Vec<usize>),
    BroadcastRows(usize),
    BroadcastCols(usize),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Trainable leaf. Its gradient is reported by [`Gradients::wrt`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Copies the value into a new constant node, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.cols(), vb.rows(), "matmul shape mismatch {:?} x {:?}", va.shape(), vb.shape());
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        matmul_into(va.data(), vb.data(), out.data_mut(), va.rows(), va.cols(), vb.cols());
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Op::MatMul(a.0, b.0), out, rg)
    }

    /// Adds a `1 x c` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let out = self.nodes[x.0].value.add_row(&self.nodes[row.0].value);
        let rg = self.rg(x.0) || self.rg(row.0);
        self.push(Op::AddRow(x.0, row.0), out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x + y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Op::Add(a.0, b.0), out, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x - y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Op::Sub(a.0, b.0), out, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x * y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Op::Mul(a.0, b.0), out, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.nodes[a.0].value.map(|x| x * c);
        let rg = self.rg(a.0);
        self.push(Op::Scale(a.0, c), out, rg)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: T) -> Var {
        let out = self.nodes[a.0].value.map(|x| x + c);
        let rg = self.rg(a.0);
        self.push(Op::Offset(a.0), out, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|x| x.tanh());
        let rg = self.rg(a.0);
        self.push(Op::Tanh(a.0), out, rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|x| x * x);
        let rg = self.rg(a.0);
        self.push(Op::Square(a.0), out, rg)
    }

    /// `|x|^p`; derivative taken as 0 at `x = 0`.
    pub fn abs_pow(&mut self, a: Var, p: T) -> Var {
        let out = self.nodes[a.0].value.map(|x| abs_pow(x, p));
        let rg = self.rg(a.0);
        self.push(Op::AbsPow(a.0, p), out, rg)
    }

    /// `sign(x)|x|^p`; derivative taken as 0 at `x = 0`.
    pub fn signed_pow(&mut self, a: Var, p: T) -> Var {
        let out = self.nodes[a.0].value.map(|x| signed_pow(x, p));
        let rg = self.rg(a.0);
        self.push(Op::SignedPow(a.0, p), out, rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(softplus);
        let rg = self.rg(a.0);
        self.push(Op::Softplus(a.0), out, rg)
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.nodes[a.0].value.sum());
        let rg = self.rg(a.0);
        self.push(Op::SumAll(a.0), out, rg)
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.sum_cols();
        let rg = self.rg(a.0);
        self.push(Op::SumCols(a.0), out, rg)
    }

    pub fn col(&mut self, a: Var, j: usize) -> Var {
        let v = &self.nodes[a.0].value;
        assert!(j < v.cols(), "column {j} out of range for width {}", v.cols());
        let out = Tensor::column(v.col_vec(j));
        let rg = self.rg(a.0);
        self.push(Op::Col(a.0, j), out, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                for c in 0..w {
                    out.set(r, off + c, v.get(r, c));
                }
            }
            off += w;
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), out, rg)
    }

    /// `1 x c -> rows x c`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.rows(), 1, "broadcast_rows expects a single row");
        let mut data = Vec::with_capacity(rows * v.cols());
        for _ in 0..rows {
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, v.cols(), data);
        let rg = self.rg(a.0);
        self.push(Op::BroadcastRows(a.0), out, rg)
    }

    /// `r x 1 -> r x cols`.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.cols(), 1, "broadcast_cols expects a single column");
        let mut data = Vec::with_capacity(v.rows() * cols);
        for &x in v.data() {
            data.extend(std::iter::repeat(x).take(cols));
        }
        let out = Tensor::from_vec(v.rows(), cols, data);
        let rg = self.rg(a.0);
        self.push(Op::BroadcastCols(a.0), out, rg)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, DiffError> {
        let shape = self.nodes[root.0].value.shape();
        if shape != (1, 1) {
            return Err(DiffError::NonScalarRoot { rows: shape.0, cols: shape.1 });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    if self.rg(a) {
                        let ga = g.matmul_t(&self.nodes[b].value);
                        accumulate(&mut grads, a, ga);
                    }
                    if self.rg(b) {
                        let gb = self.nodes[a].value.t_matmul(&g);
                        accumulate(&mut grads, b, gb);
                    }
                }
                &Op::AddRow(x, row) => {
                    if self.rg(row) {
                        accumulate(&mut grads, row, g.sum_rows());
                    }
                    if self.rg(x) {
                        accumulate(&mut grads, x, g.clone());
                    }
                }
                &Op::Add(a, b) => {
                    if self.rg(b) {
                        accumulate(&mut grads, b, g.clone());
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                }
                &Op::Sub(a, b) => {
                    if self.rg(b) {
                        accumulate(&mut grads, b, g.map(|x| -x));
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                }
                &Op::Mul(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.zip_map(&self.nodes[b].value, |gv, bv| gv * bv));
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, g.zip_map(&self.nodes[a].value, |gv, av| gv * av));
                    }
                }
                &Op::Scale(a, c) => accumulate(&mut grads, a, g.map(|x| x * c)),
                &Op::Offset(a) => accumulate(&mut grads, a, g.clone()),
                &Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * (T::one() - y * y));
                    accumulate(&mut grads, a, ga);
                }
                &Op::Square(a) => {
                    let two = T::of(2.0);
                    let ga = g.zip_map(&self.nodes[a].value, |gv, x| gv * two * x);
                    accumulate(&mut grads, a, ga);
                }
                &Op::AbsPow(a, p) => {
                    let ga = g.zip_map(&self.nodes[a].value, |gv, x| {
                        if x == T::zero() {
                            T::zero()
                        } else {
                            gv * p * x.abs().powf(p - T::one()) * x.signum()
                        }
                    });
                    accumulate(&mut grads, a, ga);
                }
                &Op::SignedPow(a, p) => {
                    let ga = g.zip_map(&self.nodes[a].value, |gv, x| {
                        if x == T::zero() {
                            T::zero()
                        } else {
                            gv * p * x.abs().powf(p - T::one())
                        }
                    });
                    accumulate(&mut grads, a, ga);
                }
                &Op::Softplus(a) => {
                    let ga = g.zip_map(&self.nodes[a].value, |gv, x| gv * logistic(x));
                    accumulate(&mut grads, a, ga);
                }
                &Op::SumAll(a) => {
                    let (r, c) = self.nodes[a].value.shape();
                    accumulate(&mut grads, a, Tensor::filled(r, c, g.item()));
                }
                &Op::SumCols(a) => {
                    let (r, c) = self.nodes[a].value.shape();
                    let mut ga = Tensor::zeros(r, c);
                    for row in 0..r {
                        let gv = g.get(row, 0);
                        for col in 0..c {
                            ga.set(row, col, gv);
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                &Op::Col(a, j) => {
                    let (r, c) = self.nodes[a].value.shape();
                    let mut ga = Tensor::zeros(r, c);
                    for row in 0..r {
                        ga.set(row, j, g.get(row, 0));
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut off = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        if self.rg(p) {
                            let mut gp = Tensor::zeros(rows, w);
                            for r in 0..rows {
                                for c in 0..w {
                                    gp.set(r, c, g.get(r, off + c));
                                }
                            }
                            accumulate(&mut grads, p, gp);
                        }
                        off += w;
                    }
                }
                &Op::BroadcastRows(a) => accumulate(&mut grads, a, g.sum_rows()),
                &Op::BroadcastCols(a) => accumulate(&mut grads, a, g.sum_cols()),
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], idx: usize, g: Tensor<T>) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`, or `None` when `v` is not reachable from the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zero-filled when unreachable.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = graph.shape(v);
                Tensor::zeros(r, c)
            }
        }
    }
}

#[inline]
pub fn abs_pow<T: Real>(x: T, p: T) -> T {
    if x == T::zero() {
        T::zero()
    } else {
        x.abs().powf(p)
    }
}

#[inline]
pub fn signed_pow<T: Real>(x: T, p: T) -> T {
    if x == T::zero() {
        T::zero()
    } else {
        x.signum() * x.abs().powf(p)
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
