//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation eagerly together with its forward
//! value. [`Tape::backward`] walks the records in reverse order exactly once,
//! accumulating adjoints additively. Nodes that depend only on constants are
//! never visited.
//!
//! ```
//! use graphcond::{DenseMatrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(DenseMatrix::from_rows(&[[3.0]]));
//! let xt = tape.transpose(x);
//! let y = tape.matmul(x, xt).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x)[(0, 0)], 6.0);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

enum Op<T> {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    RowSoftmax(usize),
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    RowL2Sum(usize),
    CosineColumns(usize, usize),
    SpmmLeft(Arc<CsrMatrix<T>>, usize),
    Hadamard(usize, usize),
    ScaleRows(usize, usize),
    ScaleCols(usize, usize),
    AddRowBroadcast(usize, usize),
    RowSum(usize),
    Sum(usize),
    Rsqrt(usize),
    Reciprocal(usize),
    Reshape(usize),
    SliceRows(usize, usize),
}

struct Node<T> {
    value: DenseMatrix<T>,
    op: Op<T>,
    tracked: bool,
}

/// Append-only record of dense matrix operations.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix<T>, op: Op<T>, tracked: bool) -> Var {
        let (rows, cols) = value.shape();
        self.nodes.push(Node { value, op, tracked });
        Var { tape: self.id, id: self.nodes.len() - 1, rows, cols }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "Var used with a tape it does not belong to");
        v.id
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].tracked)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: DenseMatrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: DenseMatrix<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix<T> {
        &self.nodes[self.check(v)].value
    }

    /// The value of a 1×1 variable.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[(0, 0)]
    }

    fn unary(&mut self, a: Var, f: impl FnOnce(&DenseMatrix<T>) -> DenseMatrix<T>, op: impl FnOnce(usize) -> Op<T>) -> Var {
        let ia = self.check(a);
        let value = f(&self.nodes[ia].value);
        let tracked = self.tracked(&[ia]);
        self.push(value, op(ia), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", a.shape(), b.shape())?;
        let (ia, ib) = (self.check(a), self.check(b));
        let value = self.nodes[ia].value.add(&self.nodes[ib].value)?;
        let tracked = self.tracked(&[ia, ib]);
        Ok(self.push(value, Op::Add(ia, ib), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", a.shape(), b.shape())?;
        let (ia, ib) = (self.check(a), self.check(b));
        let value = self.nodes[ia].value.sub(&self.nodes[ib].value)?;
        let tracked = self.tracked(&[ia, ib]);
        Ok(self.push(value, Op::Sub(ia, ib), tracked))
    }

    pub fn scalar_mul(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |v| v.scale(s), |ia| Op::Scale(ia, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |v| v.map(|x| x + s), Op::AddScalar)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let tracked = self.tracked(&[ia, ib]);
        Ok(self.push(value, Op::MatMul(ia, ib), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.unary(a, DenseMatrix::transpose, Op::Transpose)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.map(|x| if x > T::zero() { x } else { T::zero() }), Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.map(Scalar::sigmoid), Op::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.map(Scalar::softplus), Op::Softplus)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        self.unary(a, DenseMatrix::row_softmax, Op::RowSoftmax)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        let value = self.nodes[ia].value.hstack(&self.nodes[ib].value)?;
        let tracked = self.tracked(&[ia, ib]);
        Ok(self.push(value, Op::ConcatCols(ia, ib), tracked))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        let value = self.nodes[ia].value.vstack(&self.nodes[ib].value)?;
        let tracked = self.tracked(&[ia, ib]);
        Ok(self.push(value, Op::ConcatRows(ia, ib), tracked))
    }

    /// `Σ_i ‖a_i‖₂` over rows (the L2,1 norm), as a 1×1 value.
    pub fn row_l2_sum(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |v| {
                let total = (0..v.rows())
                    .map(|i| v.row(i).iter().map(|&x| x * x).fold(T::zero(), |s, x| s + x).sqrt())
                    .fold(T::zero(), |s, x| s + x);
                DenseMatrix::filled(1, 1, total)
            },
            Op::RowL2Sum,
        )
    }

    /// Column-wise cosine similarity, `1 × cols`. A column pair with a zero
    /// norm on either side yields 0 and passes no gradient.
    pub fn cosine_columns(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("cosine_columns", a.shape(), b.shape())?;
        let (ia, ib) = (self.check(a), self.check(b));
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let value = DenseMatrix::from_fn(1, va.cols(), |_, j| column_cosine(va, vb, j).0);
        let tracked = self.tracked(&[ia, ib]);
        Ok(self.push(value, Op::CosineColumns(ia, ib), tracked))
    }

    /// `s · a` for a constant sparse `s`.
    pub fn const_spmm_left(&mut self, s: Arc<CsrMatrix<T>>, a: Var) -> Result<Var> {
        let ia = self.check(a);
        let value = s.spmm(&self.nodes[ia].value)?;
        let tracked = self.tracked(&[ia]);
        Ok(self.push(value, Op::SpmmLeft(s, ia), tracked))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", a.shape(), b.shape())?;
        let (ia, ib) = (self.check(a), self.check(b));
        let value = self.nodes[ia].value.hadamard(&self.nodes[ib].value)?;
        let tracked = self.tracked(&[ia, ib]);
        Ok(self.push(value, Op::Hadamard(ia, ib), tracked))
    }

    /// `out_ij = a_ij · v_i` for a column vector `v`.
    pub fn scale_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        if v.shape() != (a.rows, 1) {
            return Err(Error::shape("scale_rows", format!("vector {:?} for {:?}", v.shape(), a.shape())));
        }
        let (ia, iv) = (self.check(a), self.check(v));
        let (va, vv) = (&self.nodes[ia].value, &self.nodes[iv].value);
        let value = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| va[(i, j)] * vv[(i, 0)]);
        let tracked = self.tracked(&[ia, iv]);
        Ok(self.push(value, Op::ScaleRows(ia, iv), tracked))
    }

    /// `out_ij = a_ij · v_j` for a row vector `v`.
    pub fn scale_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        if v.shape() != (1, a.cols) {
            return Err(Error::shape("scale_cols", format!("vector {:?} for {:?}", v.shape(), a.shape())));
        }
        let (ia, iv) = (self.check(a), self.check(v));
        let (va, vv) = (&self.nodes[ia].value, &self.nodes[iv].value);
        let value = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| va[(i, j)] * vv[(0, j)]);
        let tracked = self.tracked(&[ia, iv]);
        Ok(self.push(value, Op::ScaleCols(ia, iv), tracked))
    }

    /// `a + 1·b` for a row vector `b` (bias broadcast).
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        if b.shape() != (1, a.cols) {
            return Err(Error::shape("add_row_broadcast", format!("bias {:?} for {:?}", b.shape(), a.shape())));
        }
        let (ia, ib) = (self.check(a), self.check(b));
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let value = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| va[(i, j)] + vb[(0, j)]);
        let tracked = self.tracked(&[ia, ib]);
        Ok(self.push(value, Op::AddRowBroadcast(ia, ib), tracked))
    }

    /// Row sums as a column vector.
    pub fn row_sum(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |v| DenseMatrix::from_fn(v.rows(), 1, |i, _| v.row(i).iter().fold(T::zero(), |s, &x| s + x)),
            Op::RowSum,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.unary(a, |v| DenseMatrix::filled(1, 1, v.as_slice().iter().fold(T::zero(), |s, &x| s + x)), Op::Sum)
    }

    /// Elementwise `1/√x`.
    pub fn rsqrt(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.map(|x| T::one() / x.sqrt()), Op::Rsqrt)
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.map(|x| T::one() / x), Op::Reciprocal)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        if rows * cols != a.rows * a.cols {
            return Err(Error::shape("reshape", format!("{:?} into {rows}x{cols}", a.shape())));
        }
        let ia = self.check(a);
        let value = self.nodes[ia].value.reshape(rows, cols)?;
        let tracked = self.tracked(&[ia]);
        Ok(self.push(value, Op::Reshape(ia), tracked))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        if start > end || end > a.rows {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {} rows", a.rows)));
        }
        let ia = self.check(a);
        let value = self.nodes[ia].value.slice_rows(start, end);
        let tracked = self.tracked(&[ia]);
        Ok(self.push(value, Op::SliceRows(ia, start), tracked))
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.check(loss);
        if loss.shape() != (1, 1) {
            return Err(Error::NonScalarLoss { rows: loss.rows, cols: loss.cols });
        }
        let mut grads: Vec<Option<DenseMatrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(DenseMatrix::filled(1, 1, T::one()));
        for id in (0..=root).rev() {
            if !self.nodes[id].tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate_adjoint(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { tape: self.id, grads, shapes })
    }

    fn propagate_adjoint(&self, id: usize, g: &DenseMatrix<T>, grads: &mut [Option<DenseMatrix<T>>]) -> Result<()> {
        let val = |i: usize| &self.nodes[i].value;
        let out = &self.nodes[id].value;
        let acc = |grads: &mut [Option<DenseMatrix<T>>], i: usize, d: DenseMatrix<T>| -> Result<()> {
            if !self.nodes[i].tracked {
                return Ok(());
            }
            match &mut grads[i] {
                Some(existing) => existing.axpy(T::one(), &d),
                slot @ None => {
                    *slot = Some(d);
                    Ok(())
                }
            }
        };
        match self.nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(grads, a, g.clone())?;
                acc(grads, b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(grads, a, g.clone())?;
                acc(grads, b, g.scale(-T::one()))?;
            }
            Op::Scale(a, s) => acc(grads, a, g.scale(s))?,
            Op::AddScalar(a) => acc(grads, a, g.clone())?,
            Op::MatMul(a, b) => {
                if self.nodes[a].tracked {
                    acc(grads, a, g.matmul(&val(b).transpose())?)?;
                }
                if self.nodes[b].tracked {
                    acc(grads, b, val(a).transpose().matmul(g)?)?;
                }
            }
            Op::Transpose(a) => acc(grads, a, g.transpose())?,
            Op::Relu(a) => {
                let x = val(a);
                let d = DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
                    if x[(i, j)] > T::zero() {
                        g[(i, j)]
                    } else {
                        T::zero()
                    }
                });
                acc(grads, a, d)?;
            }
            Op::Sigmoid(a) => {
                let d = DenseMatrix::from_fn(out.rows(), out.cols(), |i, j| {
                    let y = out[(i, j)];
                    g[(i, j)] * y * (T::one() - y)
                });
                acc(grads, a, d)?;
            }
            Op::Softplus(a) => {
                let x = val(a);
                let d = DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| g[(i, j)] * x[(i, j)].sigmoid());
                acc(grads, a, d)?;
            }
            Op::RowSoftmax(a) => {
                let mut d = DenseMatrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let s = out.row(i);
                    let gr = g.row(i);
                    let dot = s.iter().zip(gr).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = s[j] * (gr[j] - dot);
                    }
                }
                acc(grads, a, d)?;
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let da = DenseMatrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]);
                let db = DenseMatrix::from_fn(g.rows(), g.cols() - ca, |i, j| g[(i, ca + j)]);
                acc(grads, a, da)?;
                acc(grads, b, db)?;
            }
            Op::ConcatRows(a, b) => {
                let ra = val(a).rows();
                acc(grads, a, g.slice_rows(0, ra))?;
                acc(grads, b, g.slice_rows(ra, g.rows()))?;
            }
            Op::RowL2Sum(a) => {
                let x = val(a);
                let s = g[(0, 0)];
                let mut d = DenseMatrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let norm = x.row(i).iter().map(|&v| v * v).fold(T::zero(), |acc, v| acc + v).sqrt();
                    if norm > T::zero() {
                        for (o, &v) in d.row_mut(i).iter_mut().zip(x.row(i)) {
                            *o = s * v / norm;
                        }
                    }
                }
                acc(grads, a, d)?;
            }
            Op::CosineColumns(a, b) => {
                let (xa, xb) = (val(a), val(b));
                let mut da = DenseMatrix::zeros(xa.rows(), xa.cols());
                let mut db = DenseMatrix::zeros(xb.rows(), xb.cols());
                for j in 0..xa.cols() {
                    let (c, na, nb) = column_cosine(xa, xb, j);
                    if na == T::zero() || nb == T::zero() {
                        continue;
                    }
                    let gj = g[(0, j)];
                    for i in 0..xa.rows() {
                        da[(i, j)] = gj * (xb[(i, j)] / (na * nb) - c * xa[(i, j)] / (na * na));
                        db[(i, j)] = gj * (xa[(i, j)] / (na * nb) - c * xb[(i, j)] / (nb * nb));
                    }
                }
                acc(grads, a, da)?;
                acc(grads, b, db)?;
            }
            Op::SpmmLeft(ref s, a) => acc(grads, a, s.spmm_transpose(g)?)?,
            Op::Hadamard(a, b) => {
                if self.nodes[a].tracked {
                    acc(grads, a, g.hadamard(val(b))?)?;
                }
                if self.nodes[b].tracked {
                    acc(grads, b, g.hadamard(val(a))?)?;
                }
            }
            Op::ScaleRows(a, v) => {
                let (x, vv) = (val(a), val(v));
                acc(grads, a, DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| g[(i, j)] * vv[(i, 0)]))?;
                if self.nodes[v].tracked {
                    let dv = DenseMatrix::from_fn(x.rows(), 1, |i, _| {
                        (0..x.cols()).fold(T::zero(), |s, j| s + g[(i, j)] * x[(i, j)])
                    });
                    acc(grads, v, dv)?;
                }
            }
            Op::ScaleCols(a, v) => {
                let (x, vv) = (val(a), val(v));
                acc(grads, a, DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| g[(i, j)] * vv[(0, j)]))?;
                if self.nodes[v].tracked {
                    let dv = DenseMatrix::from_fn(1, x.cols(), |_, j| {
                        (0..x.rows()).fold(T::zero(), |s, i| s + g[(i, j)] * x[(i, j)])
                    });
                    acc(grads, v, dv)?;
                }
            }
            Op::AddRowBroadcast(a, b) => {
                acc(grads, a, g.clone())?;
                if self.nodes[b].tracked {
                    let db = DenseMatrix::from_fn(1, g.cols(), |_, j| {
                        (0..g.rows()).fold(T::zero(), |s, i| s + g[(i, j)])
                    });
                    acc(grads, b, db)?;
                }
            }
            Op::RowSum(a) => {
                let x = val(a);
                acc(grads, a, DenseMatrix::from_fn(x.rows(), x.cols(), |i, _| g[(i, 0)]))?;
            }
            Op::Sum(a) => {
                let x = val(a);
                acc(grads, a, DenseMatrix::filled(x.rows(), x.cols(), g[(0, 0)]))?;
            }
            Op::Rsqrt(a) => {
                let half = T::of(0.5);
                let d = DenseMatrix::from_fn(out.rows(), out.cols(), |i, j| {
                    let y = out[(i, j)];
                    -half * y * y * y * g[(i, j)]
                });
                acc(grads, a, d)?;
            }
            Op::Reciprocal(a) => {
                let d = DenseMatrix::from_fn(out.rows(), out.cols(), |i, j| {
                    let y = out[(i, j)];
                    -y * y * g[(i, j)]
                });
                acc(grads, a, d)?;
            }
            Op::Reshape(a) => {
                let (r, c) = val(a).shape();
                acc(grads, a, g.reshape(r, c)?)?;
            }
            Op::SliceRows(a, start) => {
                let x = val(a);
                let mut d = DenseMatrix::zeros(x.rows(), x.cols());
                for i in 0..g.rows() {
                    d.row_mut(start + i).copy_from_slice(g.row(i));
                }
                acc(grads, a, d)?;
            }
        }
        Ok(())
    }
}

/// Cosine of column `j` of `a` and `b`, with both column norms.
fn column_cosine<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>, j: usize) -> (T, T, T) {
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for i in 0..a.rows() {
        let (x, y) = (a[(i, j)], b[(i, j)]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na == T::zero() || nb == T::zero() {
        (T::zero(), na, nb)
    } else {
        (dot / (na * nb), na, nb)
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<DenseMatrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zero when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> DenseMatrix<T> {
        assert_eq!(v.tape, self.tape, "Var from a different tape");
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheck<T> {
    /// `max |analytic − fd| / (|fd| + 1e-12)` over differentiable entries.
    pub max_rel_error: T,
    /// Entries where one-sided differences disagree (a kink); not scored.
    pub excluded: Vec<(usize, usize)>,
    pub analytic: DenseMatrix<T>,
    pub numeric: DenseMatrix<T>,
}

/// Compares the tape gradient of a scalar `f` at `x` with central
/// differences of step `eps`.
///
/// An entry is treated as a kink, and excluded, when its forward and
/// backward one-sided differences disagree by more than half their
/// magnitude (plus a small absolute floor).
pub fn grad_check<T, F>(f: F, x: &DenseMatrix<T>, eps: T) -> Result<GradCheck<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("grad_check step must be positive".into()));
    }
    let eval = |p: &DenseMatrix<T>| -> Result<T> {
        let mut tape = Tape::new();
        let v = tape.leaf(p.clone());
        let out = f(&mut tape, v)?;
        if out.shape() != (1, 1) {
            return Err(Error::NonScalarLoss { rows: out.rows, cols: out.cols });
        }
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    let f0 = tape.scalar(out);
    let analytic = tape.backward(out)?.get(v);

    let two = T::of(2.0);
    let tiny = T::of(1e-12);
    let mut numeric = DenseMatrix::zeros(x.rows(), x.cols());
    let mut excluded = Vec::new();
    let mut max_rel = T::zero();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut p = x.clone();
            p[(i, j)] = x[(i, j)] + eps;
            let fp = eval(&p)?;
            p[(i, j)] = x[(i, j)] - eps;
            let fm = eval(&p)?;
            let central = (fp - fm) / (two * eps);
            numeric[(i, j)] = central;
            let fwd = (fp - f0) / eps;
            let bwd = (f0 - fm) / eps;
            if (fwd - bwd).abs() > T::of(0.5) * (fwd.abs() + bwd.abs()) + T::of(1e-4) {
                excluded.push((i, j));
                continue;
            }
            let rel = (analytic[(i, j)] - central).abs() / (central.abs() + tiny);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(GradCheck { max_rel_error: max_rel, excluded, analytic, numeric })
}
