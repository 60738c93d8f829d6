//! Compressed sparse row matrices and the propagation kernels built on them.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// CSR matrix with sorted, duplicate-free column indices in every row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_ptr: vec![0; rows + 1], col_idx: Vec::new(), vals: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![T::one(); n],
        }
    }

    /// Validates raw CSR arrays.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<T>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::shape("CsrMatrix::from_parts", "row_ptr must have rows+1 entries starting at 0"));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("row_ptr is not monotone".into()));
        }
        if row_ptr[rows] != col_idx.len() || col_idx.len() != vals.len() {
            return Err(Error::shape("CsrMatrix::from_parts", "row_ptr[rows] must equal nnz"));
        }
        for i in 0..rows {
            let cols_i = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols_i.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!("row {i} has unsorted or duplicate columns")));
            }
            if let Some(&c) = cols_i.last() {
                if c >= cols {
                    return Err(Error::IndexOutOfRange(format!("column {c} in a matrix with {cols} columns")));
                }
            }
        }
        Ok(Self { rows, cols, row_ptr, col_idx, vals })
    }

    /// Builds from COO triplets; duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, T)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(Error::IndexOutOfRange(format!("({i}, {j}) in a {rows}x{cols} matrix")));
            }
            sorted.push((i, j, v));
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut vals: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *vals.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            vals.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { rows, cols, row_ptr, col_idx, vals })
    }

    /// Keeps entries with `v >= threshold`; exact zeros are never stored.
    pub fn from_dense_threshold(dense: &DenseMatrix<T>, threshold: T) -> Self {
        let (rows, cols) = dense.shape();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for i in 0..rows {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != T::zero() && v >= threshold {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { rows, cols, row_ptr, col_idx, vals }
    }

    pub fn from_dense(dense: &DenseMatrix<T>) -> Self {
        let (rows, cols) = dense.shape();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for i in 0..rows {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != T::zero() {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { rows, cols, row_ptr, col_idx, vals }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.vals
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => T::zero(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.iter() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut vals = vec![T::zero(); self.nnz()];
        for (i, j, v) in self.iter() {
            let slot = next[j];
            col_idx[slot] = i;
            vals[slot] = v;
            next[j] += 1;
        }
        Self { rows: self.cols, cols: self.rows, row_ptr, col_idx, vals }
    }

    /// Exact structural and value symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Sparse-dense product `self * x`.
    pub fn spmm(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if self.cols != x.rows() {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} times {}x{}", self.rows, self.cols, x.rows(), x.cols()),
            ));
        }
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.rows, d);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            let orow = out.row_mut(i);
            for (&k, &a) in c.iter().zip(v) {
                for (o, &b) in orow.iter_mut().zip(x.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * g` without materializing the transpose.
    pub fn spmm_transpose(&self, g: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if self.rows != g.rows() {
            return Err(Error::shape("spmm_transpose", format!("{} vs {} rows", self.rows, g.rows())));
        }
        let mut out = DenseMatrix::zeros(self.cols, g.cols());
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&k, &a) in c.iter().zip(v) {
                for (o, &b) in out.row_mut(k).iter_mut().zip(g.row(i)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Sparse-sparse product, accumulated in row order of `rhs`.
    pub fn spgemm(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::shape(
                "spgemm",
                format!("{}x{} times {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut acc = vec![T::zero(); rhs.cols];
        let mut touched = vec![false; rhs.cols];
        let mut cols_seen: Vec<usize> = Vec::new();
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&k, &a) in c.iter().zip(v) {
                let (rc, rv) = rhs.row(k);
                for (&j, &b) in rc.iter().zip(rv) {
                    if !touched[j] {
                        touched[j] = true;
                        cols_seen.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols_seen.sort_unstable();
            for &j in &cols_seen {
                if acc[j] != T::zero() {
                    col_idx.push(j);
                    vals.push(acc[j]);
                }
                acc[j] = T::zero();
                touched[j] = false;
            }
            cols_seen.clear();
            row_ptr.push(col_idx.len());
        }
        Ok(Self { rows: self.rows, cols: rhs.cols, row_ptr, col_idx, vals })
    }

    /// Rows `ids` and columns `ids` (in the order given) of a square matrix.
    pub fn induced(&self, ids: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.cols];
        for (new, &old) in ids.iter().enumerate() {
            if old >= self.rows || old >= self.cols {
                return Err(Error::IndexOutOfRange(format!("node {old}")));
            }
            pos[old] = new;
        }
        let mut trip = Vec::new();
        for (new_i, &old_i) in ids.iter().enumerate() {
            let (c, v) = self.row(old_i);
            for (&j, &x) in c.iter().zip(v) {
                if pos[j] != usize::MAX {
                    trip.push((new_i, pos[j], x));
                }
            }
        }
        Self::from_triplets(ids.len(), ids.len(), &trip)
    }

    /// Keeps only columns listed in `keep` and renumbers them by position.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.cols];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.cols {
                return Err(Error::IndexOutOfRange(format!("column {old}")));
            }
            pos[old] = new;
        }
        let trip: Vec<_> = self
            .iter()
            .filter(|&(_, j, _)| pos[j] != usize::MAX)
            .map(|(i, j, v)| (i, pos[j], v))
            .collect();
        Self::from_triplets(self.rows, keep.len(), &trip)
    }

    /// Assembles the square block matrix `[[self, crossᵀ], [cross, tilde]]`
    /// where `cross` is `n x N` and `tilde` (optional) is `n x n`.
    pub fn assemble_block(&self, cross: &Self, tilde: Option<&Self>) -> Result<Self> {
        let big_n = self.rows;
        if self.cols != big_n || cross.cols != big_n {
            return Err(Error::shape(
                "assemble_block",
                format!("base {}x{}, cross {}x{}", self.rows, self.cols, cross.rows, cross.cols),
            ));
        }
        let n = cross.rows;
        if let Some(t) = tilde {
            if t.rows != n || t.cols != n {
                return Err(Error::shape("assemble_block", format!("tilde is {}x{}, expected {n}x{n}", t.rows, t.cols)));
            }
        }
        let cross_t = cross.transpose();
        let total = big_n + n;
        let mut row_ptr = Vec::with_capacity(total + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(self.nnz() + 2 * cross.nnz());
        let mut vals = Vec::with_capacity(col_idx.capacity());
        for i in 0..big_n {
            let (c, v) = self.row(i);
            col_idx.extend_from_slice(c);
            vals.extend_from_slice(v);
            let (c, v) = cross_t.row(i);
            col_idx.extend(c.iter().map(|&j| j + big_n));
            vals.extend_from_slice(v);
            row_ptr.push(col_idx.len());
        }
        for i in 0..n {
            let (c, v) = cross.row(i);
            col_idx.extend_from_slice(c);
            vals.extend_from_slice(v);
            if let Some(t) = tilde {
                let (c, v) = t.row(i);
                col_idx.extend(c.iter().map(|&j| j + big_n));
                vals.extend_from_slice(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { rows: total, cols: total, row_ptr, col_idx, vals })
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degree matrix of `A + I`.
    ///
    /// The degree of row `i` is accumulated as `(Σ_j a_ij) + 1` in column
    /// order and each entry is formed as `(a_ij · d_i) · d_j`; the dense
    /// differentiable normalization uses the same order.
    pub fn normalize_with_self_loops(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::shape("normalize_with_self_loops", "matrix is not square"));
        }
        let n = self.rows;
        let dinv: Vec<T> = (0..n)
            .map(|i| {
                let s: T = self.row(i).1.iter().fold(T::zero(), |acc, &v| acc + v);
                T::one() / (s + T::one()).sqrt()
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(self.nnz() + n);
        let mut vals = Vec::with_capacity(self.nnz() + n);
        for i in 0..n {
            let (c, v) = self.row(i);
            let mut diag_done = false;
            for (&j, &a) in c.iter().zip(v) {
                if !diag_done && j >= i {
                    if j == i {
                        col_idx.push(i);
                        vals.push((a + T::one()) * dinv[i] * dinv[i]);
                        diag_done = true;
                        continue;
                    }
                    col_idx.push(i);
                    vals.push(T::one() * dinv[i] * dinv[i]);
                    diag_done = true;
                }
                col_idx.push(j);
                vals.push(a * dinv[i] * dinv[j]);
            }
            if !diag_done {
                col_idx.push(i);
                vals.push(T::one() * dinv[i] * dinv[i]);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { rows: n, cols: n, row_ptr, col_idx, vals })
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            vals: self.vals.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Anything a graph signal can be propagated over: `x ↦ Â x`.
pub trait Propagate<T: Scalar> {
    fn dim(&self) -> usize;
    fn propagate(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>>;
    /// `x ↦ Âᵀ x`, used when backpropagating through a propagation.
    fn propagate_transpose(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>>;
    /// Stored entries touched by one propagation.
    fn stored_entries(&self) -> usize;
}

impl<T: Scalar> Propagate<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.rows
    }

    fn propagate(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.spmm(x)
    }

    fn propagate_transpose(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.spmm_transpose(x)
    }

    fn stored_entries(&self) -> usize {
        self.nnz()
    }
}

impl<T: Scalar> Propagate<T> for DenseMatrix<T> {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn propagate(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.matmul(x)
    }

    fn propagate_transpose(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.transpose().matmul(x)
    }

    fn stored_entries(&self) -> usize {
        self.rows() * self.cols()
    }
}

/// Applies `adj` to `x` `hops` times.
pub fn propagate_hops<T: Scalar, A: Propagate<T> + ?Sized>(
    adj: &A,
    x: &DenseMatrix<T>,
    hops: usize,
) -> Result<DenseMatrix<T>> {
    let mut h = x.clone();
    for _ in 0..hops {
        h = adj.propagate(&h)?;
    }
    Ok(h)
}
