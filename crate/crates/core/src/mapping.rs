//! The mapping matrix `M` (original nodes × synthetic nodes).
//!
//! `M` is trained in raw form and read through a row-wise sigmoid
//! normalization with a small floor `ε` subtracted and clamped, which keeps
//! rows nonnegative with sums at most one and lets whole entries switch off.
//! Two losses shape it: a transductive one asking `M̂H′` to reproduce the
//! original embeddings, and an inductive one asking held-out support nodes to
//! embed the same way whether they are attached to the original graph or,
//! through `aM̂`, to the synthetic graph.

use std::sync::Arc;

use log::warn;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::condense::{normalize_on_tape, propagate_on_tape};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{BatchMode, IncrementalBatch};
use crate::relay::{head_embeddings_on_tape, head_forward, RelayWeights};
use crate::scalar::Scalar;
use crate::sparse::{propagate_hops, CsrMatrix};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MATCH_VALUE: f64 = 1.0;
pub const DEFAULT_MISMATCH_VALUE: f64 = -40.0;

/// Raw trainable `N×N′` mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingMatrix<T> {
    pub raw: DenseMatrix<T>,
    pub eps: T,
}

impl<T: Scalar> MappingMatrix<T> {
    /// `raw_ij = matched` when `Y_i == Y′_j`, else `mismatched`.
    pub fn class_aware(labels: &[usize], y_prime: &[usize], matched: T, mismatched: T) -> Result<Self> {
        let covered: std::collections::BTreeSet<usize> = y_prime.iter().copied().collect();
        if let Some(missing) = labels.iter().find(|c| !covered.contains(c)) {
            return Err(Error::InvalidArgument(format!("class {missing} has no synthetic node to map onto")));
        }
        let raw = DenseMatrix::from_fn(labels.len(), y_prime.len(), |i, j| {
            if labels[i] == y_prime[j] { matched } else { mismatched }
        });
        Ok(Self { raw, eps: T::of(DEFAULT_EPS) })
    }

    /// Standard-normal raw entries, for comparison with the class-aware start.
    pub fn random<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let raw = DenseMatrix::from_fn(rows, cols, |_, _| T::of(rng.sample::<f64, _>(rand_distr::StandardNormal)));
        Self { raw, eps: T::of(DEFAULT_EPS) }
    }

    pub fn normalized(&self) -> DenseMatrix<T> {
        normalize_mapping(&self.raw, self.eps)
    }
}

/// `M̂_i = ReLU(σ(M_i)/Σ_j σ(M_ij) − ε)` on the tape.
pub fn normalize_mapping_on_tape<T: Scalar>(tape: &mut Tape<T>, raw: Var, eps: T) -> Var {
    let sig = tape.sigmoid(raw);
    let sums = tape.row_sum(sig);
    let inv = tape.reciprocal(sums);
    let q = tape.scale_rows(sig, inv).expect("row vector matches");
    let shifted = tape.add_scalar(q, -eps);
    tape.relu(shifted)
}

pub fn normalize_mapping<T: Scalar>(raw: &DenseMatrix<T>, eps: T) -> DenseMatrix<T> {
    let mut tape = Tape::new();
    let r = tape.constant(raw.clone());
    let m = normalize_mapping_on_tape(&mut tape, r, eps);
    tape.value(m).clone()
}

/// `Σ_rows ‖row‖₂`.
pub fn l21_norm<T: Scalar>(x: &DenseMatrix<T>) -> T {
    (0..x.rows()).map(|i| x.row(i).iter().map(|&v| v * v).sum::<T>().sqrt()).sum()
}

/// `l21(H − M̂H′)/N`.
pub fn transductive_loss<T: Scalar>(h: &DenseMatrix<T>, h_prime: &DenseMatrix<T>, m_hat: &DenseMatrix<T>) -> Result<T> {
    if m_hat.rows() != h.rows() {
        return Err(Error::shape("transductive_loss", format!("mapping has {} rows, embeddings {}", m_hat.rows(), h.rows())));
    }
    let approx = m_hat.matmul(h_prime)?;
    Ok(l21_norm(&h.sub(&approx)?) / T::of(h.rows().max(1) as f64))
}

/// `l21(H_sup − H′_sup)/n`.
pub fn inductive_loss<T: Scalar>(h_sup: &DenseMatrix<T>, h_sup_synthetic: &DenseMatrix<T>) -> Result<T> {
    if h_sup.rows() == 0 {
        return Err(Error::InvalidArgument("inductive loss needs at least one support node".into()));
    }
    Ok(l21_norm(&h_sup.sub(h_sup_synthetic)?) / T::of(h_sup.rows() as f64))
}

/// `L_M = L_tra + β·L_ind`.
pub fn mapping_loss<T: Scalar>(l_tra: T, l_ind: T, beta: T) -> Result<T> {
    if beta < T::zero() {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    if beta == T::zero() {
        return Ok(l_tra);
    }
    Ok(l_tra + beta * l_ind)
}

fn check_batch<T: Scalar>(m_hat_rows: usize, feature_dim: usize, batch: &IncrementalBatch<T>) -> Result<()> {
    if batch.a.cols() != m_hat_rows {
        return Err(Error::shape("assemble_inductive", format!("batch links into {} nodes, mapping has {m_hat_rows} rows", batch.a.cols())));
    }
    if batch.x.cols() != feature_dim {
        return Err(Error::shape("assemble_inductive", format!("batch features {} wide, expected {feature_dim}", batch.x.cols())));
    }
    Ok(())
}

fn tilde_dense<T: Scalar>(batch: &IncrementalBatch<T>, mode: BatchMode) -> Result<DenseMatrix<T>> {
    Ok(match batch.tilde_for(mode)? {
        Some(t) => t.to_dense(),
        None => DenseMatrix::zeros(batch.len(), batch.len()),
    })
}

/// Dense `[[A′, (aM̂)ᵀ], [aM̂, ã]]` and features `[X′; x]`, with `ã` zeroed in
/// node mode. Not normalized.
pub fn assemble_inductive<T: Scalar>(
    a_prime: &DenseMatrix<T>,
    x_prime: &DenseMatrix<T>,
    m_hat: &DenseMatrix<T>,
    batch: &IncrementalBatch<T>,
    mode: BatchMode,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    check_batch(m_hat.rows(), x_prime.cols(), batch)?;
    if a_prime.shape() != (m_hat.cols(), m_hat.cols()) {
        return Err(Error::shape("assemble_inductive", format!("A′ {:?} for {} synthetic nodes", a_prime.shape(), m_hat.cols())));
    }
    let tilde = tilde_dense(batch, mode)?;
    if batch.is_empty() {
        return Ok((a_prime.clone(), x_prime.clone()));
    }
    let am = batch.a.spmm(m_hat)?;
    let top = a_prime.hstack(&am.transpose())?;
    let bottom = am.hstack(&tilde)?;
    Ok((top.vstack(&bottom)?, x_prime.vstack(&batch.x)?))
}

fn assemble_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    a_prime: Var,
    m_hat: Var,
    cross: Arc<CsrMatrix<T>>,
    tilde: &DenseMatrix<T>,
) -> Result<Var> {
    let am = tape.const_spmm_left(cross, m_hat)?;
    let am_t = tape.transpose(am);
    let top = tape.concat_cols(a_prime, am_t)?;
    let t = tape.constant(tilde.clone());
    let bottom = tape.concat_cols(am, t)?;
    tape.concat_rows(top, bottom)
}

/// Support-node embeddings on the original graph: the sparse assembly
/// `[[A, aᵀ], [a, ã]]`, normalized, propagated, last `n` rows, then the head.
pub fn support_embeddings_original<T: Scalar>(
    adj: &CsrMatrix<T>,
    x: &DenseMatrix<T>,
    batch: &IncrementalBatch<T>,
    mode: BatchMode,
    relay: &RelayWeights<T>,
    depth: usize,
) -> Result<DenseMatrix<T>> {
    check_batch(adj.rows(), x.cols(), batch)?;
    let assembled = adj.assemble_block(&batch.a, batch.tilde_for(mode)?)?.normalize_with_self_loops()?;
    let feats = x.vstack(&batch.x)?;
    let p = propagate_hops(&assembled, &feats, depth)?;
    let n0 = adj.rows();
    Ok(head_forward(&p.slice_rows(n0, n0 + batch.len()), relay)?.embeddings)
}

/// Support-node embeddings on the synthetic graph via the mapping.
pub fn support_embeddings_synthetic<T: Scalar>(
    a_prime: &DenseMatrix<T>,
    x_prime: &DenseMatrix<T>,
    m_hat: &DenseMatrix<T>,
    batch: &IncrementalBatch<T>,
    mode: BatchMode,
    relay: &RelayWeights<T>,
    depth: usize,
) -> Result<DenseMatrix<T>> {
    let support = SupportTerm::new(batch, mode, DenseMatrix::zeros(batch.len(), relay.embedding_dim()))?;
    let mut tape = Tape::new();
    let m = tape.constant(m_hat.clone());
    let h = support.synthetic_on_tape(&mut tape, a_prime, x_prime, m, relay, depth)?;
    Ok(tape.value(h).clone())
}

/// Precomputed pieces of the inductive term.
#[derive(Clone, Debug)]
pub struct SupportTerm<T> {
    cross: Arc<CsrMatrix<T>>,
    x: DenseMatrix<T>,
    tilde: DenseMatrix<T>,
    /// Embeddings of the support nodes on the original graph.
    pub h_sup: DenseMatrix<T>,
}

impl<T: Scalar> SupportTerm<T> {
    pub fn new(batch: &IncrementalBatch<T>, mode: BatchMode, h_sup: DenseMatrix<T>) -> Result<Self> {
        if h_sup.rows() != batch.len() {
            return Err(Error::shape("SupportTerm", format!("{} embeddings for {} support nodes", h_sup.rows(), batch.len())));
        }
        Ok(Self { cross: Arc::new(batch.a.clone()), x: batch.x.clone(), tilde: tilde_dense(batch, mode)?, h_sup })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    fn synthetic_on_tape(
        &self,
        tape: &mut Tape<T>,
        a_prime: &DenseMatrix<T>,
        x_prime: &DenseMatrix<T>,
        m_hat: Var,
        relay: &RelayWeights<T>,
        depth: usize,
    ) -> Result<Var> {
        if self.cross.cols() != m_hat.rows() || self.x.cols() != x_prime.cols() {
            return Err(Error::shape("support embeddings", "support batch does not match mapping or features"));
        }
        let a = tape.constant(a_prime.clone());
        let assembled = assemble_on_tape(tape, a, m_hat, Arc::clone(&self.cross), &self.tilde)?;
        let norm = normalize_on_tape(tape, assembled)?;
        let feats = tape.constant(x_prime.vstack(&self.x)?);
        let p = propagate_on_tape(tape, norm, feats, depth)?;
        let n0 = a_prime.rows();
        let last = tape.slice_rows(p, n0, n0 + self.len())?;
        head_embeddings_on_tape(tape, last, relay)
    }
}

/// Everything besides `M` that `L_M` depends on. All of it is frozen while
/// `M` is updated.
pub struct MappingObjective<'a, T> {
    /// Original-graph embeddings `H` (N×k).
    pub h: &'a DenseMatrix<T>,
    /// Synthetic embeddings `H′` (N′×k).
    pub h_prime: &'a DenseMatrix<T>,
    pub a_prime: &'a DenseMatrix<T>,
    pub x_prime: &'a DenseMatrix<T>,
    pub relay: &'a RelayWeights<T>,
    pub depth: usize,
    pub beta: T,
    /// Support nodes, split into independently attached chunks.
    pub support: &'a [SupportTerm<T>],
}

#[derive(Clone, Debug)]
pub struct MappingLossGrad<T> {
    pub total: T,
    pub tra: T,
    pub ind: T,
    pub grad_raw: DenseMatrix<T>,
}

fn record_mapping_loss<T: Scalar>(
    tape: &mut Tape<T>,
    raw: Var,
    eps: T,
    obj: &MappingObjective<'_, T>,
) -> Result<(Var, Var, Option<Var>)> {
    if obj.beta < T::zero() {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    let m_hat = normalize_mapping_on_tape(tape, raw, eps);
    let hp = tape.constant(obj.h_prime.clone());
    let approx = tape.matmul(m_hat, hp)?;
    let h = tape.constant(obj.h.clone());
    let diff = tape.sub(h, approx)?;
    let norm = tape.row_l2_sum(diff);
    let tra = tape.scalar_mul(norm, T::one() / T::of(obj.h.rows().max(1) as f64));
    let mut total = tra;
    let mut ind = None;
    let nodes: usize = obj.support.iter().map(SupportTerm::len).sum();
    if obj.beta > T::zero() && nodes > 0 {
        let mut sum = None;
        for support in obj.support.iter().filter(|s| !s.is_empty()) {
            let hs = support.synthetic_on_tape(tape, obj.a_prime, obj.x_prime, m_hat, obj.relay, obj.depth)?;
            let target = tape.constant(support.h_sup.clone());
            let d = tape.sub(target, hs)?;
            let n = tape.row_l2_sum(d);
            sum = Some(match sum {
                None => n,
                Some(acc) => tape.add(acc, n)?,
            });
        }
        let l = tape.scalar_mul(sum.expect("nonempty support"), T::one() / T::of(nodes as f64));
        let weighted = tape.scalar_mul(l, obj.beta);
        total = tape.add(tra, weighted)?;
        ind = Some(l);
    }
    Ok((total, tra, ind))
}

pub fn mapping_loss_and_grad<T: Scalar>(m: &MappingMatrix<T>, obj: &MappingObjective<'_, T>) -> Result<MappingLossGrad<T>> {
    let mut tape = Tape::new();
    let raw = tape.leaf(m.raw.clone());
    let (total, tra, ind) = record_mapping_loss(&mut tape, raw, m.eps, obj)?;
    let grads = tape.backward(total)?;
    Ok(MappingLossGrad {
        total: tape.scalar(total),
        tra: tape.scalar(tra),
        ind: ind.map_or(T::zero(), |v| tape.scalar(v)),
        grad_raw: grads.get(raw),
    })
}

/// Value-only `L_M`, used for finite differences.
pub fn mapping_loss_value<T: Scalar>(m: &MappingMatrix<T>, obj: &MappingObjective<'_, T>) -> Result<T> {
    let mut tape = Tape::new();
    let raw = tape.constant(m.raw.clone());
    let (total, _, _) = record_mapping_loss(&mut tape, raw, m.eps, obj)?;
    Ok(tape.scalar(total))
}

/// `M̂` after `δ`-thresholding; every stored value is at least `δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMapping<T> {
    matrix: CsrMatrix<T>,
}

impl<T: Scalar> SparseMapping<T> {
    pub fn threshold(m_hat: &DenseMatrix<T>, delta: T) -> Self {
        Self { matrix: CsrMatrix::from_dense_threshold(m_hat, delta) }
    }

    /// Wraps a stored matrix, checking nonnegativity.
    pub fn from_matrix(matrix: CsrMatrix<T>) -> Result<Self> {
        if matrix.values().iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidArgument("mapping entries must be finite and nonnegative".into()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    /// Rows with no stored entry.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.rows()).filter(|&i| self.matrix.row(i).0.is_empty()).collect()
    }

    /// Fraction of entries that are structural zeros.
    pub fn sparsity(&self) -> f64 {
        let total = self.rows() * self.cols();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.matrix.nnz() as f64 / total as f64
    }
}

/// Thresholds `A′` at `μ` and `M̂` at `δ`. Errors when nothing of `A′` survives;
/// warns when original nodes lose their whole mapping row.
pub fn sparsify<T: Scalar>(
    a_prime: &DenseMatrix<T>,
    m_hat: &DenseMatrix<T>,
    mu: T,
    delta: T,
) -> Result<(CsrMatrix<T>, SparseMapping<T>)> {
    for (name, v) in [("mu", mu), ("delta", delta)] {
        if !(v >= T::zero() && v < T::one()) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {v}")));
        }
    }
    let a = CsrMatrix::from_dense_threshold(a_prime, mu);
    if a.nnz() == 0 {
        return Err(Error::Numeric(format!("every entry of A′ fell below mu = {mu}")));
    }
    let m = SparseMapping::threshold(m_hat, delta);
    let empty = m.empty_rows();
    if !empty.is_empty() {
        warn!("{} original nodes lost every mapping entry at delta = {delta}", empty.len());
    }
    Ok((a, m))
}
