//! Post-hoc correction of inductive predictions by propagating over the
//! assembled graph: label propagation (LP) spreads the seed labels, error
//! propagation (EP) spreads the relay's residual on the seed rows.
//!
//! Both use the damped iteration `F ← α·Â·F + (1 − α)·F⁰`, where the seed
//! rows (synthetic or training nodes) come first and the inductive rows last.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{BatchMode, IncrementalBatch};
use crate::inference::{infer, original_assembly, synthetic_assembly, CondensedBundle};
use crate::relay::forward;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Lp,
    Ep,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" => Ok(Self::Lp),
            "ep" => Ok(Self::Ep),
            other => Err(Error::InvalidArgument(format!("unknown calibration variant '{other}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lp => "lp",
            Self::Ep => "ep",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationConfig {
    pub iterations: usize,
    /// Weight of the propagated term; `1 − alpha` goes to the initial state.
    pub alpha: f64,
    /// Reset the seed rows to their initial state after every iteration.
    pub clamp: bool,
    /// EP only: multiplier of the propagated residual added to the logits.
    pub scale: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { iterations: 10, alpha: 0.8, clamp: true, scale: 1.0 }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("propagation needs at least one iteration".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !self.scale.is_finite() {
            return Err(Error::InvalidArgument("scale must be finite".into()));
        }
        Ok(())
    }
}

/// Runs the damped iteration from `f0`; the first `seeds` rows are clamped
/// when the config asks for it.
pub fn damped_propagate<T: Scalar>(
    adj_norm: &CsrMatrix<T>,
    f0: &DenseMatrix<T>,
    seeds: usize,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix<T>> {
    cfg.validate()?;
    if adj_norm.rows() != f0.rows() || adj_norm.cols() != f0.rows() || seeds > f0.rows() {
        return Err(Error::shape("propagation", format!("{}x{} adjacency, {} rows, {seeds} seeds", adj_norm.rows(), adj_norm.cols(), f0.rows())));
    }
    let alpha = T::of(cfg.alpha);
    let keep = T::one() - alpha;
    let mut f = f0.clone();
    for _ in 0..cfg.iterations {
        let mut next = adj_norm.spmm(&f)?.scale(alpha);
        next.axpy(keep, f0)?;
        if cfg.clamp {
            for i in 0..seeds {
                next.row_mut(i).copy_from_slice(f0.row(i));
            }
        }
        f = next;
    }
    Ok(f)
}

fn seed_state<T: Scalar>(rows: usize, seed_labels: &[usize], num_classes: usize) -> Result<DenseMatrix<T>> {
    let mut f0 = DenseMatrix::zeros(rows, num_classes);
    for (i, &c) in seed_labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::LabelOutOfRange { node: i, label: c as i64, num_classes });
        }
        f0.row_mut(i)[c] = T::one();
    }
    Ok(f0)
}

/// Soft labels of the inductive rows (those after the seeds). Each nonzero
/// row is rescaled to sum to one; rows no label reached stay zero.
pub fn label_propagate<T: Scalar>(
    adj_norm: &CsrMatrix<T>,
    seed_labels: &[usize],
    num_classes: usize,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix<T>> {
    let seeds = seed_labels.len();
    let f0 = seed_state(adj_norm.rows(), seed_labels, num_classes)?;
    let f = damped_propagate(adj_norm, &f0, seeds, cfg)?;
    let mut out = f.slice_rows(seeds, f.rows());
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let total: T = row.iter().copied().sum();
        if total > T::zero() {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(out)
}

/// Inductive logits corrected by the propagated seed residual
/// `onehot(Y) − softmax(seed_logits)`.
pub fn error_propagate<T: Scalar>(
    adj_norm: &CsrMatrix<T>,
    seed_logits: &DenseMatrix<T>,
    seed_labels: &[usize],
    inductive_logits: &DenseMatrix<T>,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix<T>> {
    let seeds = seed_labels.len();
    let c = inductive_logits.cols();
    if seed_logits.rows() != seeds || seed_logits.cols() != c || seeds + inductive_logits.rows() != adj_norm.rows() {
        return Err(Error::shape("error propagation", "logits do not match the assembled graph"));
    }
    let mut r0 = seed_state(adj_norm.rows(), seed_labels, c)?;
    let probs = seed_logits.row_softmax();
    for i in 0..seeds {
        for (r, &p) in r0.row_mut(i).iter_mut().zip(probs.row(i)) {
            *r -= p;
        }
    }
    let r = damped_propagate(adj_norm, &r0, seeds, cfg)?;
    let mut out = inductive_logits.clone();
    out.axpy(T::of(cfg.scale), &r.slice_rows(seeds, r.rows()))?;
    Ok(out)
}

/// LP argmax per row, falling back to the vanilla logits for rows LP left at zero.
pub fn lp_predictions<T: Scalar>(soft: &DenseMatrix<T>, vanilla_logits: &DenseMatrix<T>) -> Vec<usize> {
    let lp = soft.argmax_rows();
    let vanilla = vanilla_logits.argmax_rows();
    (0..soft.rows())
        .map(|i| if soft.row(i).iter().any(|&v| v > T::zero()) { lp[i] } else { vanilla[i] })
        .collect()
}

/// Vanilla and calibrated predictions for one batch on the synthetic graph.
#[derive(Clone, Debug)]
pub struct CalibratedBatch {
    pub vanilla: Vec<usize>,
    pub lp: Vec<usize>,
    pub ep: Vec<usize>,
    /// Seconds spent in the LP iteration alone.
    pub lp_time: f64,
    /// Seconds spent in the EP iteration alone.
    pub ep_time: f64,
}

pub fn calibrate_batch<T: Scalar>(
    bundle: &CondensedBundle<T>,
    batch: &IncrementalBatch<T>,
    mode: BatchMode,
    cfg: &PropagationConfig,
) -> Result<CalibratedBatch> {
    let vanilla = infer(bundle, batch, mode)?;
    let (assembled, _) = synthetic_assembly(bundle, batch, mode)?;
    let norm = assembled.normalize_with_self_loops()?;
    let c = bundle.num_classes();

    let t = Instant::now();
    let soft = label_propagate(&norm, &bundle.y_prime, c, cfg)?;
    let lp_time = t.elapsed().as_secs_f64();

    let a_norm = bundle.a_prime.normalize_with_self_loops()?;
    let seed_logits = forward(&a_norm, &bundle.x_prime, &bundle.relay, &bundle.relay_config)?.logits;
    let t = Instant::now();
    let corrected = error_propagate(&norm, &seed_logits, &bundle.y_prime, &vanilla.logits, cfg)?;
    let ep_time = t.elapsed().as_secs_f64();

    Ok(CalibratedBatch {
        lp: lp_predictions(&soft, &vanilla.logits),
        ep: corrected.argmax_rows(),
        vanilla: vanilla.predictions,
        lp_time,
        ep_time,
    })
}

/// Seconds LP takes on the original graph with `batch` attached, seeded by
/// the training labels. Used as the reference for propagation timing.
pub fn lp_time_on_original<T: Scalar>(
    adj: &CsrMatrix<T>,
    x: &DenseMatrix<T>,
    labels: &[usize],
    num_classes: usize,
    batch: &IncrementalBatch<T>,
    mode: BatchMode,
    cfg: &PropagationConfig,
) -> Result<f64> {
    let (assembled, _) = original_assembly(adj, x, batch, mode)?;
    let norm = assembled.normalize_with_self_loops()?;
    let t = Instant::now();
    label_propagate(&norm, labels, num_classes, cfg)?;
    Ok(t.elapsed().as_secs_f64())
}

/// Accuracies and mean per-batch propagation time over a test set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationSummary {
    pub batches: usize,
    pub vanilla_accuracy: f64,
    pub lp_accuracy: f64,
    pub ep_accuracy: f64,
    pub lp_time: f64,
    pub ep_time: f64,
}

/// Runs [`calibrate_batch`] over consecutive chunks of a labeled test set
/// (`batch_size == 0` means one chunk).
pub fn evaluate_calibration<T: Scalar>(
    bundle: &CondensedBundle<T>,
    test: &IncrementalBatch<T>,
    mode: BatchMode,
    batch_size: usize,
    cfg: &PropagationConfig,
) -> Result<CalibrationSummary> {
    let labels = test.labels.as_ref().ok_or_else(|| Error::InvalidArgument("calibration needs test labels".into()))?;
    let size = if batch_size == 0 { test.len().max(1) } else { batch_size };
    let chunks = test.chunks(size)?;
    let mut s = CalibrationSummary { batches: chunks.len(), ..Default::default() };
    let (mut vanilla, mut lp, mut ep) = (Vec::new(), Vec::new(), Vec::new());
    for chunk in &chunks {
        let r = calibrate_batch(bundle, chunk, mode, cfg)?;
        vanilla.extend(r.vanilla);
        lp.extend(r.lp);
        ep.extend(r.ep);
        s.lp_time += r.lp_time;
        s.ep_time += r.ep_time;
    }
    let b = chunks.len().max(1) as f64;
    s.lp_time /= b;
    s.ep_time /= b;
    let acc = |pred: &[usize]| {
        let seen = labels.iter().filter(|l| l.is_some()).count().max(1);
        pred.iter().zip(labels).filter(|(p, l)| **l == Some(**p)).count() as f64 / seen as f64
    };
    s.vanilla_accuracy = acc(&vanilla);
    s.lp_accuracy = acc(&lp);
    s.ep_accuracy = acc(&ep);
    Ok(s)
}
