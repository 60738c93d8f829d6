//! Coreset baselines: pick `N′` real training nodes per class (same counts as
//! the synthetic labels) and keep the subgraph they induce.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{IncrementalBatch, SparseGraph};
use crate::rng::{stream, streams};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoresetMethod {
    Random,
    Degree,
    Herding,
    KCenter,
}

impl CoresetMethod {
    pub const ALL: [CoresetMethod; 4] = [Self::Random, Self::Degree, Self::Herding, Self::KCenter];

    pub fn needs_embeddings(self) -> bool {
        matches!(self, Self::Herding | Self::KCenter)
    }
}

impl FromStr for CoresetMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "degree" => Ok(Self::Degree),
            "herding" => Ok(Self::Herding),
            "kcenter" => Ok(Self::KCenter),
            other => Err(Error::InvalidArgument(format!("unknown coreset method '{other}'"))),
        }
    }
}

impl fmt::Display for CoresetMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Degree => "degree",
            Self::Herding => "herding",
            Self::KCenter => "kcenter",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoresetResult<T> {
    pub method: CoresetMethod,
    /// Selected training-node ids, ascending.
    pub selected: Vec<usize>,
    /// Subgraph induced by `selected`, in the same order.
    pub graph: SparseGraph<T>,
}

impl<T: Scalar> CoresetResult<T> {
    /// Restricts an inductive batch's links to the selected nodes; links to
    /// unselected nodes are dropped.
    pub fn restrict_batch(&self, batch: &IncrementalBatch<T>) -> Result<IncrementalBatch<T>> {
        IncrementalBatch::new(batch.a.select_columns(&self.selected)?, batch.x.clone(), batch.a_tilde.clone(), batch.labels.clone())
    }
}

/// Per-class node counts of a synthetic label vector.
pub fn class_counts(y_prime: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &c in y_prime {
        counts[c] += 1;
    }
    counts
}

fn class_members(labels: &[usize], counts: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); counts.len()];
    for (i, &c) in labels.iter().enumerate() {
        if c >= counts.len() {
            return Err(Error::LabelOutOfRange { node: i, label: c as i64, num_classes: counts.len() });
        }
        members[c].push(i);
    }
    for (c, (m, &k)) in members.iter().zip(counts).enumerate() {
        if k > m.len() {
            return Err(Error::InvalidArgument(format!("class {c} has {} nodes, {k} requested", m.len())));
        }
    }
    Ok(members)
}

fn finish<T: Scalar>(g: &SparseGraph<T>, method: CoresetMethod, mut selected: Vec<usize>) -> Result<CoresetResult<T>> {
    selected.sort_unstable();
    let graph = g.induced_subgraph(&selected)?;
    Ok(CoresetResult { method, selected, graph })
}

pub fn random_coreset<T: Scalar>(g: &SparseGraph<T>, counts: &[usize], seed: u64) -> Result<CoresetResult<T>> {
    let members = class_members(&g.dense_labels()?, counts)?;
    let mut rng = stream(seed, streams::BASELINE);
    let mut selected = Vec::new();
    for (mut m, &k) in members.into_iter().zip(counts) {
        m.shuffle(&mut rng);
        selected.extend_from_slice(&m[..k]);
    }
    finish(g, CoresetMethod::Random, selected)
}

/// Highest degree first, ties to the lower id.
pub fn degree_coreset<T: Scalar>(g: &SparseGraph<T>, counts: &[usize]) -> Result<CoresetResult<T>> {
    let members = class_members(&g.dense_labels()?, counts)?;
    let mut selected = Vec::new();
    for (mut m, &k) in members.into_iter().zip(counts) {
        m.sort_by(|&a, &b| g.degree(b).cmp(&g.degree(a)).then(a.cmp(&b)));
        selected.extend_from_slice(&m[..k]);
    }
    finish(g, CoresetMethod::Degree, selected)
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn centroid<T: Scalar>(emb: &DenseMatrix<T>, ids: &[usize]) -> Vec<T> {
    let mut mu = vec![T::zero(); emb.cols()];
    for &i in ids {
        for (m, &v) in mu.iter_mut().zip(emb.row(i)) {
            *m += v;
        }
    }
    let n = T::of(ids.len().max(1) as f64);
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

/// Index into `candidates` minimizing `key`, first one on ties.
fn argmin_by<T: Scalar>(candidates: &[usize], mut key: impl FnMut(usize) -> T) -> usize {
    let mut best = 0;
    let mut best_v = T::infinity();
    for (pos, &c) in candidates.iter().enumerate() {
        let v = key(c);
        if v < best_v {
            best_v = v;
            best = pos;
        }
    }
    best
}

fn check_embeddings<T: Scalar>(g: &SparseGraph<T>, emb: &DenseMatrix<T>) -> Result<()> {
    if emb.rows() != g.num_nodes() {
        return Err(Error::shape("coreset", format!("{} embeddings for {} nodes", emb.rows(), g.num_nodes())));
    }
    Ok(())
}

/// Greedy herding: each pick brings the running mean of the selection
/// closest to the class mean.
pub fn herding_coreset<T: Scalar>(g: &SparseGraph<T>, counts: &[usize], emb: &DenseMatrix<T>) -> Result<CoresetResult<T>> {
    check_embeddings(g, emb)?;
    let members = class_members(&g.dense_labels()?, counts)?;
    let mut selected = Vec::new();
    for (m, &k) in members.iter().zip(counts) {
        let mu = centroid(emb, m);
        let mut pool = m.clone();
        let mut sum = vec![T::zero(); emb.cols()];
        for t in 1..=k {
            let tt = T::of(t as f64);
            let pos = argmin_by(&pool, |c| {
                let mean: Vec<T> = sum.iter().zip(emb.row(c)).map(|(&s, &v)| (s + v) / tt).collect();
                sq_dist(&mean, &mu)
            });
            let pick = pool.remove(pos);
            for (s, &v) in sum.iter_mut().zip(emb.row(pick)) {
                *s += v;
            }
            selected.push(pick);
        }
    }
    finish(g, CoresetMethod::Herding, selected)
}

/// Farthest-first traversal seeded with the node nearest the class centroid.
pub fn kcenter_coreset<T: Scalar>(g: &SparseGraph<T>, counts: &[usize], emb: &DenseMatrix<T>) -> Result<CoresetResult<T>> {
    check_embeddings(g, emb)?;
    let members = class_members(&g.dense_labels()?, counts)?;
    let mut selected = Vec::new();
    for (m, &k) in members.iter().zip(counts) {
        if k == 0 {
            continue;
        }
        let mu = centroid(emb, m);
        let mut pool = m.clone();
        let first = pool.remove(argmin_by(&pool, |c| sq_dist(emb.row(c), &mu)));
        let mut nearest: Vec<T> = pool.iter().map(|&c| sq_dist(emb.row(c), emb.row(first))).collect();
        selected.push(first);
        for _ in 1..k {
            let pos = argmin_by(&(0..pool.len()).collect::<Vec<_>>(), |p| -nearest[p]);
            let pick = pool.remove(pos);
            nearest.remove(pos);
            for (p, &c) in pool.iter().enumerate() {
                nearest[p] = nearest[p].min(sq_dist(emb.row(c), emb.row(pick)));
            }
            selected.push(pick);
        }
    }
    finish(g, CoresetMethod::KCenter, selected)
}

pub fn coreset<T: Scalar>(
    g: &SparseGraph<T>,
    method: CoresetMethod,
    counts: &[usize],
    embeddings: Option<&DenseMatrix<T>>,
    seed: u64,
) -> Result<CoresetResult<T>> {
    let need = || Error::InvalidArgument(format!("{method} needs node embeddings"));
    match method {
        CoresetMethod::Random => random_coreset(g, counts, seed),
        CoresetMethod::Degree => degree_coreset(g, counts),
        CoresetMethod::Herding => herding_coreset(g, counts, embeddings.ok_or_else(need)?),
        CoresetMethod::KCenter => kcenter_coreset(g, counts, embeddings.ok_or_else(need)?),
    }
}
