//! The synthetic graph `S = {A′, X′, Y′}` and its training objective.
//!
//! `A′` is not stored during training: it is a function of `X′` and the
//! affinity MLP `Φ`, evaluated over every ordered pair of synthetic nodes and
//! symmetrized. The objective combines per-column cosine gradient matching
//! (with the synthetic-side gradient recorded on the tape, so the loss is
//! differentiable through it) and a link-reconstruction term that pulls the
//! mapped embeddings `M̂H′` toward the original adjacency.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::relay::{head_gradients_on_tape, GradientSet, RelayWeights};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// `⌊N · r⌋`.
pub fn synthetic_count(n: usize, r: f64) -> usize {
    (n as f64 * r).floor() as usize
}

/// Synthetic labels whose class counts follow the original class frequencies.
///
/// Counts use largest-remainder rounding (ties to the lower class id), every
/// class present in `labels` receives at least one node, and the result is
/// sorted by class.
pub fn predefine_labels(labels: &[usize], num_classes: usize, n_prime: usize) -> Result<Vec<usize>> {
    if n_prime < num_classes {
        return Err(Error::InvalidArgument(format!("{n_prime} synthetic nodes cannot cover {num_classes} classes")));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no labels to take class frequencies from".into()));
    }
    let mut freq = vec![0usize; num_classes];
    for (node, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::LabelOutOfRange { node, label: c as i64, num_classes });
        }
        freq[c] += 1;
    }
    let n = labels.len();
    let mut counts: Vec<usize> = freq.iter().map(|&f| f * n_prime / n).collect();
    let mut order: Vec<usize> = (0..num_classes).collect();
    // Remainders compared exactly as fractions over n.
    order.sort_by(|&a, &b| ((freq[b] * n_prime) % n).cmp(&((freq[a] * n_prime) % n)).then(a.cmp(&b)));
    let mut left = n_prime - counts.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if freq[c] > 0 {
            counts[c] += 1;
            left -= 1;
        }
    }
    for c in 0..num_classes {
        if freq[c] > 0 && counts[c] == 0 {
            let donor = (0..num_classes)
                .filter(|&d| counts[d] > 1)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .ok_or_else(|| Error::InvalidArgument("not enough synthetic nodes for every class".into()))?;
            counts[donor] -= 1;
            counts[c] = 1;
        }
    }
    Ok(counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect())
}

/// `X′` rows copied from randomly chosen original nodes of the same class.
pub fn init_synthetic_features<T: Scalar, R: Rng>(
    x: &DenseMatrix<T>,
    labels: &[usize],
    y_prime: &[usize],
    rng: &mut R,
) -> Result<DenseMatrix<T>> {
    let classes = y_prime.iter().chain(labels).copied().max().map_or(0, |m| m + 1);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        pools[c].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let mut used = vec![0usize; classes];
    let mut out = DenseMatrix::zeros(y_prime.len(), x.cols());
    for (row, &c) in y_prime.iter().enumerate() {
        let pool = &pools[c];
        if pool.is_empty() {
            return Err(Error::InvalidArgument(format!("class {c} has no original nodes to initialize from")));
        }
        let src = pool[used[c] % pool.len()];
        used[c] += 1;
        out.row_mut(row).copy_from_slice(x.row(src));
    }
    Ok(out)
}

/// MLP scoring a concatenated feature pair `[x_i; x_j]` (width `2d`) into one
/// logit. ReLU between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMlp<T> {
    /// `(weight in×out, bias 1×out)` per layer; the last layer has `out = 1`.
    pub layers: Vec<(DenseMatrix<T>, DenseMatrix<T>)>,
}

impl<T: Scalar> AffinityMlp<T> {
    pub fn init<R: Rng>(feature_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut fan_in = 2 * feature_dim;
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        for &out in hidden.iter().chain(std::iter::once(&1)) {
            let s = 1.0 / (fan_in.max(1) as f64).sqrt();
            let w = DenseMatrix::from_fn(fan_in, out, |_, _| T::of(rng.random_range(-s..s)));
            let b = DenseMatrix::from_fn(1, out, |_, _| T::of(rng.random_range(-s..s)));
            layers.push((w, b));
            fan_in = out;
        }
        Self { layers }
    }

    pub fn from_layers(layers: Vec<(DenseMatrix<T>, DenseMatrix<T>)>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidArgument("affinity MLP needs a layer".into()));
        };
        if first.0.rows() % 2 != 0 {
            return Err(Error::shape("AffinityMlp", "input width must be 2d"));
        }
        let mut width = first.0.rows();
        for (w, b) in &layers {
            if w.rows() != width || b.shape() != (1, w.cols()) {
                return Err(Error::shape("AffinityMlp", format!("layer {:?} with bias {:?}", w.shape(), b.shape())));
            }
            width = w.cols();
        }
        if width != 1 {
            return Err(Error::shape("AffinityMlp", "last layer must output one value"));
        }
        Ok(Self { layers })
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].0.rows() / 2
    }

    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|(w, b)| {
                if trainable {
                    (tape.leaf(w.clone()), tape.leaf(b.clone()))
                } else {
                    (tape.constant(w.clone()), tape.constant(b.clone()))
                }
            })
            .collect()
    }
}

/// Constant selection matrices that lay out every ordered pair `(i, j)` of
/// `n` nodes as row `i·n + j`.
#[derive(Clone, Debug)]
pub struct PairSelectors<T> {
    n: usize,
    left: Arc<CsrMatrix<T>>,
    right: Arc<CsrMatrix<T>>,
    swap: Arc<CsrMatrix<T>>,
}

impl<T: Scalar> PairSelectors<T> {
    pub fn new(n: usize) -> Self {
        let m = n * n;
        let mut left = Vec::with_capacity(m);
        let mut right = Vec::with_capacity(m);
        let mut swap = Vec::with_capacity(m);
        for i in 0..n {
            for j in 0..n {
                left.push((i * n + j, i, T::one()));
                right.push((i * n + j, j, T::one()));
                swap.push((i * n + j, j * n + i, T::one()));
            }
        }
        let build = |t: &[(usize, usize, T)], cols| Arc::new(CsrMatrix::from_triplets(m, cols, t).expect("indices in range"));
        Self { n, left: build(&left, n), right: build(&right, n), swap: build(&swap, m) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// `A′_ij = σ((MLP([x_i; x_j]) + MLP([x_j; x_i]))/2)` as an `n×n` tape value.
pub fn synth_adjacency_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x_prime: Var,
    mlp: &[(Var, Var)],
    pairs: &PairSelectors<T>,
) -> Result<Var> {
    if x_prime.rows() != pairs.n {
        return Err(Error::shape("synth_adjacency", format!("{} nodes, selectors for {}", x_prime.rows(), pairs.n)));
    }
    let xl = tape.const_spmm_left(Arc::clone(&pairs.left), x_prime)?;
    let xr = tape.const_spmm_left(Arc::clone(&pairs.right), x_prime)?;
    let mut h = tape.concat_cols(xl, xr)?;
    for (k, &(w, b)) in mlp.iter().enumerate() {
        let z = tape.matmul(h, w)?;
        h = tape.add_row_broadcast(z, b)?;
        if k + 1 < mlp.len() {
            h = tape.relu(h);
        }
    }
    let swapped = tape.const_spmm_left(Arc::clone(&pairs.swap), h)?;
    let both = tape.add(h, swapped)?;
    let avg = tape.scalar_mul(both, T::of(0.5));
    let a = tape.sigmoid(avg);
    tape.reshape(a, pairs.n, pairs.n)
}

/// Dense `A′` for fixed `X′` and `Φ`.
pub fn synth_adjacency<T: Scalar>(x_prime: &DenseMatrix<T>, mlp: &AffinityMlp<T>) -> Result<DenseMatrix<T>> {
    if x_prime.cols() != mlp.feature_dim() {
        return Err(Error::shape("synth_adjacency", format!("features {} wide, MLP expects {}", x_prime.cols(), mlp.feature_dim())));
    }
    let mut tape = Tape::new();
    let x = tape.constant(x_prime.clone());
    let vars = mlp.register(&mut tape, false);
    let a = synth_adjacency_on_tape(&mut tape, x, &vars, &PairSelectors::new(x_prime.rows()))?;
    Ok(tape.value(a).clone())
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` on the tape, evaluated in the same order as the
/// sparse normalization so both agree bit for bit on the same matrix.
pub fn normalize_on_tape<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    if a.rows() != a.cols() {
        return Err(Error::shape("normalize_on_tape", format!("{:?} is not square", a.shape())));
    }
    let rs = tape.row_sum(a);
    let deg = tape.add_scalar(rs, T::one());
    let dinv = tape.rsqrt(deg);
    let eye = tape.constant(DenseMatrix::identity(a.rows()));
    let with_loops = tape.add(a, eye)?;
    let rows = tape.scale_rows(with_loops, dinv)?;
    let dinv_t = tape.transpose(dinv);
    tape.scale_cols(rows, dinv_t)
}

pub fn propagate_on_tape<T: Scalar>(tape: &mut Tape<T>, adj: Var, x: Var, hops: usize) -> Result<Var> {
    let mut h = x;
    for _ in 0..hops {
        h = tape.matmul(adj, h)?;
    }
    Ok(h)
}

fn column_cosine<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>, j: usize) -> T {
    let (mut ab, mut aa, mut bb) = (T::zero(), T::zero(), T::zero());
    for i in 0..a.rows() {
        let (x, y) = (a[(i, j)], b[(i, j)]);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == T::zero() || bb == T::zero() {
        T::zero()
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// `Σ_ℓ Σ_i (1 − cos(G_i, G′_i))` over matching columns.
pub fn gradient_matching_loss<T: Scalar>(g_t: &GradientSet<T>, g_s: &GradientSet<T>) -> Result<T> {
    if g_t.layers.len() != g_s.layers.len() {
        return Err(Error::shape("gradient_matching_loss", format!("{} vs {} layers", g_t.layers.len(), g_s.layers.len())));
    }
    let mut total = T::zero();
    for (a, b) in g_t.layers.iter().zip(&g_s.layers) {
        if a.shape() != b.shape() {
            return Err(Error::shape("gradient_matching_loss", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        for j in 0..a.cols() {
            total += T::one() - column_cosine(a, b, j);
        }
    }
    Ok(total)
}

/// Tape form of [`gradient_matching_loss`] with a constant target side.
pub fn gradient_matching_on_tape<T: Scalar>(tape: &mut Tape<T>, g_t: &GradientSet<T>, g_s: &[Var]) -> Result<Var> {
    if g_t.layers.len() != g_s.len() {
        return Err(Error::shape("gradient_matching_loss", format!("{} vs {} layers", g_t.layers.len(), g_s.len())));
    }
    let mut total: Option<Var> = None;
    for (gt, &gs) in g_t.layers.iter().zip(g_s) {
        let c = tape.constant(gt.clone());
        let cos = tape.cosine_columns(c, gs)?;
        let s = tape.sum(cos);
        let neg = tape.scalar_mul(s, -T::one());
        let term = tape.add_scalar(neg, T::of(gt.cols() as f64));
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("no gradient layers to match".into()))
}

/// `H̃ = M̂H′`.
pub fn approx_embeddings<T: Scalar>(m_hat: &DenseMatrix<T>, h_prime: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    m_hat.matmul(h_prime)
}

/// Node pairs with binary link targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeBatch {
    pairs: Vec<(usize, usize)>,
    targets: Vec<bool>,
}

impl EdgeBatch {
    pub fn new(pairs: Vec<(usize, usize)>, targets: Vec<bool>, num_nodes: usize) -> Result<Self> {
        if pairs.len() != targets.len() {
            return Err(Error::shape("EdgeBatch", format!("{} pairs, {} targets", pairs.len(), targets.len())));
        }
        for &(i, j) in &pairs {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::IndexOutOfRange(format!("pair ({i}, {j}) with {num_nodes} nodes")));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self pair ({i}, {i}) in edge batch")));
            }
        }
        Ok(Self { pairs, targets })
    }

    /// `b_pos` stored edges and, unless `positives_only`, `b_pos` non-edges,
    /// both drawn uniformly with replacement.
    pub fn sample<T: Scalar, R: Rng>(adj: &CsrMatrix<T>, b_pos: usize, positives_only: bool, rng: &mut R) -> Result<Self> {
        let n = adj.rows();
        let edges: Vec<(usize, usize)> = adj.iter().filter(|&(i, j, _)| i != j).map(|(i, j, _)| (i, j)).collect();
        let mut pairs = Vec::with_capacity(2 * b_pos);
        let mut targets = Vec::with_capacity(2 * b_pos);
        if !edges.is_empty() {
            for _ in 0..b_pos {
                pairs.push(edges[rng.random_range(0..edges.len())]);
                targets.push(true);
            }
        }
        if !positives_only && n > 1 {
            let edge_set: HashSet<(usize, usize)> = edges.iter().copied().collect();
            let mut found = 0;
            let mut attempts = 0;
            while found < b_pos && attempts < 100 * b_pos.max(1) {
                attempts += 1;
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i != j && !edge_set.contains(&(i, j)) {
                    pairs.push((i, j));
                    targets.push(false);
                    found += 1;
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("could not sample any node pairs for the structure loss".into()));
        }
        Ok(Self { pairs, targets })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn targets(&self) -> &[bool] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }
}

/// Mean binary cross-entropy of `σ(H̃_i · H̃_j)` against the batch targets.
pub fn structure_loss<T: Scalar>(h_tilde: &DenseMatrix<T>, batch: &EdgeBatch) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("structure loss over an empty batch".into()));
    }
    let mut total = T::zero();
    for (&(i, j), &y) in batch.pairs.iter().zip(&batch.targets) {
        if i >= h_tilde.rows() || j >= h_tilde.rows() {
            return Err(Error::IndexOutOfRange(format!("pair ({i}, {j}) with {} embeddings", h_tilde.rows())));
        }
        let s: T = h_tilde.row(i).iter().zip(h_tilde.row(j)).map(|(&a, &b)| a * b).sum();
        total += if y { s.softplus() - s } else { s.softplus() };
    }
    Ok(total / T::of(batch.len() as f64))
}

/// Tape form of [`structure_loss`] with `H̃ = M̂H′`, gathering the needed rows
/// of `M̂` before multiplying.
pub fn structure_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    m_hat: &DenseMatrix<T>,
    h_prime: Var,
    batch: &EdgeBatch,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("structure loss over an empty batch".into()));
    }
    let is: Vec<usize> = batch.pairs.iter().map(|p| p.0).collect();
    let js: Vec<usize> = batch.pairs.iter().map(|p| p.1).collect();
    let mi = tape.constant(m_hat.select_rows(&is)?);
    let mj = tape.constant(m_hat.select_rows(&js)?);
    let hi = tape.matmul(mi, h_prime)?;
    let hj = tape.matmul(mj, h_prime)?;
    let prod = tape.hadamard(hi, hj)?;
    let scores = tape.row_sum(prod);
    let y = tape.constant(DenseMatrix::from_fn(batch.len(), 1, |r, _| if batch.targets[r] { T::one() } else { T::zero() }));
    let sp = tape.softplus(scores);
    let ys = tape.hadamard(y, scores)?;
    let per = tape.sub(sp, ys)?;
    let total = tape.sum(per);
    Ok(tape.scalar_mul(total, T::one() / T::of(batch.len() as f64)))
}

/// `L_S = L_gra + λ·L_str`.
pub fn synthetic_loss<T: Scalar>(
    g_t: &GradientSet<T>,
    g_s: &GradientSet<T>,
    h_tilde: &DenseMatrix<T>,
    batch: &EdgeBatch,
    lambda: T,
) -> Result<T> {
    if lambda < T::zero() {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    let gra = gradient_matching_loss(g_t, g_s)?;
    if lambda == T::zero() {
        return Ok(gra);
    }
    Ok(gra + lambda * structure_loss(h_tilde, batch)?)
}

/// Trainable part of the synthetic graph plus its fixed labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticGraph<T> {
    pub x_prime: DenseMatrix<T>,
    pub y_prime: Vec<usize>,
    pub mlp: AffinityMlp<T>,
}

impl<T: Scalar> SyntheticGraph<T> {
    pub fn len(&self) -> usize {
        self.y_prime.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_prime.is_empty()
    }

    pub fn a_prime(&self) -> Result<DenseMatrix<T>> {
        synth_adjacency(&self.x_prime, &self.mlp)
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.y_prime.iter().map(|&c| Some(c)).collect()
    }
}

/// Everything besides `S` that `L_S` depends on.
pub struct SyntheticObjective<'a, T> {
    pub relay: &'a RelayWeights<T>,
    pub depth: usize,
    /// Relay gradient on the original graph.
    pub g_target: &'a GradientSet<T>,
    pub lambda: T,
    /// Normalized mapping and link batch; the structure term is skipped when
    /// absent or when `lambda` is zero.
    pub structure: Option<(&'a DenseMatrix<T>, &'a EdgeBatch)>,
}

#[derive(Clone, Debug)]
pub struct SyntheticLossGrad<T> {
    pub total: T,
    pub gra: T,
    pub str: T,
    pub grad_x: DenseMatrix<T>,
    pub grad_mlp: Vec<(DenseMatrix<T>, DenseMatrix<T>)>,
}

/// Records `A′`, its normalization and `H′ = Â′^L X′` for the synthetic graph.
/// Returns `(A′, embedding fed to the relay's last layer, G_S)`.
fn synthetic_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    mlp: &[(Var, Var)],
    s: &SyntheticGraph<T>,
    pairs: &PairSelectors<T>,
    obj: &SyntheticObjective<'_, T>,
) -> Result<(Var, Var, Vec<Var>)> {
    let a = synth_adjacency_on_tape(tape, x, mlp, pairs)?;
    let a_norm = normalize_on_tape(tape, a)?;
    let p = propagate_on_tape(tape, a_norm, x, obj.depth)?;
    let targets = DenseMatrix::one_hot(&s.labels(), obj.relay.output_dim());
    let (g_s, emb) = head_gradients_on_tape(tape, p, obj.relay, &targets)?;
    Ok((a, emb, g_s))
}

/// `L_S` and its gradients with respect to `X′` and `Φ`.
pub fn synthetic_loss_and_grad<T: Scalar>(
    s: &SyntheticGraph<T>,
    obj: &SyntheticObjective<'_, T>,
    pairs: &PairSelectors<T>,
) -> Result<SyntheticLossGrad<T>> {
    if obj.lambda < T::zero() {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(s.x_prime.clone());
    let mlp = s.mlp.register(&mut tape, true);
    let (_, emb, g_s) = synthetic_forward(&mut tape, x, &mlp, s, pairs, obj)?;
    let gra = gradient_matching_on_tape(&mut tape, obj.g_target, &g_s)?;
    let mut loss = gra;
    let mut str_value = T::zero();
    if obj.lambda > T::zero() {
        if let Some((m_hat, batch)) = obj.structure {
            let st = structure_loss_on_tape(&mut tape, m_hat, emb, batch)?;
            str_value = tape.scalar(st);
            let weighted = tape.scalar_mul(st, obj.lambda);
            loss = tape.add(gra, weighted)?;
        }
    }
    let grads: Gradients<T> = tape.backward(loss)?;
    Ok(SyntheticLossGrad {
        total: tape.scalar(loss),
        gra: tape.scalar(gra),
        str: str_value,
        grad_x: grads.get(x),
        grad_mlp: mlp.iter().map(|&(w, b)| (grads.get(w), grads.get(b))).collect(),
    })
}

/// Value-only evaluation of `L_S`, used for finite differences.
pub fn synthetic_loss_value<T: Scalar>(
    s: &SyntheticGraph<T>,
    obj: &SyntheticObjective<'_, T>,
    pairs: &PairSelectors<T>,
) -> Result<T> {
    let mut tape = Tape::new();
    let x = tape.constant(s.x_prime.clone());
    let mlp = s.mlp.register(&mut tape, false);
    let (_, emb, g_s) = synthetic_forward(&mut tape, x, &mlp, s, pairs, obj)?;
    let gra = gradient_matching_on_tape(&mut tape, obj.g_target, &g_s)?;
    let mut total = tape.scalar(gra);
    if obj.lambda > T::zero() {
        if let Some((m_hat, batch)) = obj.structure {
            let st = structure_loss_on_tape(&mut tape, m_hat, emb, batch)?;
            total += obj.lambda * tape.scalar(st);
        }
    }
    Ok(total)
}

/// `H′`: the embedding of the synthetic nodes fed to the relay's last layer.
pub fn synthetic_embeddings<T: Scalar>(
    a_prime: &DenseMatrix<T>,
    x_prime: &DenseMatrix<T>,
    relay: &RelayWeights<T>,
    depth: usize,
) -> Result<DenseMatrix<T>> {
    let mut tape = Tape::new();
    let a = tape.constant(a_prime.clone());
    let x = tape.constant(x_prime.clone());
    let a_norm = normalize_on_tape(&mut tape, a)?;
    let p = propagate_on_tape(&mut tape, a_norm, x, depth)?;
    Ok(crate::relay::head_forward(tape.value(p), relay)?.embeddings)
}
