//! The relay GNN: an SGC (propagate `L` hops, then a small MLP head) or a
//! plain GCN, with exact weight gradients of the softmax cross-entropy.
//!
//! The SGC path separates the parameter-free propagation `P = Â^L X` from the
//! head, so callers that train repeatedly on one graph can propagate once.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::scalar::Scalar;
use crate::sparse::{propagate_hops, Propagate};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Sgc,
    Gcn,
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgc" => Ok(Self::Sgc),
            "gcn" => Ok(Self::Gcn),
            other => Err(Error::InvalidArgument(format!("unknown architecture '{other}'"))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgc => "sgc",
            Self::Gcn => "gcn",
        })
    }
}

/// Shape of the relay.
///
/// For [`Architecture::Sgc`], `depth` is the number of propagation hops and
/// `head_dims` the widths of the linear layers after propagation (ReLU
/// between them). For [`Architecture::Gcn`], every entry of `head_dims` is one
/// graph convolution layer and `depth` must equal their count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelayConfig {
    pub depth: usize,
    pub head_dims: Vec<usize>,
    pub architecture: Architecture,
    pub weight_init_seed: u64,
}

impl RelayConfig {
    /// `depth`-hop SGC with a single linear head.
    pub fn sgc(depth: usize, num_classes: usize) -> Self {
        Self { depth, head_dims: vec![num_classes], architecture: Architecture::Sgc, weight_init_seed: 0 }
    }

    /// Two-layer GCN with the given hidden width.
    pub fn gcn(hidden: usize, num_classes: usize) -> Self {
        Self { depth: 2, head_dims: vec![hidden, num_classes], architecture: Architecture::Gcn, weight_init_seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.weight_init_seed = seed;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.head_dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.head_dims.is_empty() || self.head_dims.contains(&0) {
            return Err(Error::InvalidArgument("relay head dims must be nonempty and positive".into()));
        }
        if self.num_classes() != num_classes {
            return Err(Error::InvalidArgument(format!(
                "relay head ends in {} outputs but there are {num_classes} classes",
                self.num_classes()
            )));
        }
        if self.architecture == Architecture::Gcn && self.depth != self.head_dims.len() {
            return Err(Error::InvalidArgument(format!(
                "gcn depth {} must equal its layer count {}",
                self.depth,
                self.head_dims.len()
            )));
        }
        Ok(())
    }
}

/// Weight matrices `W^(1) … W^(k)` chaining `d → head_dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelayWeights<T> {
    layers: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> RelayWeights<T> {
    /// Uniform `(−s, s)` entries with `s = 1/√fan_in`.
    pub fn init(cfg: &RelayConfig, num_features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(cfg.head_dims.len());
        let mut fan_in = num_features;
        for &out in &cfg.head_dims {
            let s = 1.0 / (fan_in.max(1) as f64).sqrt();
            layers.push(DenseMatrix::from_fn(fan_in, out, |_, _| T::of(rng.random_range(-s..s))));
            fan_in = out;
        }
        Self { layers }
    }

    pub fn zeros(cfg: &RelayConfig, num_features: usize) -> Self {
        let mut fan_in = num_features;
        let layers = cfg
            .head_dims
            .iter()
            .map(|&out| {
                let w = DenseMatrix::zeros(fan_in, out);
                fan_in = out;
                w
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<DenseMatrix<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("relay needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::shape("RelayWeights", format!("{:?} then {:?}", pair[0].shape(), pair[1].shape())));
            }
        }
        if layers.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("relay weights contain non-finite entries".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseMatrix<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseMatrix<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].cols()
    }

    /// Width of the embedding fed into the last linear layer.
    pub fn embedding_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    pub fn head_dims(&self) -> Vec<usize> {
        self.layers.iter().map(DenseMatrix::cols).collect()
    }

    pub fn cast<U: Scalar>(&self) -> RelayWeights<U> {
        RelayWeights { layers: self.layers.iter().map(DenseMatrix::cast).collect() }
    }
}

/// One gradient matrix per weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    pub layers: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn scale(&self, s: T) -> Self {
        Self { layers: self.layers.iter().map(|g| g.scale(s)).collect() }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// Input to the last linear layer.
    pub embeddings: DenseMatrix<T>,
    pub logits: DenseMatrix<T>,
}

fn relu<T: Scalar>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    m.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn check_input<T: Scalar>(x: &DenseMatrix<T>, w: &RelayWeights<T>) -> Result<()> {
    if x.cols() != w.input_dim() {
        return Err(Error::shape("relay forward", format!("features have {} columns, relay expects {}", x.cols(), w.input_dim())));
    }
    Ok(())
}

/// Runs the MLP head on already-propagated features.
pub fn head_forward<T: Scalar>(p: &DenseMatrix<T>, w: &RelayWeights<T>) -> Result<ForwardOutput<T>> {
    check_input(p, w)?;
    let mut h = p.clone();
    let last = w.layers.len() - 1;
    for layer in &w.layers[..last] {
        h = relu(&h.matmul(layer)?);
    }
    let logits = h.matmul(&w.layers[last])?;
    Ok(ForwardOutput { embeddings: h, logits })
}

pub fn forward<T: Scalar, A: Propagate<T> + ?Sized>(
    adj: &A,
    x: &DenseMatrix<T>,
    w: &RelayWeights<T>,
    cfg: &RelayConfig,
) -> Result<ForwardOutput<T>> {
    check_input(x, w)?;
    if adj.dim() != x.rows() {
        return Err(Error::shape("relay forward", format!("adjacency is {0}×{0}, features have {1} rows", adj.dim(), x.rows())));
    }
    match cfg.architecture {
        Architecture::Sgc => head_forward(&propagate_hops(adj, x, cfg.depth)?, w),
        Architecture::Gcn => {
            let mut h = x.clone();
            let last = w.layers.len() - 1;
            for layer in &w.layers[..last] {
                h = relu(&adj.propagate(&h)?.matmul(layer)?);
            }
            let logits = adj.propagate(&h)?.matmul(&w.layers[last])?;
            Ok(ForwardOutput { embeddings: h, logits })
        }
    }
}

fn labeled_count(labels: &[Option<usize>], classes: usize) -> Result<usize> {
    let mut n = 0;
    for (node, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            if c >= classes {
                return Err(Error::LabelOutOfRange { node, label: c as i64, num_classes: classes });
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cross-entropy needs at least one labeled row".into()));
    }
    Ok(n)
}

/// Mean softmax cross-entropy over the labeled rows.
pub fn ce_loss<T: Scalar>(logits: &DenseMatrix<T>, labels: &[Option<usize>]) -> Result<T> {
    Ok(ce_loss_and_grad(logits, labels)?.0)
}

/// Loss and its gradient with respect to the logits, `(softmax − onehot)/N`
/// on labeled rows and zero elsewhere.
pub fn ce_loss_and_grad<T: Scalar>(logits: &DenseMatrix<T>, labels: &[Option<usize>]) -> Result<(T, DenseMatrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("ce_loss", format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    let c = logits.cols();
    let n = labeled_count(labels, c)?;
    let inv_n = T::one() / T::of(n as f64);
    let mut grad = DenseMatrix::zeros(logits.rows(), c);
    let mut total = T::zero();
    for (i, l) in labels.iter().enumerate() {
        let Some(y) = *l else { continue };
        let row = logits.row(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + z.ln();
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = (row[k] - lse).exp() * inv_n;
        }
        g[y] -= inv_n;
    }
    Ok((total * inv_n, grad))
}

/// Backpropagates `dlogits` through the head given the head input `p`.
fn head_backward<T: Scalar>(p: &DenseMatrix<T>, w: &RelayWeights<T>, dlogits: DenseMatrix<T>) -> Result<GradientSet<T>> {
    let k = w.layers.len();
    let mut inputs = Vec::with_capacity(k);
    inputs.push(p.clone());
    for layer in &w.layers[..k - 1] {
        let next = relu(&inputs[inputs.len() - 1].matmul(layer)?);
        inputs.push(next);
    }
    let mut grads = vec![DenseMatrix::zeros(0, 0); k];
    let mut d = dlogits;
    for l in (0..k).rev() {
        grads[l] = inputs[l].transpose().matmul(&d)?;
        if l > 0 {
            let da = d.matmul(&w.layers[l].transpose())?;
            let act = &inputs[l];
            d = DenseMatrix::from_fn(da.rows(), da.cols(), |i, j| {
                if act[(i, j)] > T::zero() { da[(i, j)] } else { T::zero() }
            });
        }
    }
    Ok(GradientSet { layers: grads })
}

/// Loss and weight gradients of the SGC head on propagated features `p`.
pub fn head_loss_and_grad<T: Scalar>(
    p: &DenseMatrix<T>,
    labels: &[Option<usize>],
    w: &RelayWeights<T>,
) -> Result<(T, GradientSet<T>)> {
    let out = head_forward(p, w)?;
    let (loss, d) = ce_loss_and_grad(&out.logits, labels)?;
    Ok((loss, head_backward(p, w, d)?))
}

fn gcn_loss_and_grad<T: Scalar, A: Propagate<T> + ?Sized>(
    adj: &A,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    w: &RelayWeights<T>,
) -> Result<(T, GradientSet<T>)> {
    let k = w.layers.len();
    // propagated[l] = Â H^(l), pre[l] = Â H^(l) W^(l)
    let mut propagated = Vec::with_capacity(k);
    let mut pre = Vec::with_capacity(k);
    let mut h = x.clone();
    for (l, layer) in w.layers.iter().enumerate() {
        let ah = adj.propagate(&h)?;
        let z = ah.matmul(layer)?;
        if l + 1 < k {
            h = relu(&z);
        }
        propagated.push(ah);
        pre.push(z);
    }
    let (loss, mut d) = ce_loss_and_grad(&pre[k - 1], labels)?;
    let mut grads = vec![DenseMatrix::zeros(0, 0); k];
    for l in (0..k).rev() {
        grads[l] = propagated[l].transpose().matmul(&d)?;
        if l > 0 {
            let dh = adj.propagate_transpose(&d.matmul(&w.layers[l].transpose())?)?;
            let z = &pre[l - 1];
            d = DenseMatrix::from_fn(dh.rows(), dh.cols(), |i, j| {
                if z[(i, j)] > T::zero() { dh[(i, j)] } else { T::zero() }
            });
        }
    }
    Ok((loss, GradientSet { layers: grads }))
}

/// Exact loss and gradient of `ce_loss ∘ forward` with respect to each weight.
pub fn loss_and_grad<T: Scalar, A: Propagate<T> + ?Sized>(
    adj: &A,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    w: &RelayWeights<T>,
    cfg: &RelayConfig,
) -> Result<(T, GradientSet<T>)> {
    check_input(x, w)?;
    match cfg.architecture {
        Architecture::Sgc => head_loss_and_grad(&propagate_hops(adj, x, cfg.depth)?, labels, w),
        Architecture::Gcn => gcn_loss_and_grad(adj, x, labels, w),
    }
}

pub fn grad_theta<T: Scalar, A: Propagate<T> + ?Sized>(
    adj: &A,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    w: &RelayWeights<T>,
    cfg: &RelayConfig,
) -> Result<GradientSet<T>> {
    Ok(loss_and_grad(adj, x, labels, w, cfg)?.1)
}

/// Records the head's weight gradients as differentiable functions of the
/// propagated features `p`.
///
/// Weights are constants; the ReLU masks between head layers are treated as
/// constants too, which is exact almost everywhere. `targets` is the one-hot
/// label matrix; every row counts as labeled. Returns the gradients and the
/// embedding fed to the last layer.
pub fn head_gradients_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    p: Var,
    w: &RelayWeights<T>,
    targets: &DenseMatrix<T>,
) -> Result<(Vec<Var>, Var)> {
    if p.cols() != w.input_dim() || targets.shape() != (p.rows(), w.output_dim()) {
        return Err(Error::shape("head_gradients_on_tape", format!("p {:?}, targets {:?}", p.shape(), targets.shape())));
    }
    let k = w.layers.len();
    let weights: Vec<Var> = w.layers.iter().map(|m| tape.constant(m.clone())).collect();
    let mut inputs = vec![p];
    let mut masks = Vec::with_capacity(k.saturating_sub(1));
    for &wl in &weights[..k - 1] {
        let z = tape.matmul(inputs[inputs.len() - 1], wl)?;
        let mask = tape.value(z).map(|v| if v > T::zero() { T::one() } else { T::zero() });
        let a = tape.relu(z);
        masks.push(mask);
        inputs.push(a);
    }
    let logits = tape.matmul(inputs[k - 1], weights[k - 1])?;
    let probs = tape.row_softmax(logits);
    let y = tape.constant(targets.clone());
    let diff = tape.sub(probs, y)?;
    let mut d = tape.scalar_mul(diff, T::one() / T::of(p.rows() as f64));
    let mut grads = vec![d; k];
    for l in (0..k).rev() {
        let input_t = tape.transpose(inputs[l]);
        grads[l] = tape.matmul(input_t, d)?;
        if l > 0 {
            let wt = tape.constant(w.layers[l].transpose());
            let da = tape.matmul(d, wt)?;
            let mask = tape.constant(masks[l - 1].clone());
            d = tape.hadamard(da, mask)?;
        }
    }
    Ok((grads, inputs[k - 1]))
}

/// The embedding fed to the last layer, recorded on the tape with the head
/// weights as constants.
pub fn head_embeddings_on_tape<T: Scalar>(tape: &mut Tape<T>, p: Var, w: &RelayWeights<T>) -> Result<Var> {
    if p.cols() != w.input_dim() {
        return Err(Error::shape("head_embeddings_on_tape", format!("input {:?} for relay input {}", p.shape(), w.input_dim())));
    }
    let mut h = p;
    for layer in &w.layers[..w.layers.len() - 1] {
        let c = tape.constant(layer.clone());
        let z = tape.matmul(h, c)?;
        h = tape.relu(z);
    }
    Ok(h)
}

/// Relay weights plus one optimizer per weight matrix.
#[derive(Clone, Debug)]
pub struct RelayTrainer<T> {
    pub weights: RelayWeights<T>,
    optimizers: Vec<Optimizer<T>>,
}

impl<T: Scalar> RelayTrainer<T> {
    pub fn new(weights: RelayWeights<T>, kind: OptimizerKind, lr: T) -> Self {
        let optimizers = weights.layers.iter().map(|_| Optimizer::new(kind, lr)).collect();
        Self { weights, optimizers }
    }

    pub fn apply(&mut self, grads: &GradientSet<T>) -> Result<()> {
        for ((w, g), opt) in self.weights.layers.iter_mut().zip(&grads.layers).zip(&mut self.optimizers) {
            opt.step(w, g)?;
        }
        Ok(())
    }

    /// One optimizer step on the cross-entropy over `(adj, x, labels)`.
    /// Returns the loss before the step.
    pub fn step<A: Propagate<T> + ?Sized>(
        &mut self,
        adj: &A,
        x: &DenseMatrix<T>,
        labels: &[Option<usize>],
        cfg: &RelayConfig,
    ) -> Result<T> {
        let (loss, g) = loss_and_grad(adj, x, labels, &self.weights, cfg)?;
        self.apply(&g)?;
        Ok(loss)
    }

    /// Like [`RelayTrainer::step`] for an SGC whose propagation is precomputed.
    pub fn step_propagated(&mut self, p: &DenseMatrix<T>, labels: &[Option<usize>]) -> Result<T> {
        let (loss, g) = head_loss_and_grad(p, labels, &self.weights)?;
        self.apply(&g)?;
        Ok(loss)
    }
}

/// Full-batch training used for deployment relays and coreset embeddings.
#[derive(Clone, Debug)]
pub struct RelayTraining {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
}

impl Default for RelayTraining {
    fn default() -> Self {
        Self { epochs: 200, optimizer: OptimizerKind::Adam, lr: 0.01 }
    }
}

pub fn train_relay<T: Scalar, A: Propagate<T> + ?Sized>(
    adj: &A,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    cfg: &RelayConfig,
    training: &RelayTraining,
) -> Result<RelayWeights<T>> {
    cfg.validate(cfg.num_classes())?;
    let init = RelayWeights::init(cfg, x.cols(), cfg.weight_init_seed);
    let mut trainer = RelayTrainer::new(init, training.optimizer, T::of(training.lr));
    match cfg.architecture {
        Architecture::Sgc => {
            let p = propagate_hops(adj, x, cfg.depth)?;
            for _ in 0..training.epochs {
                trainer.step_propagated(&p, labels)?;
            }
        }
        Architecture::Gcn => {
            for _ in 0..training.epochs {
                trainer.step(adj, x, labels, cfg)?;
            }
        }
    }
    if trainer.weights.layers.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("relay training produced non-finite weights".into()));
    }
    Ok(trainer.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;

    fn labels(v: &[usize]) -> Vec<Option<usize>> {
        v.iter().map(|&c| Some(c)).collect()
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let l = ce_loss(&DenseMatrix::<f64>::zeros(4, 3), &labels(&[0, 1, 2, 0])).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_class_hand_value() {
        let l = ce_loss(&DenseMatrix::from_rows(&[[2.0, 0.0]]), &labels(&[0])).unwrap();
        assert!((l - (1.0 + (-2f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.1269f64).abs() < 1e-4);
    }

    #[test]
    fn confident_logits_give_vanishing_loss() {
        let l: f64 = ce_loss(&DenseMatrix::from_rows(&[[800.0, 0.0]]), &labels(&[0])).unwrap();
        assert!(l < 1e-300 && l >= 0.0);
    }

    #[test]
    fn unlabeled_rows_are_skipped_and_all_unlabeled_fails() {
        let logits = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 9.0]]);
        let l = ce_loss(&logits, &[Some(0), None]).unwrap();
        assert!((l - (1.0 + (-2f64).exp()).ln()).abs() < 1e-15);
        assert!(ce_loss(&logits, &[None, None]).is_err());
        assert!(matches!(ce_loss(&logits, &[Some(5), None]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn projector_graph_forward() {
        let a = DenseMatrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]);
        let x = DenseMatrix::from_rows(&[[1.0, 3.0], [2.0, -1.0]]);
        let w = RelayWeights::from_layers(vec![DenseMatrix::from_rows(&[[1.0, 0.0], [2.0, 1.0]])]).unwrap();
        let out = forward(&a, &x, &w, &RelayConfig::sgc(2, 2)).unwrap();
        // Â X = [[1.5, 1], [1.5, 1]]; times W = [[3.5, 1], [3.5, 1]].
        assert_eq!(out.logits, DenseMatrix::from_rows(&[[3.5, 1.0], [3.5, 1.0]]));
    }

    #[test]
    fn zero_depth_identity_head_is_identity() {
        let x = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 4.0], [3.0, 0.0]]);
        let w = RelayWeights::from_layers(vec![DenseMatrix::identity(2)]).unwrap();
        let adj = CsrMatrix::from_triplets(3, 3, &[(0, 1, 0.3), (1, 0, 0.3)]).unwrap();
        let out = forward(&adj, &x, &w, &RelayConfig::sgc(0, 2)).unwrap();
        assert_eq!(out.logits, x);
        let out = forward(&CsrMatrix::identity(3), &x, &w, &RelayConfig::sgc(3, 2)).unwrap();
        assert_eq!(out.logits, x);
    }

    #[test]
    fn closed_form_at_zero_weights() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.0, 1.0]]);
        let y = labels(&[0, 2, 1]);
        let cfg = RelayConfig::sgc(0, 3);
        let w = RelayWeights::zeros(&cfg, 2);
        let g = grad_theta(&DenseMatrix::identity(3), &x, &y, &w, &cfg).unwrap();
        let target = DenseMatrix::filled(3, 3, 1.0 / 3.0).sub(&DenseMatrix::one_hot(&y, 3)).unwrap();
        let expected = x.transpose().matmul(&target).unwrap().scale(1.0 / 3.0);
        assert!(g.layers[0].max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn zero_features_zero_gradient() {
        let cfg = RelayConfig::sgc(2, 2);
        let w = RelayWeights::<f64>::init(&cfg, 3, 1);
        let g = grad_theta(&DenseMatrix::identity(4), &DenseMatrix::zeros(4, 3), &labels(&[0, 1, 1, 0]), &w, &cfg).unwrap();
        assert_eq!(g.layers[0].max_abs(), 0.0);
    }

    #[test]
    fn lr_zero_keeps_weights_and_sgd_is_definitional() {
        let cfg = RelayConfig::sgc(1, 2);
        let w = RelayWeights::<f64>::init(&cfg, 3, 4);
        let adj = DenseMatrix::from_rows(&[[0.5, 0.5, 0.0], [0.5, 0.25, 0.25], [0.0, 0.25, 0.75]]);
        let x = DenseMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.3);
        let y = labels(&[0, 1, 1]);
        let mut t = RelayTrainer::new(w.clone(), OptimizerKind::Sgd, 0.0);
        t.step(&adj, &x, &y, &cfg).unwrap();
        assert_eq!(t.weights, w);

        let g = grad_theta(&adj, &x, &y, &w, &cfg).unwrap();
        let mut t = RelayTrainer::new(w.clone(), OptimizerKind::Sgd, 0.5);
        let before = t.step(&adj, &x, &y, &cfg).unwrap();
        let mut expected = w.layers()[0].clone();
        expected.axpy(-0.5, &g.layers[0]).unwrap();
        assert_eq!(t.weights.layers()[0], expected);

        let mut t = RelayTrainer::new(w, OptimizerKind::Sgd, 1e-3);
        t.step(&adj, &x, &y, &cfg).unwrap();
        let after = ce_loss(&forward(&adj, &x, &t.weights, &cfg).unwrap().logits, &y).unwrap();
        assert!(after <= before);
    }

    #[test]
    fn gcn_gradient_matches_tape_free_difference() {
        let cfg = RelayConfig::gcn(4, 2);
        let adj = CsrMatrix::from_triplets(5, 5, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (3, 4, 1.0), (4, 3, 1.0)])
            .unwrap()
            .normalize_with_self_loops()
            .unwrap();
        let x = DenseMatrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.4 - 0.7);
        let y = labels(&[0, 1, 0, 1, 1]);
        let w = RelayWeights::<f64>::init(&cfg, 3, 11);
        let g = grad_theta(&adj, &x, &y, &w, &cfg).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for idx in 0..w.layers()[l].as_slice().len() {
                let mut wp = w.clone();
                wp.layers_mut()[l].as_mut_slice()[idx] += h;
                let mut wm = w.clone();
                wm.layers_mut()[l].as_mut_slice()[idx] -= h;
                let fp = ce_loss(&forward(&adj, &x, &wp, &cfg).unwrap().logits, &y).unwrap();
                let fm = ce_loss(&forward(&adj, &x, &wm, &cfg).unwrap().logits, &y).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g.layers[l].as_slice()[idx]).abs() < 1e-7, "layer {l} idx {idx}");
            }
        }
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let cfg = RelayConfig::sgc(2, 3);
        let a = RelayWeights::<f64>::init(&cfg, 16, 9);
        assert_eq!(a, RelayWeights::init(&cfg, 16, 9));
        assert_ne!(a, RelayWeights::init(&cfg, 16, 10));
        assert!(a.layers()[0].max_abs() < 0.25);
    }

    #[test]
    fn config_validation() {
        assert!(RelayConfig::sgc(2, 3).validate(3).is_ok());
        assert!(RelayConfig::sgc(2, 3).validate(4).is_err());
        let mut g = RelayConfig::gcn(8, 3);
        g.depth = 3;
        assert!(g.validate(3).is_err());
    }
}
