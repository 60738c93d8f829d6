//! Alternating optimization of the synthetic graph and the mapping matrix.
//!
//! Each outer epoch draws a fresh relay initialization. The synthetic phase
//! then takes `T` steps on `X′` and `Φ`, advancing the relay on `S` after each
//! one; the mapping phase takes `T` steps on `M` with everything else frozen.
//! After the last epoch `A′` and `M̂` are thresholded.

use std::fmt;
use std::io::Write;
use std::path::Path;

use log::debug;

use crate::condense::{
    init_synthetic_features, predefine_labels, synthetic_count, synthetic_embeddings, synthetic_loss_and_grad,
    AffinityMlp, EdgeBatch, PairSelectors, SyntheticGraph, SyntheticObjective,
};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{BatchMode, IncrementalBatch, SparseGraph};
use crate::mapping::{
    mapping_loss_and_grad, sparsify, support_embeddings_original, MappingMatrix, MappingObjective, SparseMapping,
    SupportTerm, DEFAULT_MATCH_VALUE, DEFAULT_MISMATCH_VALUE,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::relay::{head_forward, head_loss_and_grad, Architecture, RelayConfig, RelayTrainer, RelayWeights};
use crate::rng::{derive_seed, stream, streams};
use crate::scalar::Scalar;
use crate::sparse::{propagate_hops, CsrMatrix};

/// Loss magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MappingInit {
    ClassAware,
    Random,
}

impl std::str::FromStr for MappingInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class" => Ok(Self::ClassAware),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidArgument(format!("unknown mapping init '{other}'"))),
        }
    }
}

impl fmt::Display for MappingInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ClassAware => "class",
            Self::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Reduction ratio `r = N′/N`.
    pub reduction: f64,
    /// Outer epochs `K`.
    pub outer_epochs: usize,
    /// Steps per phase `T`.
    pub inner_steps: usize,
    pub lr_features: f64,
    pub lr_mlp: f64,
    pub lr_mapping: f64,
    pub lambda: f64,
    pub beta: f64,
    pub mu: f64,
    pub delta: f64,
    pub relay: RelayConfig,
    pub relay_optimizer: OptimizerKind,
    pub relay_lr: f64,
    pub mlp_hidden: Vec<usize>,
    pub edge_batch_positives: usize,
    pub structure_loss_positives_only: bool,
    /// How support nodes link among themselves in the inductive term.
    pub support_mode: BatchMode,
    /// Support nodes are attached in chunks of this size (0: all at once).
    pub support_batch_size: usize,
    pub mapping_init: MappingInit,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            reduction: 0.05,
            outer_epochs: 20,
            inner_steps: 10,
            lr_features: 0.01,
            lr_mlp: 0.01,
            lr_mapping: 0.1,
            lambda: 0.1,
            beta: 100.0,
            mu: 0.5,
            delta: 0.01,
            relay: RelayConfig::sgc(2, num_classes),
            relay_optimizer: OptimizerKind::Sgd,
            relay_lr: 0.01,
            mlp_hidden: vec![128],
            edge_batch_positives: 256,
            structure_loss_positives_only: false,
            support_mode: BatchMode::Graph,
            support_batch_size: 0,
            mapping_init: MappingInit::ClassAware,
            seed: 0,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.outer_epochs == 0 || self.inner_steps == 0 {
            return bad("outer_epochs and inner_steps must be at least 1".into());
        }
        for (name, v) in [
            ("lr_features", self.lr_features),
            ("lr_mlp", self.lr_mlp),
            ("lr_mapping", self.lr_mapping),
            ("relay_lr", self.relay_lr),
            ("lambda", self.lambda),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite nonnegative number, got {v}"));
            }
        }
        if !(self.reduction > 0.0 && self.reduction <= 1.0) {
            return bad(format!("reduction must lie in (0, 1], got {}", self.reduction));
        }
        for (name, v) in [("mu", self.mu), ("delta", self.delta)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if self.relay.architecture != Architecture::Sgc {
            return bad("condensation needs an sgc relay".into());
        }
        if self.edge_batch_positives == 0 {
            return bad("edge_batch_positives must be at least 1".into());
        }
        self.relay.validate(num_classes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Synthetic,
    Mapping,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Synthetic => "S",
            Self::Mapping => "M",
        }
    }
}

/// One line of the run log. Terms a phase does not evaluate are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub phase: Phase,
    pub gra: Option<f64>,
    pub str: Option<f64>,
    pub tra: Option<f64>,
    pub ind: Option<f64>,
}

impl LossRecord {
    pub fn total(&self, lambda: f64, beta: f64) -> f64 {
        match self.phase {
            Phase::Synthetic => self.gra.unwrap_or(0.0) + lambda * self.str.unwrap_or(0.0),
            Phase::Mapping => self.tra.unwrap_or(0.0) + beta * self.ind.unwrap_or(0.0),
        }
    }
}

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |x| format!("{x:.9e}"));
        write!(
            f,
            "{} {} {} {} {} {} {}",
            self.epoch,
            self.step,
            self.phase.tag(),
            v(self.gra),
            v(self.str),
            v(self.tra),
            v(self.ind)
        )
    }
}

pub fn write_run_log(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch step phase loss_gra loss_str loss_tra loss_ind").expect("writing to a Vec");
    for r in history {
        writeln!(out, "{r}").expect("writing to a Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mutable state of one run.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub synthetic: SyntheticGraph<T>,
    pub mapping: MappingMatrix<T>,
    pub relay: RelayWeights<T>,
    pub epoch: usize,
    pub synthetic_steps: usize,
    pub mapping_steps: usize,
    pub history: Vec<LossRecord>,
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub synthetic: SyntheticGraph<T>,
    /// Dense `A′` before thresholding.
    pub a_prime_dense: DenseMatrix<T>,
    /// Dense `M̂` before thresholding.
    pub m_hat_dense: DenseMatrix<T>,
    pub a_prime: CsrMatrix<T>,
    pub mapping: SparseMapping<T>,
    /// Relay weights at the end of the last epoch.
    pub relay: RelayWeights<T>,
    pub history: Vec<LossRecord>,
}

/// Drives one condensation run; the phases are exposed for step-level control.
pub struct Trainer<'a, T: Scalar> {
    cfg: TrainConfig,
    labels: Vec<Option<usize>>,
    adjacency: &'a CsrMatrix<T>,
    features: &'a DenseMatrix<T>,
    propagated: DenseMatrix<T>,
    support: &'a IncrementalBatch<T>,
    pairs: PairSelectors<T>,
    state: TrainState<T>,
    relay_trainer: RelayTrainer<T>,
    opt_x: Optimizer<T>,
    opt_mlp: Vec<(Optimizer<T>, Optimizer<T>)>,
    opt_m: Optimizer<T>,
    edge_rng: rand_chacha::ChaCha8Rng,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(graph: &'a SparseGraph<T>, support: &'a IncrementalBatch<T>, cfg: TrainConfig) -> Result<Self> {
        let c = graph.num_classes();
        cfg.validate(c)?;
        let dense = graph.dense_labels()?;
        if support.a.cols() != graph.num_nodes() || support.x.cols() != graph.num_features() {
            return Err(Error::shape("Trainer", "support batch does not link into the training graph"));
        }
        let n_prime = synthetic_count(graph.num_nodes(), cfg.reduction);
        let y_prime = predefine_labels(&dense, c, n_prime)?;
        let x_prime = init_synthetic_features(graph.features(), &dense, &y_prime, &mut stream(cfg.seed, streams::SYNTHETIC_FEATURES))?;
        let mlp = AffinityMlp::init(graph.num_features(), &cfg.mlp_hidden, &mut stream(cfg.seed, streams::AFFINITY_MLP));
        let mapping = match cfg.mapping_init {
            MappingInit::ClassAware => MappingMatrix::class_aware(&dense, &y_prime, T::of(DEFAULT_MATCH_VALUE), T::of(DEFAULT_MISMATCH_VALUE))?,
            MappingInit::Random => MappingMatrix::random(dense.len(), y_prime.len(), &mut stream(cfg.seed, streams::MAPPING_INIT)),
        };
        let norm = graph.adjacency().normalize_with_self_loops()?;
        let propagated = propagate_hops(&norm, graph.features(), cfg.relay.depth)?;
        let relay = RelayWeights::init(&cfg.relay, graph.num_features(), derive_seed(cfg.seed, streams::RELAY_BASE));
        let opt_mlp = mlp
            .layers
            .iter()
            .map(|_| (Optimizer::adam(T::of(cfg.lr_mlp)), Optimizer::adam(T::of(cfg.lr_mlp))))
            .collect();
        debug!("condensing {} nodes into {}", graph.num_nodes(), y_prime.len());
        Ok(Self {
            pairs: PairSelectors::new(y_prime.len()),
            labels: graph.labels().to_vec(),
            adjacency: graph.adjacency(),
            features: graph.features(),
            propagated,
            support,
            relay_trainer: RelayTrainer::new(relay.clone(), cfg.relay_optimizer, T::of(cfg.relay_lr)),
            opt_x: Optimizer::adam(T::of(cfg.lr_features)),
            opt_mlp,
            opt_m: Optimizer::adam(T::of(cfg.lr_mapping)),
            edge_rng: stream(cfg.seed, streams::EDGE_BATCHES),
            state: TrainState {
                synthetic: SyntheticGraph { x_prime, y_prime, mlp },
                mapping,
                relay,
                epoch: 0,
                synthetic_steps: 0,
                mapping_steps: 0,
                history: Vec::new(),
            },
            cfg,
        })
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Original-graph features after `L` propagation hops.
    pub fn propagated(&self) -> &DenseMatrix<T> {
        &self.propagated
    }

    /// Draws the relay initialization for outer epoch `epoch`.
    pub fn begin_epoch(&mut self, epoch: usize) {
        let seed = derive_seed(self.cfg.seed, streams::RELAY_BASE + epoch as u64);
        let relay = RelayWeights::init(&self.cfg.relay, self.features.cols(), seed);
        self.relay_trainer = RelayTrainer::new(relay.clone(), self.cfg.relay_optimizer, T::of(self.cfg.relay_lr));
        self.state.relay = relay;
        self.state.epoch = epoch;
    }

    fn guard(&self, phase: Phase, step: usize, v: T) -> Result<()> {
        let v = v.as_f64();
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { epoch: self.state.epoch, step, phase: phase.tag(), value: v });
        }
        Ok(())
    }

    /// One step on `X′` and `Φ` followed by one relay step on `S`.
    pub fn phase_update_synthetic(&mut self) -> Result<LossRecord> {
        let step = self.state.synthetic_steps;
        let relay = &self.state.relay;
        let (_, g_target) = head_loss_and_grad(&self.propagated, &self.labels, relay)?;
        let lambda = T::of(self.cfg.lambda);
        let structure = if lambda > T::zero() {
            let m_hat = self.state.mapping.normalized();
            let batch = EdgeBatch::sample(
                self.adjacency,
                self.cfg.edge_batch_positives,
                self.cfg.structure_loss_positives_only,
                &mut self.edge_rng,
            )?;
            Some((m_hat, batch))
        } else {
            None
        };
        let obj = SyntheticObjective {
            relay,
            depth: self.cfg.relay.depth,
            g_target: &g_target,
            lambda,
            structure: structure.as_ref().map(|(m, b)| (m, b)),
        };
        let out = synthetic_loss_and_grad(&self.state.synthetic, &obj, &self.pairs)?;
        self.guard(Phase::Synthetic, step, out.total)?;
        let s = &mut self.state.synthetic;
        self.opt_x.step(&mut s.x_prime, &out.grad_x)?;
        for (((w, b), (gw, gb)), (ow, ob)) in s.mlp.layers.iter_mut().zip(&out.grad_mlp).zip(&mut self.opt_mlp) {
            ow.step(w, gw)?;
            ob.step(b, gb)?;
        }
        let a_prime = s.a_prime()?;
        let p_prime = synthetic_embeddings_input(&a_prime, &s.x_prime, self.cfg.relay.depth)?;
        let relay_loss = self.relay_trainer.step_propagated(&p_prime, &s.labels())?;
        self.guard(Phase::Synthetic, step, relay_loss)?;
        self.state.relay = self.relay_trainer.weights.clone();
        self.state.synthetic_steps += 1;
        let rec = LossRecord {
            epoch: self.state.epoch,
            step,
            phase: Phase::Synthetic,
            gra: Some(out.gra.as_f64()),
            str: structure.is_some().then(|| out.str.as_f64()),
            tra: None,
            ind: None,
        };
        self.state.history.push(rec.clone());
        Ok(rec)
    }

    /// Frozen inputs of the mapping phase for the current relay and `S`.
    pub fn mapping_inputs(&self) -> Result<MappingInputs<T>> {
        let relay = &self.state.relay;
        let depth = self.cfg.relay.depth;
        let a_prime = self.state.synthetic.a_prime()?;
        let h_prime = synthetic_embeddings(&a_prime, &self.state.synthetic.x_prime, relay, depth)?;
        let h = head_forward(&self.propagated, relay)?.embeddings;
        let support = if self.cfg.beta > 0.0 && !self.support.is_empty() {
            let size = if self.cfg.support_batch_size == 0 { self.support.len() } else { self.cfg.support_batch_size };
            self.support
                .chunks(size)?
                .iter()
                .map(|chunk| {
                    let h_sup = support_embeddings_original(self.adjacency, self.features, chunk, self.cfg.support_mode, relay, depth)?;
                    SupportTerm::new(chunk, self.cfg.support_mode, h_sup)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(MappingInputs { a_prime, h_prime, h, support })
    }

    /// One step on raw `M` with `S` and the relay frozen.
    pub fn phase_update_mapping(&mut self) -> Result<LossRecord> {
        let inputs = self.mapping_inputs()?;
        self.mapping_step(&inputs)
    }

    fn mapping_step(&mut self, inputs: &MappingInputs<T>) -> Result<LossRecord> {
        let step = self.state.mapping_steps;
        let obj = MappingObjective {
            h: &inputs.h,
            h_prime: &inputs.h_prime,
            a_prime: &inputs.a_prime,
            x_prime: &self.state.synthetic.x_prime,
            relay: &self.state.relay,
            depth: self.cfg.relay.depth,
            beta: T::of(self.cfg.beta),
            support: &inputs.support,
        };
        let out = mapping_loss_and_grad(&self.state.mapping, &obj)?;
        self.guard(Phase::Mapping, step, out.total)?;
        self.opt_m.step(&mut self.state.mapping.raw, &out.grad_raw)?;
        self.state.mapping_steps += 1;
        let rec = LossRecord {
            epoch: self.state.epoch,
            step,
            phase: Phase::Mapping,
            gra: None,
            str: None,
            tra: Some(out.tra.as_f64()),
            ind: (!inputs.support.is_empty()).then(|| out.ind.as_f64()),
        };
        self.state.history.push(rec.clone());
        Ok(rec)
    }

    /// Runs all epochs.
    pub fn train(&mut self) -> Result<()> {
        for k in 0..self.cfg.outer_epochs {
            self.begin_epoch(k);
            for _ in 0..self.cfg.inner_steps {
                self.phase_update_synthetic()?;
            }
            // S and the relay stay fixed for the whole mapping phase.
            let inputs = self.mapping_inputs()?;
            for _ in 0..self.cfg.inner_steps {
                self.mapping_step(&inputs)?;
            }
        }
        Ok(())
    }

    /// Thresholds `A′` and `M̂` and hands back the results.
    pub fn finish(self) -> Result<TrainOutput<T>> {
        let a_prime_dense = self.state.synthetic.a_prime()?;
        let m_hat_dense = self.state.mapping.normalized();
        let (a_prime, mapping) = sparsify(&a_prime_dense, &m_hat_dense, T::of(self.cfg.mu), T::of(self.cfg.delta))?;
        Ok(TrainOutput {
            synthetic: self.state.synthetic,
            a_prime_dense,
            m_hat_dense,
            a_prime,
            mapping,
            relay: self.state.relay,
            history: self.state.history,
        })
    }
}

/// Quantities the mapping phase treats as constants.
#[derive(Clone, Debug)]
pub struct MappingInputs<T> {
    pub a_prime: DenseMatrix<T>,
    pub h_prime: DenseMatrix<T>,
    pub h: DenseMatrix<T>,
    /// One term per support chunk; empty when the inductive term is off.
    pub support: Vec<SupportTerm<T>>,
}

/// `Â′^L X′` with the same normalization the tape uses.
fn synthetic_embeddings_input<T: Scalar>(a_prime: &DenseMatrix<T>, x_prime: &DenseMatrix<T>, depth: usize) -> Result<DenseMatrix<T>> {
    let identity = RelayWeights::from_layers(vec![DenseMatrix::identity(x_prime.cols())])?;
    synthetic_embeddings(a_prime, x_prime, &identity, depth)
}

/// Condenses `graph` (every node labeled) using `support` for the inductive term.
pub fn run<T: Scalar>(graph: &SparseGraph<T>, support: &IncrementalBatch<T>, cfg: &TrainConfig) -> Result<TrainOutput<T>> {
    let mut trainer = Trainer::new(graph, support, cfg.clone())?;
    trainer.train()?;
    trainer.finish()
}
