//! Shared evaluation: building deployable bundles from a training run,
//! scoring inductive test nodes batch by batch on either graph, and sweeps.

use std::fmt::Write as _;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{sbm_generate, BatchMode, GraphBundle, IncrementalBatch, InductiveSetup, SbmParams, SparseGraph, Splits};
use crate::inference::{graph_fingerprint, infer, infer_on_original, train_on_graph, BundleMeta, CondensedBundle, DeploySource, InferenceReport};
use crate::mapping::{sparsify, SparseMapping};
use crate::relay::{RelayConfig, RelayTraining, RelayWeights};
use crate::rng::{derive_seed, streams};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;
use crate::trainer::{run, TrainConfig, TrainOutput};

/// Three 200-node blocks, `p_in = 0.05`, `p_out = 0.005`, 16 features with
/// class means one unit apart.
pub fn benchmark_sbm(seed: u64) -> SbmParams {
    SbmParams { sizes: vec![200; 3], p_in: 0.05, p_out: 0.005, num_features: 16, mean_separation: 1.0, seed }
}

/// Splits `graph` at random into training, support and test nodes; every
/// node not in the last two groups is a training node.
pub fn inductive_split<T: Scalar>(graph: SparseGraph<T>, support: usize, test: usize, seed: u64) -> Result<InductiveSetup<T>> {
    let n = graph.num_nodes();
    let train = n.checked_sub(support + test).filter(|&t| t > 0).ok_or_else(|| {
        Error::InvalidArgument(format!("{n} nodes cannot hold {support} support and {test} test nodes"))
    })?;
    let splits = Splits::random(n, train, support, test, derive_seed(seed, streams::SPLITS))?;
    GraphBundle { graph, splits }.inductive_setup()
}

/// The benchmark graph with 100 support and 150 test nodes.
pub fn benchmark_setup<T: Scalar>(seed: u64) -> Result<InductiveSetup<T>> {
    inductive_split(sbm_generate(&benchmark_sbm(seed))?, 100, 150, seed)
}

/// How the deployed relay is obtained.
#[derive(Clone, Debug)]
pub struct DeployConfig {
    pub source: DeploySource,
    pub relay: RelayConfig,
    pub training: RelayTraining,
}

impl DeployConfig {
    pub fn new(relay: RelayConfig) -> Self {
        Self { source: DeploySource::Original, relay, training: RelayTraining::default() }
    }
}

/// Trains the deployment relay for a finished run.
pub fn deploy_relay<T: Scalar>(
    graph: &SparseGraph<T>,
    a_prime: &CsrMatrix<T>,
    out: &TrainOutput<T>,
    deploy: &DeployConfig,
) -> Result<RelayWeights<T>> {
    match deploy.source {
        DeploySource::Original => train_on_graph(graph.adjacency(), graph.features(), graph.labels(), &deploy.relay, &deploy.training),
        DeploySource::Synthetic => train_on_graph(a_prime, &out.synthetic.x_prime, &out.synthetic.labels(), &deploy.relay, &deploy.training),
    }
}

/// Assembles a bundle from a run, a relay and (possibly different) thresholds.
pub fn bundle_from_output<T: Scalar>(
    graph: &SparseGraph<T>,
    out: &TrainOutput<T>,
    cfg: &TrainConfig,
    relay: RelayWeights<T>,
    relay_config: RelayConfig,
    a_prime: CsrMatrix<T>,
    mapping: SparseMapping<T>,
    delta: f64,
) -> Result<CondensedBundle<T>> {
    CondensedBundle::new(
        a_prime,
        out.synthetic.x_prime.clone(),
        out.synthetic.y_prime.clone(),
        mapping,
        relay,
        relay_config,
        BundleMeta { mu: cfg.mu, delta, lambda: cfg.lambda, beta: cfg.beta, seed: cfg.seed, fingerprint: graph_fingerprint(graph) },
    )
}

/// Condenses the training graph and trains the deployment relay.
pub fn condense<T: Scalar>(
    setup: &InductiveSetup<T>,
    cfg: &TrainConfig,
    deploy: &DeployConfig,
) -> Result<(CondensedBundle<T>, TrainOutput<T>)> {
    let out = run(&setup.train_graph, &setup.support, cfg)?;
    let relay = deploy_relay(&setup.train_graph, &out.a_prime, &out, deploy)?;
    let bundle = bundle_from_output(
        &setup.train_graph,
        &out,
        cfg,
        relay,
        deploy.relay.clone(),
        out.a_prime.clone(),
        out.mapping.clone(),
        cfg.delta,
    )?;
    Ok((bundle, out))
}

/// Aggregate of batch-wise inference over a test set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub nodes: usize,
    pub batches: usize,
    pub accuracy: Option<f64>,
    pub mean_time: f64,
    pub mean_flops: f64,
    pub mean_bytes: f64,
    pub total_flops: u64,
}

/// Runs `infer_one` on consecutive chunks of `test` and aggregates.
/// `batch_size == 0` means the whole set at once.
pub fn evaluate_batches<T: Scalar>(
    test: &IncrementalBatch<T>,
    batch_size: usize,
    mut infer_one: impl FnMut(&IncrementalBatch<T>) -> Result<InferenceReport<T>>,
) -> Result<(EvalSummary, Vec<usize>, DenseMatrix<T>)> {
    let size = if batch_size == 0 { test.len().max(1) } else { batch_size };
    let chunks = test.chunks(size)?;
    let mut summary = EvalSummary { nodes: test.len(), batches: chunks.len(), ..Default::default() };
    let mut predictions = Vec::with_capacity(test.len());
    let mut logits: Option<DenseMatrix<T>> = None;
    for chunk in &chunks {
        let r = infer_one(chunk)?;
        summary.mean_time += r.wall_time;
        summary.total_flops += r.flops;
        summary.mean_bytes += r.peak_bytes as f64;
        predictions.extend_from_slice(&r.predictions);
        logits = Some(match logits {
            None => r.logits,
            Some(l) => l.vstack(&r.logits)?,
        });
    }
    let b = chunks.len().max(1) as f64;
    summary.mean_time /= b;
    summary.mean_flops = summary.total_flops as f64 / b;
    summary.mean_bytes /= b;
    if let Some(labels) = &test.labels {
        let hits = predictions.iter().zip(labels).filter(|(p, l)| l.is_some_and(|c| c == **p)).count();
        let seen = labels.iter().filter(|l| l.is_some()).count();
        summary.accuracy = (seen > 0).then(|| hits as f64 / seen as f64);
    }
    let c = logits.as_ref().map_or(0, DenseMatrix::cols);
    Ok((summary, predictions, logits.unwrap_or_else(|| DenseMatrix::zeros(0, c))))
}

pub fn evaluate_synthetic<T: Scalar>(
    bundle: &CondensedBundle<T>,
    test: &IncrementalBatch<T>,
    mode: BatchMode,
    batch_size: usize,
) -> Result<EvalSummary> {
    Ok(evaluate_batches(test, batch_size, |b| infer(bundle, b, mode))?.0)
}

pub fn evaluate_original<T: Scalar>(
    graph: &SparseGraph<T>,
    relay: &RelayWeights<T>,
    cfg: &RelayConfig,
    test: &IncrementalBatch<T>,
    mode: BatchMode,
    batch_size: usize,
) -> Result<EvalSummary> {
    Ok(evaluate_batches(test, batch_size, |b| infer_on_original(graph.adjacency(), graph.features(), relay, cfg, b, mode))?.0)
}

/// One row of a `δ` sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaPoint {
    pub delta: f64,
    pub sparsity: f64,
    pub empty_rows: usize,
    pub summary: EvalSummary,
}

/// Re-thresholds `M̂` of a finished run at every `δ` and evaluates.
pub fn delta_sweep<T: Scalar>(
    setup: &InductiveSetup<T>,
    out: &TrainOutput<T>,
    cfg: &TrainConfig,
    bundle: &CondensedBundle<T>,
    deltas: &[f64],
    mode: BatchMode,
    batch_size: usize,
) -> Result<Vec<DeltaPoint>> {
    deltas
        .iter()
        .map(|&delta| {
            let (a_prime, mapping) = sparsify(&out.a_prime_dense, &out.m_hat_dense, T::of(cfg.mu), T::of(delta))?;
            let point = bundle_from_output(
                &setup.train_graph,
                out,
                cfg,
                bundle.relay.clone(),
                bundle.relay_config.clone(),
                a_prime,
                mapping,
                delta,
            )?;
            Ok(DeltaPoint {
                delta,
                sparsity: point.mapping.sparsity(),
                empty_rows: point.mapping.empty_rows().len(),
                summary: evaluate_synthetic(&point, &setup.test, mode, batch_size)?,
            })
        })
        .collect()
}

/// One row of a reduction-ratio sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioPoint {
    pub reduction: f64,
    pub num_synthetic: usize,
    pub summary: EvalSummary,
}

pub fn ratio_sweep<T: Scalar>(
    setup: &InductiveSetup<T>,
    cfg: &TrainConfig,
    deploy: &DeployConfig,
    ratios: &[f64],
    mode: BatchMode,
    batch_size: usize,
) -> Result<Vec<RatioPoint>> {
    ratios
        .iter()
        .map(|&r| {
            let cfg = TrainConfig { reduction: r, ..cfg.clone() };
            let (bundle, _) = condense(setup, &cfg, deploy)?;
            Ok(RatioPoint {
                reduction: r,
                num_synthetic: bundle.num_synthetic(),
                summary: evaluate_synthetic(&bundle, &setup.test, mode, batch_size)?,
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |a| format!("{a:.6}"))
}

pub fn delta_csv(points: &[DeltaPoint]) -> String {
    let mut s = String::from("delta,sparsity,empty_rows,accuracy,mean_time,mean_flops,mean_bytes\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{:.6},{},{},{:.9},{:.1},{:.1}",
            p.delta,
            p.sparsity,
            p.empty_rows,
            fmt_opt(p.summary.accuracy),
            p.summary.mean_time,
            p.summary.mean_flops,
            p.summary.mean_bytes
        );
    }
    s
}

pub fn ratio_csv(points: &[RatioPoint]) -> String {
    let mut s = String::from("reduction,num_synthetic,accuracy,mean_time,mean_flops,mean_bytes\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{:.9},{:.1},{:.1}",
            p.reduction,
            p.num_synthetic,
            fmt_opt(p.summary.accuracy),
            p.summary.mean_time,
            p.summary.mean_flops,
            p.summary.mean_bytes
        );
    }
    s
}

/// Parses `start:stop:step` (inclusive, tolerant to rounding) or a comma list.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("cannot parse sweep '{text}'"));
    if let Some((a, rest)) = text.split_once(':') {
        let (b, step) = rest.split_once(':').ok_or_else(bad)?;
        let (a, b, step): (f64, f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?, step.parse().map_err(|_| bad())?);
        if !(step > 0.0) || b < a {
            return Err(bad());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12).collect());
    }
    text.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}
