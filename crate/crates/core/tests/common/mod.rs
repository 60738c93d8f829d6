#![allow(dead_code)]

use graphcond::condense::{AffinityMlp, EdgeBatch, PairSelectors, SyntheticGraph};
use graphcond::dense::DenseMatrix;
use graphcond::graph::{BatchMode, IncrementalBatch, SparseGraph};
use graphcond::mapping::{normalize_mapping, support_embeddings_original, MappingMatrix, SupportTerm};
use graphcond::relay::{grad_theta, head_forward, GradientSet, RelayConfig, RelayWeights};
use graphcond::sparse::{propagate_hops, CsrMatrix};
use graphcond::trainer::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inductive batch size used for every accuracy and cost measurement on the
/// benchmark graph.
pub const EVAL_BATCH: usize = 10;

/// Training configuration of the benchmark runs.
pub fn benchmark_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(3);
    cfg.seed = seed;
    cfg.beta = 1.0;
    cfg.support_batch_size = 10;
    cfg
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Undirected graph on `n` nodes with each pair linked with probability `p`
/// and `classes` labels assigned round-robin.
pub fn random_graph(n: usize, d: usize, classes: usize, p: f64, rng: &mut impl Rng) -> SparseGraph<f64> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j, 1.0));
            }
        }
    }
    let x = random_matrix(n, d, rng);
    SparseGraph::from_edges(n, &edges, x, (0..n).map(|i| Some(i % classes)).collect(), classes).unwrap()
}

/// `n` inductive nodes linked at random into a graph of `base` nodes, with
/// random symmetric links among themselves.
pub fn random_batch(base: usize, n: usize, d: usize, rng: &mut impl Rng) -> IncrementalBatch<f64> {
    let mut cross = Vec::new();
    for i in 0..n {
        for j in 0..base {
            if rng.random_bool(0.3) {
                cross.push((i, j, 1.0));
            }
        }
    }
    let mut tilde = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                tilde.push((i, j, 1.0));
                tilde.push((j, i, 1.0));
            }
        }
    }
    IncrementalBatch::new(
        CsrMatrix::from_triplets(n, base, &cross).unwrap(),
        random_matrix(n, d, rng),
        Some(CsrMatrix::from_triplets(n, n, &tilde).unwrap()),
        None,
    )
    .unwrap()
}

/// Largest entrywise relative error between `analytic` and central
/// differences of `f`, with relative error `|a − n| / max(|a|, |n|, 1e-7)`.
pub fn fd_max_rel(f: impl Fn(&DenseMatrix<f64>) -> f64, x: &DenseMatrix<f64>, analytic: &DenseMatrix<f64>, eps: f64) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst: f64 = 0.0;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut p = x.clone();
            p[(i, j)] += eps;
            let fp = f(&p);
            p[(i, j)] = x[(i, j)] - eps;
            let fm = f(&p);
            let num = (fp - fm) / (2.0 * eps);
            let a = analytic[(i, j)];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-7));
        }
    }
    worst
}

/// A small seeded condensation problem with every loss term active.
pub struct Toy {
    pub graph: SparseGraph<f64>,
    pub adj_norm: CsrMatrix<f64>,
    pub relay_cfg: RelayConfig,
    pub relay: RelayWeights<f64>,
    pub g_target: GradientSet<f64>,
    pub synthetic: SyntheticGraph<f64>,
    pub pairs: PairSelectors<f64>,
    pub mapping: MappingMatrix<f64>,
    pub m_hat: DenseMatrix<f64>,
    pub edges: EdgeBatch,
    pub h: DenseMatrix<f64>,
    pub support: Vec<SupportTerm<f64>>,
}

/// `N = 8`, `N′ = 4`, `d = 3`, `C = 2`, `L = 2`.
pub fn toy(seed: u64) -> Toy {
    let mut r = rng(seed);
    let (n, n_prime, d, c, depth) = (8, 4, 3, 2, 2);
    let graph = random_graph(n, d, c, 0.4, &mut r);
    let adj_norm = graph.adjacency().normalize_with_self_loops().unwrap();
    let relay_cfg = RelayConfig::sgc(depth, c);
    let relay = RelayWeights::init(&relay_cfg, d, seed);
    let g_target = grad_theta(&adj_norm, graph.features(), graph.labels(), &relay, &relay_cfg).unwrap();
    let synthetic = SyntheticGraph {
        x_prime: random_matrix(n_prime, d, &mut r),
        y_prime: vec![0, 0, 1, 1],
        mlp: AffinityMlp::init(d, &[5], &mut r),
    };
    let mapping = MappingMatrix { raw: random_matrix(n, n_prime, &mut r), eps: 1e-5 };
    let m_hat = normalize_mapping(&mapping.raw, mapping.eps);
    let edges = EdgeBatch::sample(graph.adjacency(), 4, false, &mut r).unwrap();
    let p = propagate_hops(&adj_norm, graph.features(), depth).unwrap();
    let h = head_forward(&p, &relay).unwrap().embeddings;
    let batch = random_batch(n, 3, d, &mut r);
    let h_sup = support_embeddings_original(graph.adjacency(), graph.features(), &batch, BatchMode::Graph, &relay, depth).unwrap();
    let support = vec![SupportTerm::new(&batch, BatchMode::Graph, h_sup).unwrap()];
    Toy { graph, adj_norm, relay_cfg, relay, g_target, synthetic, pairs: PairSelectors::new(n_prime), mapping, m_hat, edges, h, support }
}
