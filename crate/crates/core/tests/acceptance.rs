//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (uncaptured, so it shows in plain `cargo test` output).

mod common;

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use common::{benchmark_config, fd_max_rel, random_batch, random_graph, rng, toy, EVAL_BATCH};
use graphcond::baselines::{class_counts, random_coreset, CoresetResult};
use graphcond::calibration::{error_propagate, evaluate_calibration, label_propagate, PropagationConfig};
use graphcond::condense::{synthetic_embeddings, synthetic_loss_and_grad, synthetic_loss_value, AffinityMlp, SyntheticGraph, SyntheticObjective};
use graphcond::dense::DenseMatrix;
use graphcond::evaluate::{benchmark_setup, condense, delta_csv, delta_sweep, evaluate_original, evaluate_synthetic, DeployConfig, EvalSummary};
use graphcond::graph::{BatchMode, InductiveSetup};
use graphcond::inference::{infer, infer_on_original, synthetic_assembly, BundleMeta, CondensedBundle};
use graphcond::mapping::{mapping_loss_and_grad, mapping_loss_value, normalize_mapping, sparsify, MappingMatrix, MappingObjective};
use graphcond::relay::{forward, RelayConfig, RelayWeights};
use graphcond::trainer::{TrainConfig, TrainOutput};
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Regression values of the benchmark runs (5-seed means, node batches of
/// `EVAL_BATCH`), frozen from the first validated run.
const PINNED_FULL_NODE: f64 = 0.7880;
const PINNED_FULL_GRAPH: f64 = 0.8053;
const PINNED_RANDOM: f64 = 0.5347;
const PINNED_TOLERANCE: f64 = 0.01;

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n}: {verdict} ({})", detail.as_ref());
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let t = toy(seed);
        let obj = SyntheticObjective {
            relay: &t.relay,
            depth: 2,
            g_target: &t.g_target,
            lambda: 0.5,
            structure: Some((&t.m_hat, &t.edges)),
        };
        let g = synthetic_loss_and_grad(&t.synthetic, &obj, &t.pairs).unwrap();
        assert!(g.gra > 0.0 && g.str > 0.0);
        let loss_at = |s: SyntheticGraph<f64>| synthetic_loss_value(&s, &obj, &t.pairs).unwrap();
        worst = worst.max(fd_max_rel(
            |x| loss_at(SyntheticGraph { x_prime: x.clone(), ..t.synthetic.clone() }),
            &t.synthetic.x_prime,
            &g.grad_x,
            1e-6,
        ));
        for (l, (gw, gb)) in g.grad_mlp.iter().enumerate() {
            let with = |w: Option<&DenseMatrix<f64>>, b: Option<&DenseMatrix<f64>>| {
                let mut layers = t.synthetic.mlp.layers.clone();
                if let Some(w) = w {
                    layers[l].0 = w.clone();
                }
                if let Some(b) = b {
                    layers[l].1 = b.clone();
                }
                loss_at(SyntheticGraph { mlp: AffinityMlp::from_layers(layers).unwrap(), ..t.synthetic.clone() })
            };
            worst = worst.max(fd_max_rel(|w| with(Some(w), None), &t.synthetic.mlp.layers[l].0, gw, 1e-6));
            worst = worst.max(fd_max_rel(|b| with(None, Some(b)), &t.synthetic.mlp.layers[l].1, gb, 1e-6));
        }

        let a_prime = t.synthetic.a_prime().unwrap();
        let h_prime = synthetic_embeddings(&a_prime, &t.synthetic.x_prime, &t.relay, 2).unwrap();
        let mobj = MappingObjective {
            h: &t.h,
            h_prime: &h_prime,
            a_prime: &a_prime,
            x_prime: &t.synthetic.x_prime,
            relay: &t.relay,
            depth: 2,
            beta: 2.0,
            support: &t.support,
        };
        let mg = mapping_loss_and_grad(&t.mapping, &mobj).unwrap();
        assert!(mg.ind > 0.0);
        worst = worst.max(fd_max_rel(
            |raw| mapping_loss_value(&MappingMatrix { raw: raw.clone(), eps: t.mapping.eps }, &mobj).unwrap(),
            &t.mapping.raw,
            &mg.grad_raw,
            1e-6,
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && secs < 10.0;
    report(1, pass, format!("max relative error {worst:.2e} <= 1e-4, {secs:.2}s < 10s"));
    assert!(pass);
}

#[test]
fn criterion_2_identity_bundle_matches_original_inference() {
    let start = Instant::now();
    let mut r = rng(2);
    let graph = random_graph(12, 4, 3, 0.3, &mut r);
    let cfg = RelayConfig { head_dims: vec![5, 3], ..RelayConfig::sgc(2, 3) };
    let relay = RelayWeights::init(&cfg, 4, 9);
    let (a_prime, mapping) = sparsify(&graph.adjacency().to_dense(), &DenseMatrix::identity(12), 0.0, 0.0).unwrap();
    let bundle = CondensedBundle::new(
        a_prime,
        graph.features().clone(),
        graph.dense_labels().unwrap(),
        mapping,
        relay.clone(),
        cfg.clone(),
        BundleMeta { mu: 0.0, delta: 0.0, lambda: 0.0, beta: 0.0, seed: 0, fingerprint: String::new() },
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let batch = random_batch(12, 1 + k % 5, 4, &mut r);
        for mode in [BatchMode::Node, BatchMode::Graph] {
            let s = infer(&bundle, &batch, mode).unwrap();
            let o = infer_on_original(graph.adjacency(), graph.features(), &relay, &cfg, &batch, mode).unwrap();
            worst = worst.max(s.logits.max_abs_diff(&o.logits).unwrap());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 5.0;
    report(2, pass, format!("max |logit difference| {worst:.2e} <= 1e-12 over 100 batches x 2 modes, {secs:.2}s < 5s"));
    assert!(pass);
}

#[test]
fn criterion_3_mapping_invariants() {
    let mut r = rng(3);
    let (mut worst_sum, mut min_entry) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut idempotent = 0usize;
    let mut rejected = 0usize;
    for _ in 0..1000 {
        let (rows, cols) = (r.random_range(1..10), r.random_range(1..10));
        let scale = [1.0, 10.0, 100.0][r.random_range(0..3)];
        let raw = DenseMatrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale));
        let m = normalize_mapping(&raw, 1e-5);
        for i in 0..rows {
            worst_sum = worst_sum.max(m.row(i).iter().sum());
            min_entry = m.row(i).iter().copied().fold(min_entry, f64::min);
        }
        let a = DenseMatrix::from_fn(cols, cols, |_, _| r.random_range(0.0..1.0));
        let (mu, delta) = (r.random_range(0.0..0.9), r.random_range(0.0..0.5));
        match sparsify(&a, &m, mu, delta) {
            Ok((a1, m1)) => {
                let (a2, m2) = sparsify(&a1.to_dense(), &m1.matrix().to_dense(), mu, delta).unwrap();
                idempotent += usize::from(a1 == a2 && m1 == m2);
            }
            Err(_) => rejected += 1,
        }
    }
    let pass = min_entry >= 0.0 && worst_sum <= 1.0 + 1e-12 && idempotent + rejected == 1000;
    report(
        3,
        pass,
        format!("min entry {min_entry:.3e} >= 0, max row sum {worst_sum:.15} <= 1 + 1e-12, sparsify idempotent {idempotent}/{} (all-zero A' rejected: {rejected})", 1000 - rejected),
    );
    assert!(pass);
}

/// Dense `D^-1/2 (A + I) D^-1/2`, `Â^L X` and the head, written out naively.
fn naive_sgc(adj: &DenseMatrix<f64>, x: &DenseMatrix<f64>, layers: &[DenseMatrix<f64>], depth: usize) -> DenseMatrix<f64> {
    let n = adj.rows();
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + adj.row(i).iter().sum::<f64>()).collect();
    let norm = DenseMatrix::from_fn(n, n, |i, j| (adj[(i, j)] + if i == j { 1.0 } else { 0.0 }) / (deg[i] * deg[j]).sqrt());
    let mut h = x.clone();
    for _ in 0..depth {
        h = DenseMatrix::from_fn(n, x.cols(), |i, c| (0..n).map(|k| norm[(i, k)] * h[(k, c)]).sum());
    }
    for (l, w) in layers.iter().enumerate() {
        h = DenseMatrix::from_fn(n, w.cols(), |i, c| (0..w.rows()).map(|k| h[(i, k)] * w[(k, c)]).sum());
        if l + 1 < layers.len() {
            h = h.map(|v| v.max(0.0));
        }
    }
    h
}

#[test]
fn criterion_4_sgc_matches_dense_oracle() {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut r = rng(400 + seed);
        let n = r.random_range(1..=20);
        let (d, c) = (r.random_range(1..6), r.random_range(2..4));
        let graph = random_graph(n, d, c, 0.25, &mut r);
        let depth = r.random_range(0..4);
        let heads = if seed % 2 == 0 { vec![c] } else { vec![4, c] };
        let cfg = RelayConfig { head_dims: heads, ..RelayConfig::sgc(depth, c) };
        let w = RelayWeights::init(&cfg, d, seed);
        let adj = graph.adjacency().normalize_with_self_loops().unwrap();
        let got = forward(&adj, graph.features(), &w, &cfg).unwrap().logits;
        let want = naive_sgc(&graph.adjacency().to_dense(), graph.features(), w.layers(), depth);
        worst = worst.max(got.max_abs_diff(&want).unwrap());
    }
    let pass = worst <= 1e-12;
    report(4, pass, format!("max |difference| {worst:.2e} <= 1e-12 over 50 graphs"));
    assert!(pass);
}

/// Everything criteria 5 to 9 measure for one seed.
struct SeedRun {
    setup: InductiveSetup<f64>,
    cfg: TrainConfig,
    full: CondensedBundle<f64>,
    out: TrainOutput<f64>,
    plain: CondensedBundle<f64>,
    no_ind: CondensedBundle<f64>,
    coreset: CoresetResult<f64>,
}

struct Runs {
    seeds: Vec<SeedRun>,
    seconds: f64,
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let seeds = SEEDS
            .iter()
            .map(|&seed| {
                let setup = benchmark_setup::<f64>(seed).unwrap();
                let cfg = benchmark_config(seed);
                let deploy = DeployConfig::new(RelayConfig::sgc(2, 3));
                let (full, out) = condense(&setup, &cfg, &deploy).unwrap();
                let (plain, _) = condense(&setup, &TrainConfig { lambda: 0.0, beta: 0.0, ..cfg.clone() }, &deploy).unwrap();
                let (no_ind, _) = condense(&setup, &TrainConfig { beta: 0.0, ..cfg.clone() }, &deploy).unwrap();
                let coreset = random_coreset(&setup.train_graph, &class_counts(&full.y_prime, 3), seed).unwrap();
                SeedRun { setup, cfg, full, out, plain, no_ind, coreset }
            })
            .collect();
        Runs { seeds, seconds: start.elapsed().as_secs_f64() }
    })
}

fn synthetic_accuracy(bundle: &CondensedBundle<f64>, run: &SeedRun, mode: BatchMode) -> f64 {
    evaluate_synthetic(bundle, &run.setup.test, mode, EVAL_BATCH).unwrap().accuracy.unwrap()
}

fn coreset_accuracy(run: &SeedRun) -> f64 {
    let test = run.coreset.restrict_batch(&run.setup.test).unwrap();
    let b = &run.full;
    evaluate_original(&run.coreset.graph, &b.relay, &b.relay_config, &test, BatchMode::Node, EVAL_BATCH).unwrap().accuracy.unwrap()
}

fn close_to_pinned(value: f64, pinned: f64) -> bool {
    (value - pinned).abs() <= PINNED_TOLERANCE
}

#[test]
fn criterion_5_benchmark_quality() {
    let runs = runs();
    let node = mean(runs.seeds.iter().map(|r| synthetic_accuracy(&r.full, r, BatchMode::Node)));
    let graph = mean(runs.seeds.iter().map(|r| synthetic_accuracy(&r.full, r, BatchMode::Graph)));
    let random = mean(runs.seeds.iter().map(coreset_accuracy));
    let pinned = close_to_pinned(node, PINNED_FULL_NODE) && close_to_pinned(graph, PINNED_FULL_GRAPH) && close_to_pinned(random, PINNED_RANDOM);
    let pass = node >= random + 0.05 && graph >= node && pinned && runs.seconds < 300.0;
    report(
        5,
        pass,
        format!(
            "node {node:.4} >= random {random:.4} + 0.05, graph {graph:.4} >= node, pinned within {PINNED_TOLERANCE}: {pinned}, {:.1}s < 300s",
            runs.seconds
        ),
    );
    assert!(pass);
}

fn timed(f: impl Fn() -> EvalSummary) -> EvalSummary {
    // Best of three damps scheduler noise in the per-batch wall time.
    let mut best = f();
    for _ in 0..2 {
        let s = f();
        if s.mean_time < best.mean_time {
            best = s;
        }
    }
    best
}

#[test]
fn criterion_6_efficiency() {
    let runs = runs();
    let (mut flops, mut time) = (Vec::new(), Vec::new());
    for r in &runs.seeds {
        let b = &r.full;
        let s = timed(|| evaluate_synthetic(b, &r.setup.test, BatchMode::Node, EVAL_BATCH).unwrap());
        let o = timed(|| evaluate_original(&r.setup.train_graph, &b.relay, &b.relay_config, &r.setup.test, BatchMode::Node, EVAL_BATCH).unwrap());
        flops.push(o.mean_flops / s.mean_flops);
        time.push(o.mean_time / s.mean_time);
    }
    let (flops, time) = (mean(flops), mean(time));
    let pass = flops >= 10.0 && time >= 2.0;
    report(6, pass, format!("flop ratio {flops:.2} >= 10, wall-time ratio {time:.2} >= 2"));
    assert!(pass);
}

#[test]
fn criterion_7_ablation_direction() {
    let runs = runs();
    let full = mean(runs.seeds.iter().map(|r| synthetic_accuracy(&r.full, r, BatchMode::Node)));
    let plain = mean(runs.seeds.iter().map(|r| synthetic_accuracy(&r.plain, r, BatchMode::Node)));
    let no_ind = mean(runs.seeds.iter().map(|r| synthetic_accuracy(&r.no_ind, r, BatchMode::Node)));
    let pass = plain <= full && no_ind < full;
    report(7, pass, format!("plain {plain:.4} <= full {full:.4}: {}, without inductive term {no_ind:.4} < full: {}", plain <= full, no_ind < full));
    assert!(pass);
}

#[test]
fn criterion_8_calibration() {
    let runs = runs();
    let cfg = PropagationConfig::default();
    let summaries: Vec<_> = runs
        .seeds
        .iter()
        .map(|r| evaluate_calibration(&r.full, &r.setup.test, BatchMode::Node, EVAL_BATCH, &cfg).unwrap())
        .collect();
    let vanilla = mean(summaries.iter().map(|s| s.vanilla_accuracy));
    let lp = mean(summaries.iter().map(|s| s.lp_accuracy));

    let run = &runs.seeds[0];
    let batch = run.setup.test.chunks(EVAL_BATCH).unwrap().remove(0);
    let (assembled, _) = synthetic_assembly(&run.full, &batch, BatchMode::Graph).unwrap();
    let norm = assembled.normalize_with_self_loops().unwrap();
    let soft = label_propagate(&norm, &run.full.y_prime, 3, &cfg).unwrap();
    let proper = (0..soft.rows()).all(|i| {
        let row = soft.row(i);
        let total: f64 = row.iter().sum();
        row.iter().all(|&v| v >= 0.0) && (total == 0.0 || (total - 1.0).abs() <= 1e-12)
    });
    // Seed logits whose softmax is exactly one-hot leave a zero residual.
    let seed_logits = DenseMatrix::from_fn(run.full.num_synthetic(), 3, |i, c| if run.full.y_prime[i] == c { 800.0 } else { 0.0 });
    let logits = infer(&run.full, &batch, BatchMode::Graph).unwrap().logits;
    let identity = error_propagate(&norm, &seed_logits, &run.full.y_prime, &logits, &cfg).unwrap() == logits;

    let pass = lp >= vanilla - 0.005 && proper && identity;
    report(
        8,
        pass,
        format!("LP {lp:.4} >= vanilla {vanilla:.4} - 0.005, LP rows are distributions: {proper}, EP with zero residual is the identity: {identity}"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_sparsification_sweep() {
    let runs = runs();
    let run = &runs.seeds[0];
    let deltas = [0.0, 0.05, 0.1, 0.2, 0.3];
    let points = delta_sweep(&run.setup, &run.out, &run.cfg, &run.full, &deltas, BatchMode::Node, EVAL_BATCH).unwrap();
    let sparsity: Vec<f64> = points.iter().map(|p| p.sparsity).collect();
    let monotone = sparsity.windows(2).all(|w| w[0] <= w[1]) && sparsity[0] < sparsity[sparsity.len() - 1];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("delta_sweep.csv");
    std::fs::write(&path, delta_csv(&points)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    let complete = rows.len() == deltas.len() && rows.iter().zip(deltas).all(|(row, d)| row.split(',').next().unwrap().parse::<f64>().unwrap() == d);
    let pass = monotone && complete;
    let shape: Vec<String> = points.iter().map(|p| format!("{}:{:.3}/{:.4}", p.delta, p.sparsity, p.summary.accuracy.unwrap())).collect();
    report(9, pass, format!("sparsity nondecreasing: {monotone}, csv rows {}/{}, delta:sparsity/accuracy {}", rows.len(), deltas.len(), shape.join(" ")));
    assert!(pass);
}

/// Needs a Pubmed graph bundle in the directory named by `GRAPHCOND_PUBMED`.
#[test]
#[ignore]
fn criterion_10_pubmed() {
    use graphcond::io::load_graph_bundle;
    let dir = std::env::var("GRAPHCOND_PUBMED").expect("set GRAPHCOND_PUBMED to a Pubmed graph bundle directory");
    let setup = load_graph_bundle::<f32>(std::path::Path::new(&dir)).unwrap().inductive_setup().unwrap();
    let mut cfg = TrainConfig::new(3);
    cfg.reduction = 0.0032;
    cfg.outer_epochs = 300;
    let deploy = DeployConfig::new(RelayConfig::sgc(2, 3));
    let (bundle, _) = condense(&setup, &cfg, &deploy).unwrap();
    let acc = evaluate_synthetic(&bundle, &setup.test, BatchMode::Node, 0).unwrap().accuracy.unwrap();
    let pass = acc >= 0.76;
    report(10, pass, format!("Pubmed node-batch accuracy {acc:.4} >= 0.76"));
    assert!(pass);
}
