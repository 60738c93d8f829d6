//! Condenses a seeded stochastic block model graph and compares inference on
//! the synthetic graph with inference on the original graph.
//!
//! Usage: `cargo run --release --example sbm [seed]`.

use graphcond::baselines::{class_counts, random_coreset};
use graphcond::evaluate::{benchmark_setup, condense, evaluate_original, evaluate_synthetic, DeployConfig};
use graphcond::trainer::TrainConfig;
use graphcond::{BatchMode, RelayConfig};

const BATCH: usize = 10;

fn main() -> graphcond::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let setup = benchmark_setup::<f64>(seed)?;
    let mut cfg = TrainConfig::new(3);
    cfg.seed = seed;
    let deploy = DeployConfig::new(RelayConfig::sgc(2, 3));

    let t = std::time::Instant::now();
    let (bundle, _) = condense(&setup, &cfg, &deploy)?;
    println!(
        "condensed {} nodes into {} in {:.2}s, nnz(A')={}, sparsity(M)={:.3}",
        setup.train_graph.num_nodes(),
        bundle.num_synthetic(),
        t.elapsed().as_secs_f64(),
        bundle.a_prime.nnz(),
        bundle.mapping.sparsity()
    );

    for mode in [BatchMode::Node, BatchMode::Graph] {
        let syn = evaluate_synthetic(&bundle, &setup.test, mode, BATCH)?;
        let orig = evaluate_original(&setup.train_graph, &bundle.relay, &deploy.relay, &setup.test, mode, BATCH)?;
        println!(
            "{mode:?} batches: synthetic acc {:.4} ({:.0} flops), original acc {:.4} ({:.0} flops)",
            syn.accuracy.unwrap_or(f64::NAN),
            syn.mean_flops,
            orig.accuracy.unwrap_or(f64::NAN),
            orig.mean_flops
        );
    }

    let counts = class_counts(&bundle.y_prime, 3);
    let coreset = random_coreset(&setup.train_graph, &counts, seed)?;
    println!("random coreset of {} nodes selected", coreset.selected.len());
    Ok(())
}
