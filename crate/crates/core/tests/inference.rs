mod common;

use common::{random_batch, random_graph, random_matrix, rng};
use graphcond::inference::{infer, infer_on_original, BundleMeta, CondensedBundle};
use graphcond::mapping::{inductive_loss, normalize_mapping, support_embeddings_original, support_embeddings_synthetic, SparseMapping};
use graphcond::{BatchMode, CsrMatrix, DenseMatrix, Error, RelayConfig, RelayWeights};
use rand::Rng;

fn meta() -> BundleMeta {
    BundleMeta { mu: 0.5, delta: 0.01, lambda: 0.1, beta: 100.0, seed: 7, fingerprint: "ab".repeat(32) }
}

/// A random bundle over `n` original nodes with `n_prime` synthetic nodes.
fn random_bundle(n: usize, n_prime: usize, d: usize, c: usize, seed: u64) -> CondensedBundle<f64> {
    let mut r = rng(seed);
    let mut trip = Vec::new();
    for i in 0..n_prime {
        for j in i + 1..n_prime {
            if r.random_bool(0.6) {
                let w = r.random_range(0.5..1.0);
                trip.push((i, j, w));
                trip.push((j, i, w));
            }
        }
    }
    let a_prime = CsrMatrix::from_triplets(n_prime, n_prime, &trip).unwrap();
    let m_hat = normalize_mapping(&random_matrix(n, n_prime, &mut r).scale(4.0), 1e-5);
    let mapping = SparseMapping::threshold(&m_hat, 0.01);
    let cfg = RelayConfig::sgc(2, c);
    let relay = RelayWeights::init(&cfg, d, seed);
    let y_prime = (0..n_prime).map(|i| i % c).collect();
    CondensedBundle::new(a_prime, random_matrix(n_prime, d, &mut r), y_prime, mapping, relay, cfg, meta()).unwrap()
}

#[test]
fn permuting_the_batch_permutes_the_predictions() {
    for seed in 0..10 {
        let bundle = random_bundle(12, 5, 4, 3, seed);
        let batch = random_batch(12, 6, 4, &mut rng(seed + 100));
        let perm = [3, 0, 5, 1, 4, 2];
        let shuffled = batch.subset(&perm).unwrap();
        for mode in [BatchMode::Node, BatchMode::Graph] {
            let a = infer(&bundle, &batch, mode).unwrap();
            let b = infer(&bundle, &shuffled, mode).unwrap();
            for (p, &q) in perm.iter().enumerate() {
                for k in 0..3 {
                    assert!((b.logits[(p, k)] - a.logits[(q, k)]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn bundle_survives_a_save_load_round_trip() {
    let bundle = random_bundle(15, 6, 5, 3, 3);
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let loaded = CondensedBundle::<f64>::load(dir.path()).unwrap();
    assert_eq!(loaded, bundle);
    let batch = random_batch(15, 4, 5, &mut rng(9));
    let a = infer(&bundle, &batch, BatchMode::Graph).unwrap();
    let b = infer(&loaded, &batch, BatchMode::Graph).unwrap();
    assert_eq!(a.logits, b.logits);
}

#[test]
fn loading_rejects_an_unknown_format_version() {
    let bundle = random_bundle(10, 4, 3, 2, 4);
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let meta_path = dir.path().join("meta");
    let text = std::fs::read_to_string(&meta_path).unwrap().replace("format_version=1", "format_version=9");
    std::fs::write(&meta_path, text).unwrap();
    assert!(matches!(CondensedBundle::<f64>::load(dir.path()), Err(Error::Version { .. })));
}

#[test]
fn loading_rejects_a_truncated_feature_file() {
    let bundle = random_bundle(10, 4, 3, 2, 5);
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let path = dir.path().join("x_prime.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(CondensedBundle::<f64>::load(dir.path()).is_err());
}

#[test]
fn synthetic_inference_is_cheaper_than_original() {
    let mut r = rng(11);
    let graph = random_graph(60, 6, 3, 0.15, &mut r);
    let bundle = random_bundle(60, 6, 6, 3, 11);
    let batch = random_batch(60, 5, 6, &mut r);
    for mode in [BatchMode::Node, BatchMode::Graph] {
        let syn = infer(&bundle, &batch, mode).unwrap();
        let orig = infer_on_original(graph.adjacency(), graph.features(), &bundle.relay, &bundle.relay_config, &batch, mode).unwrap();
        assert!(orig.flops > syn.flops, "{} <= {}", orig.flops, syn.flops);
        assert!(orig.peak_bytes > syn.peak_bytes);
        assert_eq!(syn.rows, 6 + 5);
        assert_eq!(orig.rows, 60 + 5);
    }
}

#[test]
fn identity_condensation_has_zero_inductive_loss() {
    let mut r = rng(12);
    let graph = random_graph(9, 4, 2, 0.4, &mut r);
    let cfg = RelayConfig::sgc(2, 2);
    let relay = RelayWeights::init(&cfg, 4, 12);
    let batch = random_batch(9, 3, 4, &mut r);
    let m_hat = DenseMatrix::identity(9);
    for mode in [BatchMode::Node, BatchMode::Graph] {
        let h = support_embeddings_original(graph.adjacency(), graph.features(), &batch, mode, &relay, 2).unwrap();
        let h_syn = support_embeddings_synthetic(&graph.adjacency().to_dense(), graph.features(), &m_hat, &batch, mode, &relay, 2).unwrap();
        assert!(inductive_loss(&h, &h_syn).unwrap() < 1e-12);
    }
}

#[test]
fn graph_mode_requires_links_among_the_batch() {
    let bundle = random_bundle(10, 4, 3, 2, 13);
    let mut batch = random_batch(10, 3, 3, &mut rng(13));
    batch.a_tilde = None;
    assert!(infer(&bundle, &batch, BatchMode::Node).is_ok());
    assert!(matches!(infer(&bundle, &batch, BatchMode::Graph), Err(Error::InvalidArgument(_))));
}

#[test]
fn mismatched_batches_are_rejected() {
    let bundle = random_bundle(10, 4, 3, 2, 14);
    let wrong_base = random_batch(11, 3, 3, &mut rng(14));
    assert!(matches!(infer(&bundle, &wrong_base, BatchMode::Node), Err(Error::IndexOutOfRange(_))));
    let wrong_dim = random_batch(10, 3, 5, &mut rng(14));
    assert!(infer(&bundle, &wrong_dim, BatchMode::Node).is_err());
}

#[test]
fn bundle_rejects_inconsistent_parts() {
    let b = random_bundle(10, 4, 3, 2, 15);
    let short_labels = CondensedBundle::new(b.a_prime.clone(), b.x_prime.clone(), vec![0; 3], b.mapping.clone(), b.relay.clone(), b.relay_config.clone(), meta());
    assert!(short_labels.is_err());
    let bad_label = CondensedBundle::new(b.a_prime.clone(), b.x_prime.clone(), vec![0, 1, 2, 0], b.mapping.clone(), b.relay.clone(), b.relay_config.clone(), meta());
    assert!(matches!(bad_label, Err(Error::LabelOutOfRange { .. })));
    let wrong_a = CondensedBundle::new(CsrMatrix::empty(3, 3), b.x_prime.clone(), b.y_prime.clone(), b.mapping.clone(), b.relay.clone(), b.relay_config.clone(), meta());
    assert!(wrong_a.is_err());
}

#[test]
fn empty_batch_yields_no_predictions() {
    let bundle = random_bundle(10, 4, 3, 2, 16);
    let batch = graphcond::IncrementalBatch::empty(10, 3);
    let r = infer(&bundle, &batch, BatchMode::Node).unwrap();
    assert!(r.predictions.is_empty());
    assert_eq!(r.accuracy(&[]), None);
}
