mod common;

use common::{fd_max_rel, random_matrix, rng, toy};
use graphcond::mapping::{mapping_loss_and_grad, mapping_loss_value, support_embeddings_original, MappingMatrix, MappingObjective, SupportTerm};
use graphcond::relay::{ce_loss, forward, loss_and_grad};
use graphcond::{grad_check, BatchMode, RelayConfig, RelayWeights, Tape};

fn relay_fd(cfg: RelayConfig, seed: u64) -> f64 {
    let t = toy(seed);
    let w = RelayWeights::init(&cfg, 3, seed);
    let (_, grads) = loss_and_grad(&t.adj_norm, t.graph.features(), t.graph.labels(), &w, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..w.layers().len() {
        let loss = |m: &graphcond::DenseMatrix<f64>| {
            let mut v = w.clone();
            v.layers_mut()[l] = m.clone();
            ce_loss(&forward(&t.adj_norm, t.graph.features(), &v, &cfg).unwrap().logits, t.graph.labels()).unwrap()
        };
        worst = worst.max(fd_max_rel(loss, &w.layers()[l], &grads.layers[l], 1e-6));
    }
    worst
}

#[test]
fn sgc_relay_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let err = relay_fd(RelayConfig { head_dims: vec![4, 2], ..RelayConfig::sgc(2, 2) }, seed);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn gcn_relay_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let err = relay_fd(RelayConfig::gcn(5, 2), seed);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn mapping_gradient_with_chunked_support() {
    let t = toy(5);
    let mut r = rng(55);
    let mut support = Vec::new();
    for _ in 0..3 {
        let batch = common::random_batch(8, 2, 3, &mut r);
        let h_sup = support_embeddings_original(t.graph.adjacency(), t.graph.features(), &batch, BatchMode::Graph, &t.relay, 2).unwrap();
        support.push(SupportTerm::new(&batch, BatchMode::Graph, h_sup).unwrap());
    }
    let a_prime = t.synthetic.a_prime().unwrap();
    let h_prime = random_matrix(4, t.h.cols(), &mut r);
    let obj = MappingObjective {
        h: &t.h,
        h_prime: &h_prime,
        a_prime: &a_prime,
        x_prime: &t.synthetic.x_prime,
        relay: &t.relay,
        depth: 2,
        beta: 3.0,
        support: &support,
    };
    let g = mapping_loss_and_grad(&t.mapping, &obj).unwrap();
    assert!(g.ind > 0.0);
    assert!((g.total - (g.tra + 3.0 * g.ind)).abs() < 1e-12);
    let err = fd_max_rel(
        |raw| mapping_loss_value(&MappingMatrix { raw: raw.clone(), eps: t.mapping.eps }, &obj).unwrap(),
        &t.mapping.raw,
        &g.grad_raw,
        1e-6,
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn tape_primitives_pass_grad_check() {
    let x = random_matrix(4, 3, &mut rng(9));
    let w = random_matrix(3, 3, &mut rng(10));
    let check = grad_check(
        |tape: &mut Tape<f64>, v| {
            let c = tape.constant(w.clone());
            let prod = tape.matmul(v, c)?;
            let s = tape.sigmoid(prod);
            let soft = tape.row_softmax(s);
            let sp = tape.softplus(v);
            let cos = tape.cosine_columns(soft, sp)?;
            let l2 = tape.row_l2_sum(prod);
            let a = tape.sum(cos);
            tape.add(a, l2)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(check.excluded.is_empty());
    assert!(check.max_rel_error < 1e-5, "{}", check.max_rel_error);
}

#[test]
fn single_precision_gradient_tracks_double() {
    let t = toy(3);
    let cfg = RelayConfig::sgc(2, 2);
    let w = RelayWeights::init(&cfg, 3, 3);
    let (_, g64) = loss_and_grad(&t.adj_norm, t.graph.features(), t.graph.labels(), &w, &cfg).unwrap();
    let (_, g32) = loss_and_grad(&t.adj_norm.cast::<f32>(), &t.graph.features().cast::<f32>(), t.graph.labels(), &w.cast::<f32>(), &cfg).unwrap();
    let diff = g32.layers[0].cast::<f64>().max_abs_diff(&g64.layers[0]).unwrap();
    assert!(diff < 1e-5, "{diff}");
}
