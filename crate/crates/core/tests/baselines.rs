mod common;

use common::{random_batch, random_graph, rng};
use graphcond::baselines::{class_counts, coreset, CoresetMethod};
use graphcond::dense::DenseMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_method_respects_class_counts(seed in any::<u64>(), k0 in 0usize..6, k1 in 0usize..6, k2 in 0usize..6) {
        let g = random_graph(24, 4, 3, 0.2, &mut rng(seed));
        let counts = [k0, k1, k2];
        let labels = g.dense_labels().unwrap();
        for method in CoresetMethod::ALL {
            let r = coreset(&g, method, &counts, Some(g.features()), seed).unwrap();
            prop_assert_eq!(r.method, method);
            prop_assert!(r.selected.windows(2).all(|w| w[0] < w[1]));
            let picked: Vec<usize> = r.selected.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(class_counts(&picked, 3), counts.to_vec());
            prop_assert_eq!(r.graph.num_nodes(), r.selected.len());
            for (p, &i) in r.selected.iter().enumerate() {
                prop_assert_eq!(r.graph.features().row(p), g.features().row(i));
            }
        }
    }
}

#[test]
fn induced_graph_keeps_only_edges_among_selected() {
    let g = random_graph(20, 2, 2, 0.3, &mut rng(1));
    let r = coreset(&g, CoresetMethod::Degree, &[4, 4], None, 0).unwrap();
    let sub = r.graph.adjacency();
    for (a, &i) in r.selected.iter().enumerate() {
        for (b, &j) in r.selected.iter().enumerate() {
            assert_eq!(sub.get(a, b), g.adjacency().get(i, j));
        }
    }
}

#[test]
fn random_selection_depends_only_on_the_seed() {
    let g = random_graph(30, 2, 3, 0.2, &mut rng(2));
    let a = coreset(&g, CoresetMethod::Random, &[3, 3, 3], None, 7).unwrap();
    let b = coreset(&g, CoresetMethod::Random, &[3, 3, 3], None, 7).unwrap();
    assert_eq!(a.selected, b.selected);
    let differs = (8..20).any(|s| coreset(&g, CoresetMethod::Random, &[3, 3, 3], None, s).unwrap().selected != a.selected);
    assert!(differs);
}

#[test]
fn embedding_methods_require_embeddings() {
    let g = random_graph(10, 2, 2, 0.3, &mut rng(3));
    for method in [CoresetMethod::Herding, CoresetMethod::KCenter] {
        assert!(method.needs_embeddings());
        assert!(coreset(&g, method, &[1, 1], None, 0).is_err());
        assert!(coreset(&g, method, &[1, 1], Some(&DenseMatrix::zeros(9, 2)), 0).is_err());
    }
}

#[test]
fn oversized_requests_fail() {
    let g = random_graph(10, 2, 2, 0.3, &mut rng(4));
    assert!(coreset(&g, CoresetMethod::Random, &[6, 1], None, 0).is_err());
}

#[test]
fn herding_tracks_the_class_mean() {
    let emb = DenseMatrix::from_rows(&[[0.0], [10.0], [4.0], [6.0], [100.0]]);
    let g = graphcond::SparseGraph::from_edges(5, &[], emb.clone(), vec![Some(0); 4].into_iter().chain([Some(1)]).collect(), 2).unwrap();
    let r = coreset(&g, CoresetMethod::Herding, &[2, 0], Some(&emb), 0).unwrap();
    assert_eq!(r.selected, vec![2, 3]);
    let k = coreset(&g, CoresetMethod::KCenter, &[2, 0], Some(&emb), 0).unwrap();
    assert_eq!(k.selected, vec![1, 2]);
}

#[test]
fn restricted_batch_links_only_selected_nodes() {
    let mut r = rng(5);
    let g = random_graph(15, 3, 3, 0.3, &mut r);
    let batch = random_batch(15, 4, 3, &mut r);
    let c = coreset(&g, CoresetMethod::Random, &[2, 2, 2], None, 1).unwrap();
    let restricted = c.restrict_batch(&batch).unwrap();
    assert_eq!(restricted.a.cols(), 6);
    for i in 0..4 {
        for (p, &j) in c.selected.iter().enumerate() {
            assert_eq!(restricted.a.get(i, p), batch.a.get(i, j));
        }
    }
    assert_eq!(restricted.x, batch.x);
}

#[test]
fn method_names_round_trip() {
    for m in CoresetMethod::ALL {
        assert_eq!(m.to_string().parse::<CoresetMethod>().unwrap(), m);
    }
    assert!("kmeans".parse::<CoresetMethod>().is_err());
}
