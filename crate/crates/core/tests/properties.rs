mod common;

use common::{random_batch, random_graph, rng};
use graphcond::calibration::{label_propagate, PropagationConfig};
use graphcond::condense::predefine_labels;
use graphcond::mapping::{normalize_mapping, sparsify};
use graphcond::sparse::propagate_hops;
use graphcond::{CsrMatrix, DenseMatrix};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize, scale: f64) -> impl Strategy<Value = DenseMatrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(-scale..scale, r * c).prop_map(move |v| DenseMatrix::from_vec(r, c, v).unwrap())
    })
}

fn symmetric_edges(n: usize) -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    prop::collection::vec((0..n, 0..n, 0.1f64..2.0), 0..3 * n).prop_map(|raw| {
        let mut edges = Vec::new();
        for (i, j, w) in raw {
            if i != j && !edges.iter().any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i)) {
                edges.push((i, j, w));
            }
        }
        edges.iter().flat_map(|&(i, j, w)| [(i, j, w), (j, i, w)]).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn normalized_mapping_rows_are_subprobabilities(raw in matrix(8, 8, 50.0), eps in 0.0f64..0.01) {
        let m = normalize_mapping(&raw, eps);
        for i in 0..m.rows() {
            prop_assert!(m.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(m.row(i).iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sparsify_is_idempotent(a in matrix(6, 6, 1.0), raw in matrix(6, 6, 5.0), mu in 0.0f64..0.9, delta in 0.0f64..0.5) {
        let a = a.map(f64::abs);
        let m_hat = normalize_mapping(&raw, 1e-5);
        if let Ok((a1, m1)) = sparsify(&a, &m_hat, mu, delta) {
            let (a2, m2) = sparsify(&a1.to_dense(), &m1.matrix().to_dense(), mu, delta).unwrap();
            prop_assert_eq!(a1, a2);
            prop_assert_eq!(m1, m2);
        }
    }

    #[test]
    fn normalized_adjacency_is_symmetric((n, edges) in (1usize..12).prop_flat_map(|n| (Just(n), symmetric_edges(n)))) {
        let norm = CsrMatrix::from_triplets(n, n, &edges).unwrap().normalize_with_self_loops().unwrap();
        let d = norm.to_dense();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((d[(i, j)] - d[(j, i)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn propagation_commutes_with_relabeling(seed in any::<u64>(), depth in 0usize..4) {
        let mut r = rng(seed);
        let g = random_graph(9, 3, 2, 0.35, &mut r);
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..9).collect();
            rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut r);
            p
        };
        let adj = g.adjacency();
        let permuted: Vec<_> = adj.iter().map(|(i, j, w)| (perm[i], perm[j], w)).collect();
        let adj_p = CsrMatrix::from_triplets(9, 9, &permuted).unwrap();
        let mut x_p = DenseMatrix::zeros(9, 3);
        for i in 0..9 {
            x_p.row_mut(perm[i]).copy_from_slice(g.features().row(i));
        }
        let a = propagate_hops(&adj.normalize_with_self_loops().unwrap(), g.features(), depth).unwrap();
        let b = propagate_hops(&adj_p.normalize_with_self_loops().unwrap(), &x_p, depth).unwrap();
        for i in 0..9 {
            for k in 0..3 {
                prop_assert!((a[(i, k)] - b[(perm[i], k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_propagation_rows_are_distributions_or_empty(seed in any::<u64>(), alpha in 0.0f64..0.99, iterations in 1usize..20) {
        let mut r = rng(seed);
        let g = random_graph(7, 2, 3, 0.3, &mut r);
        let batch = random_batch(7, 4, 2, &mut r);
        let adj = g.adjacency().assemble_block(&batch.a, batch.a_tilde.as_ref()).unwrap().normalize_with_self_loops().unwrap();
        let seeds: Vec<usize> = (0..7).map(|i| i % 3).collect();
        let cfg = PropagationConfig { iterations, alpha, ..PropagationConfig::default() };
        let soft = label_propagate(&adj, &seeds, 3, &cfg).unwrap();
        prop_assert_eq!(soft.shape(), (4, 3));
        for i in 0..4 {
            let total: f64 = soft.row(i).iter().sum();
            prop_assert!(soft.row(i).iter().all(|&v| v >= 0.0));
            prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predefined_labels_cover_classes_and_sum(labels in prop::collection::vec(0usize..5, 1..200), extra in 0usize..40) {
        let present = (0..5).filter(|c| labels.contains(c)).count();
        let n_prime = 5 + extra;
        let y = predefine_labels(&labels, 5, n_prime).unwrap();
        prop_assert_eq!(y.len(), n_prime);
        prop_assert!(y.windows(2).all(|w| w[0] <= w[1]));
        for c in 0..5 {
            let count = y.iter().filter(|&&v| v == c).count();
            if labels.contains(&c) {
                prop_assert!(count >= 1);
                let share = labels.iter().filter(|&&v| v == c).count() as f64 / labels.len() as f64;
                prop_assert!((count as f64 - share * n_prime as f64).abs() <= 1.0 + present as f64);
            } else {
                prop_assert_eq!(count, 0);
            }
        }
    }
}
