//! Property tests for the structural invariants the simulator leans on.

use dfl_core::{
    build_topology, exchange_noise, laplace_from_uniform, mat_mul, mat_pow, noise_difference,
    partition_indices, sinkhorn_knopp, DenseVector, Digraph, LaplaceSpec, PartitionKind,
    PartitionSpec, TopologyKind,
};
use proptest::prelude::*;

/// Random strongly connected digraph: a permutation cycle over all nodes
/// plus arbitrary extra edges.
fn arb_connected_graph(max_n: usize) -> impl Strategy<Value = Digraph> {
    (2..=max_n)
        .prop_flat_map(|n| {
            let perm = Just(()).prop_perturb(move |_, mut rng| {
                let mut p: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = rng.random_range(0..=i);
                    p.swap(i, j);
                }
                p
            });
            let extras = proptest::collection::vec((0..n, 0..n), 0..2 * n);
            (Just(n), perm, extras)
        })
        .prop_map(|(n, perm, extras)| {
            let mut edges: Vec<(usize, usize)> =
                (0..n).map(|i| (perm[i], perm[(i + 1) % n])).collect();
            edges.extend(extras);
            Digraph::new(n, &edges).expect("cycle through all nodes is strongly connected")
        })
}

proptest! {
    #[test]
    fn noise_differences_conserve_on_random_graphs(
        graph in arb_connected_graph(12),
        dim in 1usize..6,
        seed in any::<u64>(),
    ) {
        let spec = LaplaceSpec::new(0.025).unwrap();
        let ledger = exchange_noise(&graph, dim, &spec, seed).unwrap();
        let mut sum = DenseVector::zeros(dim);
        for i in 0..graph.n() {
            sum.axpy(1.0, &noise_difference(&ledger, &graph, i));
        }
        prop_assert!(sum.norm_inf() <= 1e-12 * dim as f64);
    }

    #[test]
    fn sinkhorn_balances_and_preserves_support(graph in arb_connected_graph(10)) {
        let w = sinkhorn_knopp(&graph, 1e-10, 10_000).unwrap();
        prop_assert!(w.max_row_residual() <= 1e-10);
        prop_assert!(w.max_col_residual() <= 1e-10);
        for i in 0..graph.n() {
            for j in 0..graph.n() {
                prop_assert_eq!(w.get(i, j) > 0.0, graph.has_edge(j, i));
            }
        }
    }

    #[test]
    fn matrix_powers_compose(
        graph in arb_connected_graph(8),
        s in 0usize..6,
        t in 0usize..6,
    ) {
        let w = sinkhorn_knopp(&graph, 1e-10, 10_000).unwrap();
        let lhs = mat_pow(w.matrix(), s + t).unwrap();
        let rhs = mat_mul(&mat_pow(w.matrix(), s).unwrap(), &mat_pow(w.matrix(), t).unwrap()).unwrap();
        prop_assert!(lhs.sub(&rhs).max_abs_entry() <= 1e-12);
    }

    #[test]
    fn laplace_transform_is_odd_and_monotone(
        u in -0.499f64..0.499,
        v in -0.499f64..0.499,
        scale in 0.01f64..2.0,
    ) {
        let x = laplace_from_uniform(u, scale);
        prop_assert!((laplace_from_uniform(-u, scale) + x).abs() <= 1e-15 * x.abs().max(1.0));
        if u < v {
            prop_assert!(x <= laplace_from_uniform(v, scale));
        }
    }

    #[test]
    fn partitions_cover_every_sample_exactly_once(
        n in 10usize..200,
        n_classes in 2usize..5,
        n_clients in 2usize..6,
        seed in any::<u64>(),
        kind_pick in 0usize..4,
    ) {
        let labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
        let kind = match kind_pick {
            0 => PartitionKind::Iid,
            1 => PartitionKind::QuantitySkew { alpha: 0.5 },
            2 => PartitionKind::LabelSkewDirichlet { alpha: 0.5 },
            _ => PartitionKind::LabelSkewCount { k: n_classes.min(2) },
        };
        if matches!(kind, PartitionKind::LabelSkewCount { k } if n_clients * k < n_classes) {
            return Ok(());
        }
        let spec = PartitionSpec { kind, n_clients };
        let Ok(shards) = partition_indices(&labels, n_classes, &spec, seed) else {
            // Skew draws may legitimately fail to fill every client on tiny
            // inputs; rejection is a valid outcome, silence is not.
            return Ok(());
        };
        prop_assert_eq!(shards.len(), n_clients);
        let mut seen = vec![0usize; n];
        for shard in &shards {
            prop_assert!(!shard.is_empty());
            for &i in shard {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn ring_and_full_are_strongly_connected(n in 2usize..12) {
        for kind in [TopologyKind::Full, TopologyKind::Ring] {
            let g = build_topology(&kind, n).unwrap();
            prop_assert!(dfl_core::is_strongly_connected(&g));
        }
    }
}
