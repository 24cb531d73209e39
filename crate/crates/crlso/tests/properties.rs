//! Property tests for the graph layer and the convexity machinery.

use std::collections::HashSet;

use proptest::prelude::*;

use crlso::graphspace::{relabel, ArchGraph, SearchSpace};
use crlso::icnn::{IcnnParams, IcnnShape};
use ndgrad::CounterRng;

/// Arbitrary small DAG: random node attributes plus a random subset of the
/// forward pairs, in a scrambled labeling.
fn arb_dag(max_nodes: usize) -> impl Strategy<Value = ArchGraph> {
    (2..=max_nodes)
        .prop_flat_map(move |n| {
            let attrs = proptest::collection::vec(0u16..4, n);
            let edge_mask = proptest::collection::vec(any::<bool>(), n * (n - 1) / 2);
            let edge_attrs = proptest::collection::vec(0u16..3, n * (n - 1) / 2);
            let perm_seed = any::<u64>();
            (Just(n), attrs, edge_mask, edge_attrs, perm_seed)
        })
        .prop_map(|(n, attrs, mask, edge_attrs, perm_seed)| {
            let mut edges = Vec::new();
            let mut slot = 0;
            for s in 0..n {
                for d in (s + 1)..n {
                    if mask[slot] {
                        edges.push((s as u16, d as u16, edge_attrs[slot]));
                    }
                    slot += 1;
                }
            }
            let g = ArchGraph::new(n, attrs, edges).expect("forward edges are acyclic");
            // Scramble the labeling so inputs are not already canonical.
            let mut perm: Vec<usize> = (0..n).collect();
            CounterRng::new(perm_seed).shuffle(&mut perm);
            relabel(&g, &perm)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonicalize_is_idempotent(g in arb_dag(5)) {
        let once = g.canonicalize();
        prop_assert_eq!(once.clone(), once.canonicalize());
    }

    #[test]
    fn canonical_edges_are_sorted_forward(g in arb_dag(5)) {
        let c = g.canonicalize();
        prop_assert!(c.edges().iter().all(|&(s, d, _)| s < d));
        let mut sorted = c.edges().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted.as_slice(), c.edges());
    }

    #[test]
    fn canonicalization_is_permutation_invariant(g in arb_dag(5), perm_seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        CounterRng::new(perm_seed).shuffle(&mut perm);
        let relabeled = relabel(&g, &perm);
        prop_assert_eq!(g.canonicalize(), relabeled.canonicalize());
        prop_assert_eq!(g.canonical_key(), relabeled.canonical_key());
    }

    #[test]
    fn enumeration_has_no_duplicates(num_nodes in 2usize..4, vocab in 1usize..4) {
        let space = SearchSpace::operator_on_edge(num_nodes, vocab, None).unwrap();
        let keys: HashSet<String> =
            space.enumerate().unwrap().map(|g| g.canonical_key()).collect();
        prop_assert_eq!(keys.len() as u128, space.count().unwrap());
    }

    #[test]
    fn projected_parameters_stay_convex(seed in any::<u64>(), dim in 1usize..6) {
        let mut rng = CounterRng::new(seed);
        let mut model = IcnnParams::init(
            IcnnShape { input_dim: dim, layers: 3, hidden: 8 },
            true,
            &mut rng,
        ).unwrap();
        // Adversarial perturbation followed by projection.
        let mut slots = Vec::new();
        model.visit_mut("f", &mut slots);
        for (name, t) in slots {
            if name.contains("rec_w") {
                for x in t.data_mut() {
                    *x -= 0.8;
                }
            }
        }
        model.project_nonneg();
        let report = model.verify_convexity(500, &mut rng).unwrap();
        prop_assert!(report.pass, "violation {}", report.max_violation);
    }
}
