mod common;

use adgt::adgraph::EdgeType;
use adgt::gatprop::{init_gat, Activation, GatConfig};
use adgt::numkit::{SeededRng, Tensor};
use common::gat::{max_diff, random_case, Case};
use common::random_tensor;
use proptest::prelude::*;

#[test]
fn one_layer_matches_oracle_on_100_graphs() {
    for seed in 0..100 {
        let c = random_case(seed, 1);
        let (got, alpha) = c.run();
        let (want, want_alpha) = c.oracle();
        let d = max_diff(&got, &want);
        assert!(d < 1e-9, "graph {seed}: max abs diff {d:e}");
        assert!(max_diff(&alpha, &want_alpha) < 1e-12, "graph {seed}: attention differs");
        for row in &alpha {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn stacked_layers_match_oracle() {
    for seed in 0..100 {
        let mut c = random_case(seed, 2);
        c.cfg.d_out = c.cfg.d_in;
        c.store = init_gat(&c.cfg, seed).unwrap();
        let mut rng = SeededRng::new(seed);
        for (_, t) in c.store.iter_mut() {
            for v in t.data_mut() {
                *v = rng.gaussian();
            }
        }
        let d = max_diff(&c.run().0, &c.oracle().0);
        assert!(d < 1e-9, "graph {seed}: max abs diff {d:e}");
    }
}

#[test]
fn nodes_beyond_l_hops_do_not_matter() {
    // path 0-1-2-3-4
    let edges: Vec<_> = (0..4).map(|i| (i, i + 1, EdgeType::QqCooccur, 1.0)).collect();
    for layers in 1..=3 {
        let cfg = GatConfig {
            n_layers: layers,
            ..GatConfig::new(3)
        };
        let store = init_gat(&cfg, 4).unwrap();
        let mut rng = SeededRng::new(8);
        let h: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.gaussian()).collect()).collect();
        let base = Case { n: 5, edges: edges.clone(), cfg: cfg.clone(), store: store.clone(), h: h.clone() }.run().0;
        for far in 0..5 {
            let mut h2 = h.clone();
            h2[far][1] += 3.0;
            let moved = Case { n: 5, edges: edges.clone(), cfg: cfg.clone(), store: store.clone(), h: h2 }.run().0;
            let changed = base[0].iter().zip(&moved[0]).any(|(a, b)| (a - b).abs() > 1e-12);
            assert_eq!(changed, far <= layers, "layers {layers}, perturbed node {far}");
        }
    }
}

fn permuted(c: &Case, perm: &[usize]) -> Case {
    let mut h = vec![vec![]; c.n];
    for (i, &p) in perm.iter().enumerate() {
        h[p] = c.h[i].clone();
    }
    Case {
        n: c.n,
        edges: c.edges.iter().map(|&(a, b, t, w)| (perm[a], perm[b], t, w)).collect(),
        cfg: c.cfg.clone(),
        store: c.store.clone(),
        h,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_permutes_outputs(seed in 0u64..10_000, shift in 1usize..6) {
        let mut c = random_case(seed, 2);
        c.cfg.d_out = c.cfg.d_in;
        c.store = init_gat(&c.cfg, seed).unwrap();
        let perm: Vec<usize> = (0..c.n).map(|i| (i + shift) % c.n).collect();
        let (out, _) = c.run();
        let (pout, _) = permuted(&c, &perm).run();
        for i in 0..c.n {
            for (a, b) in out[i].iter().zip(&pout[perm[i]]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_rows_are_stochastic(seed in 0u64..10_000) {
        let c = random_case(seed, 1);
        for row in c.run().1 {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&a| a > 0.0 && a <= 1.0));
        }
    }

    #[test]
    fn identity_setup_leaves_isolated_nodes_unchanged(n in 1usize..6, seed in 0u64..1000) {
        let cfg = GatConfig { activation: Activation::Identity, ..GatConfig::new(3) };
        let mut store = init_gat(&cfg, seed).unwrap();
        for k in 0..cfg.n_layers {
            store.insert(format!("gat.layer{k}.w"), Tensor::identity(3));
        }
        let mut rng = SeededRng::new(seed);
        let h: Vec<Vec<f64>> = (0..n).map(|_| random_tensor(vec![3], &mut rng, 1.0).into_data()).collect();
        let c = Case { n, edges: vec![], cfg, store, h: h.clone() };
        prop_assert!(max_diff(&c.run().0, &h) < 1e-15);
    }
}
