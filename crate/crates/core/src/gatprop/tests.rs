use super::*;

fn cfg(d: usize, layers: usize) -> GatConfig {
    GatConfig {
        n_layers: layers,
        ..GatConfig::new(d)
    }
}

fn set(store: &mut ParamStore, name: &str, v: &[f64]) {
    store.get_mut(name).unwrap().data_mut().copy_from_slice(v);
}

fn run(g: &PropGraph, c: &GatConfig, store: &ParamStore, h: &Tensor) -> Tensor {
    let plan = Plan::full(g, c).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let out = propagate(&mut tape, store, c, &plan, x).unwrap();
    tape.value(out.embeddings).clone()
}

#[test]
fn zero_layers_is_a_config_error() {
    assert!(matches!(init_gat(&cfg(4, 0), 1), Err(Error::Config(_))));
}

#[test]
fn single_neighbor_gets_all_weight() {
    let c = GatConfig {
        include_self: false,
        ..cfg(2, 1)
    };
    let store = init_gat(&c, 3).unwrap();
    let a = attention_coefficients(&[0.3, -2.0], &[(&[5.0, 1.0], EdgeType::QaClick, 4.0)], &store, &c, 0).unwrap();
    assert_eq!(a, vec![1.0]);
    assert!(matches!(
        attention_coefficients(&[0.3, -2.0], &[], &store, &c, 0),
        Err(Error::Domain(_))
    ));
}

#[test]
fn identical_neighbors_are_uniform() {
    let c = GatConfig {
        include_self: false,
        ..cfg(3, 1)
    };
    let store = init_gat(&c, 5).unwrap();
    let h = [0.1, 0.2, 0.3];
    let nb = [(&h[..], EdgeType::QqCooccur, 2.0); 4];
    let a = attention_coefficients(&[1.0, 0.0, -1.0], &nb, &store, &c, 0).unwrap();
    for v in a {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn hand_case_with_unit_weight_matrix() {
    let c = GatConfig {
        use_edge_weights: false,
        ..cfg(2, 1)
    };
    let mut store = init_gat(&c, 1).unwrap();
    set(&mut store, "gat.layer0.w", &[1.0, 0.0, 0.0, 1.0]);
    set(&mut store, "gat.layer0.a", &[1.0, 0.0, 0.0, 0.0]);
    let hi = [-0.7, 0.4];
    let (h1, h2) = ([2.0, 0.0], [-1.0, 3.0]);
    let nb = [(&h1[..], EdgeType::QaClick, 1.0), (&h2[..], EdgeType::QaClick, 1.0)];
    // every logit equals LeakyReLU(h_i[0]), so the softmax is flat
    let a = attention_coefficients(&hi, &nb, &store, &c, 0).unwrap();
    for v in &a {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    // sender term only: logits LeakyReLU(h_j[0]) = [-0.14, 2, -0.2]
    set(&mut store, "gat.layer0.a", &[0.0, 0.0, 1.0, 0.0]);
    let a = attention_coefficients(&hi, &nb, &store, &c, 0).unwrap();
    let z = (-0.14f64).exp() + 2f64.exp() + (-0.2f64).exp();
    let want = [(-0.14f64).exp() / z, 2f64.exp() / z, (-0.2f64).exp() / z];
    for (x, y) in a.iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn isolated_nodes_pass_through() {
    let c = GatConfig {
        activation: Activation::Identity,
        ..cfg(3, 2)
    };
    let mut store = init_gat(&c, 2).unwrap();
    for k in 0..2 {
        set(&mut store, &format!("gat.layer{k}.w"), Tensor::identity(3).data());
    }
    let g = PropGraph::from_edges(4, &[]).unwrap();
    let h = Tensor::matrix(4, 3, (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
    assert_eq!(run(&g, &c, &store, &h), h);
}

#[test]
fn symmetric_pair_stays_symmetric() {
    let c = cfg(2, 2);
    let store = init_gat(&c, 8).unwrap();
    let g = PropGraph::from_edges(2, &[(0, 1, EdgeType::QqCooccur, 3.0)]).unwrap();
    let h = Tensor::matrix(2, 2, vec![0.5, -1.0, 0.5, -1.0]).unwrap();
    let out = run(&g, &c, &store, &h);
    assert_eq!(out.row(0), out.row(1));
}

#[test]
fn two_layers_reach_two_hops_and_one_does_not() {
    // path q0 – a – u on rows 0 – 1 – 2
    let g = PropGraph::from_edges(
        3,
        &[(0, 1, EdgeType::QaClick, 1.0), (1, 2, EdgeType::UqSession, 1.0)],
    )
    .unwrap();
    let h = Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
    let mut h2 = h.clone();
    h2.data_mut()[4] += 1.0;
    for (layers, moves) in [(2, true), (1, false)] {
        let c = cfg(2, layers);
        let store = init_gat(&c, 4).unwrap();
        let a = run(&g, &c, &store, &h);
        let b = run(&g, &c, &store, &h2);
        assert_eq!(a.row(0) != b.row(0), moves, "{layers} layers");
    }
}

#[test]
fn restricted_plan_matches_full_propagation() {
    let edges = [
        (0, 1, EdgeType::QqCooccur, 1.0),
        (1, 2, EdgeType::QaClick, 2.0),
        (2, 3, EdgeType::UqSession, 1.0),
        (3, 4, EdgeType::UqSession, 5.0),
        (0, 5, EdgeType::QaClick, 1.0),
    ];
    let g = PropGraph::from_edges(6, &edges).unwrap();
    let c = cfg(3, 2);
    let mut store = init_gat(&c, 6).unwrap();
    set(&mut store, "gat.layer0.edge_gain", &[0.3, -0.2, 0.5, 0.1]);
    let h = Tensor::matrix(6, 3, (0..18).map(|v| ((v * 7) % 5) as f64 * 0.3 - 0.6).collect()).unwrap();
    let full = run(&g, &c, &store, &h);

    let plan = Plan::new(&g, &[1], &c, &HashSet::new()).unwrap();
    assert_eq!(plan.inputs(), &[0, 1, 2, 3, 5]);
    let rows: Vec<f64> = plan.inputs().iter().flat_map(|&r| h.row(r).to_vec()).collect();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(plan.inputs().len(), 3, rows).unwrap());
    let out = propagate(&mut tape, &store, &c, &plan, x).unwrap();
    let p = plan.output_position(1).unwrap();
    assert_eq!(tape.value(out.embeddings).row(p), full.row(1));
    for a in &out.attention {
        let v = tape.value(*a).data();
        assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
    }
}

#[test]
fn masked_edges_and_receivers() {
    let mut g = PropGraph::from_edges(3, &[(0, 1, EdgeType::QaClick, 1.0), (0, 2, EdgeType::QaClick, 1.0)]).unwrap();
    let c = cfg(2, 1);
    let masked: HashSet<_> = [(0, 1)].into();
    let plan = Plan::new(&g, &[0], &c, &masked).unwrap();
    assert_eq!(plan.inputs(), &[0, 2]);
    let r = g
        .add_receiver(&[InEdge { src: 1, slot: EdgeType::QqCooccur.index(), weight: 1.0 }])
        .unwrap();
    assert_eq!(r, 3);
    assert_eq!(g.rows(), 4);
    // nothing sends from a receiver-only row
    let plan = Plan::new(&g, &[1], &c, &HashSet::new()).unwrap();
    assert_eq!(plan.inputs(), &[0, 1]);
    assert!(g.add_receiver(&[InEdge { src: 4, slot: 0, weight: 1.0 }]).is_err());
    let chained = g.add_receiver(&[InEdge { src: 3, slot: 0, weight: 1.0 }]).unwrap();
    let plan = Plan::new(&g, &[chained], &c, &HashSet::new()).unwrap();
    assert_eq!(plan.inputs(), &[3, 4]);
    g.truncate_receivers();
    assert_eq!(g.rows(), 3);
}

#[test]
fn hetero_graph_rows_follow_kind_order() {
    use crate::adgraph::{build_graph, BuildOptions, ClickRecord, InteractionLogs};
    let logs = InteractionLogs {
        clicks: vec![ClickRecord {
            user_id: "u".into(),
            query_text: "shoe".into(),
            ad_id: "a".into(),
            clicked: true,
            converted: false,
        }],
        sessions: vec![],
    };
    let hg = build_graph(&logs, &BuildOptions::default()).unwrap();
    let g = PropGraph::from_hetero(&hg);
    assert_eq!(g.rows(), 3);
    assert_eq!(g.row_of(NodeRef::ad(0)), 1);
    assert_eq!(g.in_edges(0), &[InEdge { src: 1, slot: 0, weight: 1.0 }]);
    assert!(g.in_edges(2).is_empty());
}

#[test]
fn propagate_from_uses_the_offset_layer() {
    let g = PropGraph::from_edges(3, &[(0, 1, EdgeType::QqCooccur, 2.0), (1, 2, EdgeType::QaClick, 1.0)]).unwrap();
    let two = cfg(2, 2);
    let one = cfg(2, 1);
    let store = init_gat(&two, 9).unwrap();
    let mut last = ParamStore::new();
    for p in ["w", "a", "edge_gain"] {
        last.insert(format!("gat.layer0.{p}"), store.get(&format!("gat.layer1.{p}")).unwrap().clone());
    }
    let h = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.7]).unwrap();
    let plan = Plan::full(&g, &one).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let out = propagate_from(&mut tape, &store, &two, &plan, x, 1).unwrap();
    assert_eq!(tape.value(out.embeddings), &run(&g, &one, &last, &h));
    assert!(matches!(
        propagate_from(&mut tape, &store, &two, &plan, x, 2),
        Err(Error::Config(_))
    ));
}
