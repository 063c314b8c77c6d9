use adgt::adgraph::{build_graph, BuildOptions, ClickRecord, EdgeType, HeteroGraph, InteractionLogs, NodeKind, NodeRef, SessionRecord};
use adgt::numkit::SeededRng;
use proptest::prelude::*;

const WORDS: [&str; 6] = ["miko", "taro", "Vasu", "pell", "orat", "nel"];

fn random_logs(rng: &mut SeededRng) -> InteractionLogs {
    let query = |rng: &mut SeededRng| {
        let n = 1 + rng.below(2);
        (0..n).map(|_| *rng.choose(&WORDS).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let clicks = (0..rng.below(30))
        .map(|_| {
            let clicked = rng.bernoulli(0.5);
            ClickRecord {
                user_id: format!("u{}", rng.below(4)),
                query_text: query(rng),
                ad_id: format!("a{}", rng.below(5)),
                clicked,
                converted: clicked && rng.bernoulli(0.3),
            }
        })
        .collect();
    let sessions = (0..rng.below(12))
        .map(|_| SessionRecord {
            user_id: format!("u{}", rng.below(4)),
            query_text: (0..1 + rng.below(4)).map(|_| query(rng)).collect(),
        })
        .collect();
    InteractionLogs { clicks, sessions }
}

fn build(logs: &InteractionLogs, impressions: bool) -> HeteroGraph {
    let opts = BuildOptions { include_impressions: impressions, ..Default::default() };
    build_graph(logs, &opts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn record_order_does_not_matter(seed in 0u64..100_000, impressions: bool) {
        let mut rng = SeededRng::new(seed);
        let logs = random_logs(&mut rng);
        let mut shuffled = logs.clone();
        rng.shuffle(&mut shuffled.clicks);
        rng.shuffle(&mut shuffled.sessions);
        for s in &mut shuffled.sessions {
            rng.shuffle(&mut s.query_text);
        }
        let (a, b) = (build(&logs, impressions), build(&shuffled, impressions));
        prop_assert_eq!(a.to_text(), b.to_text());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn edges_respect_their_endpoint_kinds(seed in 0u64..100_000, impressions: bool) {
        let g = build(&random_logs(&mut SeededRng::new(seed)), impressions);
        for e in g.edges() {
            prop_assert_eq!((e.src.kind, e.dst.kind), e.etype.endpoints());
            prop_assert!(e.weight > 0.0);
            if e.etype == EdgeType::QqCooccur {
                prop_assert!(e.src.id < e.dst.id);
            }
        }
    }

    #[test]
    fn cooccurrence_is_symmetric(seed in 0u64..100_000) {
        let g = build(&random_logs(&mut SeededRng::new(seed)), false);
        for i in 0..g.node_count(NodeKind::Query) {
            let qi = NodeRef::query(i);
            for n in g.neighbors(qi, Some(EdgeType::QqCooccur)).unwrap() {
                let back = g.neighbors(n.node, Some(EdgeType::QqCooccur)).unwrap();
                let hits: Vec<_> = back.iter().filter(|m| m.node == qi).collect();
                prop_assert_eq!(hits.len(), 1);
                prop_assert_eq!(hits[0].weight, n.weight);
            }
        }
    }

    #[test]
    fn graph_text_round_trips(seed in 0u64..100_000, impressions: bool) {
        let g = build(&random_logs(&mut SeededRng::new(seed)), impressions);
        let back = HeteroGraph::from_text(&g.to_text(), "mem").unwrap();
        prop_assert_eq!(back.to_text(), g.to_text());
        prop_assert_eq!(back, g);
    }
}

#[test]
fn query_lookup_is_case_folded() {
    let logs = InteractionLogs {
        clicks: vec![],
        sessions: vec![SessionRecord { user_id: "u0".into(), query_text: vec!["Vasu Pell".into()] }],
    };
    let g = build(&logs, false);
    assert_eq!(g.query_node("vasu PELL"), g.query_node("Vasu Pell"));
    assert!(g.query_node("vasu").is_none());
}
