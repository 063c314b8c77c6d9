use super::*;

fn session(user: &str, qs: &[&str]) -> SessionRecord {
    SessionRecord {
        user_id: user.into(),
        query_text: qs.iter().map(|q| q.to_string()).collect(),
    }
}

fn click(user: &str, q: &str, ad: &str, clicked: bool) -> ClickRecord {
    ClickRecord {
        user_id: user.into(),
        query_text: q.into(),
        ad_id: ad.into(),
        clicked,
        converted: false,
    }
}

fn session_example() -> HeteroGraph {
    let logs = InteractionLogs {
        clicks: vec![],
        sessions: vec![session("u1", &["q1", "q2", "q3"])],
    };
    build_graph(&logs, &BuildOptions::default()).unwrap()
}

#[test]
fn empty_logs_give_empty_graph() {
    let g = build_graph(&InteractionLogs::default(), &BuildOptions::default()).unwrap();
    assert_eq!(g.total_nodes(), 0);
    assert!(g.edges().is_empty());
    let s = g.degree_stats();
    assert_eq!(s.total_edges, 0);
    assert!(s.nodes.values().all(|&n| n == 0));
    assert_eq!(HeteroGraph::from_text(&g.to_text(), "mem").unwrap(), g);
}

#[test]
fn one_session_makes_all_pairs() {
    let g = session_example();
    let qq: Vec<_> = g.edges().iter().filter(|e| e.etype == EdgeType::QqCooccur).collect();
    assert_eq!(qq.len(), 3);
    assert!(qq.iter().all(|e| e.weight == 1.0));
    let u = g.lookup(NodeKind::User, "u1").unwrap();
    let uq = g.neighbors(u, Some(EdgeType::UqSession)).unwrap();
    assert_eq!(uq.len(), 3);
    assert!(uq.iter().all(|n| n.weight == 1.0));
    let q1 = g.query_node("q1").unwrap();
    let ns: Vec<_> = g
        .neighbors(q1, Some(EdgeType::QqCooccur))
        .unwrap()
        .iter()
        .map(|n| g.label(n.node).unwrap().to_string())
        .collect();
    assert_eq!(ns, vec!["q2", "q3"]);
    assert!(g.neighbors(u, Some(EdgeType::QaClick)).unwrap().is_empty());
    assert_eq!(g.degree_stats().edges[&EdgeType::QqCooccur], 3);
    let s = g.degree_stats();
    assert_eq!(s.edges.values().sum::<usize>(), s.total_edges);
}

#[test]
fn click_counts_become_weights() {
    let logs = InteractionLogs {
        clicks: vec![
            click("u", "q1", "a1", true),
            click("u", "q1", "a1", true),
            click("u", "q1", "a2", true),
            click("u", "q1", "a3", false),
        ],
        sessions: vec![],
    };
    let g = build_graph(&logs, &BuildOptions::default()).unwrap();
    let q = g.query_node("q1").unwrap();
    let w: Vec<f64> = g.neighbors(q, Some(EdgeType::QaClick)).unwrap().iter().map(|n| n.weight).collect();
    assert_eq!(w, vec![2.0, 1.0]);
    let opts = BuildOptions {
        include_impressions: true,
        ..Default::default()
    };
    let g = build_graph(&logs, &opts).unwrap();
    let w: Vec<f64> = g.neighbors(q, Some(EdgeType::QaClick)).unwrap().iter().map(|n| n.weight).collect();
    assert_eq!(w, vec![2.0, 1.0, IMPRESSION_WEIGHT]);
}

#[test]
fn dangling_ads_and_empty_queries_are_reported() {
    let logs = InteractionLogs {
        clicks: vec![click("u", "q", "zz", true), click("u", "!!", "a1", true)],
        sessions: vec![],
    };
    let opts = BuildOptions {
        ad_catalog: Some(["a1".to_string()].into()),
        ..Default::default()
    };
    match build_graph(&logs, &opts) {
        Err(Error::Build(list)) => {
            assert_eq!(list.len(), 2);
            assert!(list.iter().any(|m| m.contains("zz")));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn repeated_query_in_session_counts_once() {
    let logs = InteractionLogs {
        clicks: vec![],
        sessions: vec![session("u", &["A b", "a  B", "c"]), session("u", &["c", "a b"])],
    };
    let g = build_graph(&logs, &BuildOptions::default()).unwrap();
    assert_eq!(g.node_count(NodeKind::Query), 2);
    let ab = g.query_node("a b").unwrap();
    let n = g.neighbors(ab, None).unwrap();
    assert_eq!(n.len(), 2);
    assert!(n.iter().all(|x| x.weight == 2.0));
}

#[test]
fn unknown_node_is_a_lookup_error() {
    let g = session_example();
    assert!(matches!(g.neighbors(NodeRef::ad(0), None), Err(Error::Lookup(_))));
}

#[test]
fn file_round_trip_and_truncation() {
    let g = session_example();
    let text = g.to_text();
    assert_eq!(HeteroGraph::from_text(&text, "mem").unwrap(), g);
    let cut: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
    assert!(matches!(HeteroGraph::from_text(&cut, "mem"), Err(Error::Parse { .. })));
    let bad = text.replace("QQ_COOCCUR\tQUERY:0\tQUERY:1", "QQ_COOCCUR\tUSER:0\tQUERY:1");
    match HeteroGraph::from_text(&bad, "mem") {
        Err(Error::Parse { line, .. }) => assert!(line > 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn log_files_round_trip() {
    let logs = InteractionLogs {
        clicks: vec![click("u1", "red shoe", "a1", true), click("u2", "x", "a2", false)],
        sessions: vec![session("u1", &["red shoe", "blue"])],
    };
    let dir = tempfile::tempdir().unwrap();
    let (c, s) = (dir.path().join("clicks.tsv"), dir.path().join("sessions.jsonl"));
    logs.save(&c, &s).unwrap();
    assert_eq!(InteractionLogs::load(&c, &s).unwrap(), logs);
}
