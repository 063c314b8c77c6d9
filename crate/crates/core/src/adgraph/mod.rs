//! Heterogeneous query/ad/user graph built from interaction logs.

mod logs;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use logs::{ClickRecord, InteractionLogs, SessionRecord};

use crate::error::{Error, Result};
use crate::textpipe::tokenize;

/// Weight an unclicked impression adds when impressions are included.
pub const IMPRESSION_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Query,
    Ad,
    User,
}

impl NodeKind {
    pub const ALL: [NodeKind; 3] = [NodeKind::Query, NodeKind::Ad, NodeKind::User];

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Query => "QUERY",
            NodeKind::Ad => "AD",
            NodeKind::User => "USER",
        })
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "QUERY" => Ok(NodeKind::Query),
            "AD" => Ok(NodeKind::Ad),
            "USER" => Ok(NodeKind::User),
            _ => Err(format!("unknown node kind {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub id: usize,
}

impl NodeRef {
    pub fn query(id: usize) -> Self {
        Self { kind: NodeKind::Query, id }
    }

    pub fn ad(id: usize) -> Self {
        Self { kind: NodeKind::Ad, id }
    }

    pub fn user(id: usize) -> Self {
        Self { kind: NodeKind::User, id }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.id)
    }
}

impl FromStr for NodeRef {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (k, id) = s.split_once(':').ok_or_else(|| format!("bad node reference {s:?}"))?;
        let id = id.parse().map_err(|_| format!("bad node id in {s:?}"))?;
        Ok(NodeRef { kind: k.parse()?, id })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    QaClick,
    UqSession,
    QqCooccur,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::QaClick, EdgeType::UqSession, EdgeType::QqCooccur];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Endpoint kinds in stored orientation.
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        match self {
            EdgeType::QaClick => (NodeKind::Query, NodeKind::Ad),
            EdgeType::UqSession => (NodeKind::User, NodeKind::Query),
            EdgeType::QqCooccur => (NodeKind::Query, NodeKind::Query),
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeType::QaClick => "QA_CLICK",
            EdgeType::UqSession => "UQ_SESSION",
            EdgeType::QqCooccur => "QQ_COOCCUR",
        })
    }
}

impl FromStr for EdgeType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "QA_CLICK" => Ok(EdgeType::QaClick),
            "UQ_SESSION" => Ok(EdgeType::UqSession),
            "QQ_COOCCUR" => Ok(EdgeType::QqCooccur),
            _ => Err(format!("unknown edge type {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TypedEdge {
    pub src: NodeRef,
    pub dst: NodeRef,
    pub etype: EdgeType,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub node: NodeRef,
    pub etype: EdgeType,
    pub weight: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    /// Known ad ids. When set, every listed ad becomes a node and clicks
    /// on any other ad are dangling.
    pub ad_catalog: Option<BTreeSet<String>>,
    /// Unclicked impressions add [`IMPRESSION_WEIGHT`] to their QA edge.
    pub include_impressions: bool,
}

/// Canonical node label for a query: its tokens joined by single spaces.
pub fn query_key(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeteroGraph {
    labels: [Vec<String>; 3],
    index: [HashMap<String, usize>; 3],
    edges: Vec<TypedEdge>,
    adj: [Vec<Vec<Neighbor>>; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DegreeStats {
    pub nodes: BTreeMap<NodeKind, usize>,
    pub edges: BTreeMap<EdgeType, usize>,
    /// Per edge type, counts of edges by `floor(log2(weight))`.
    pub weight_hist: BTreeMap<EdgeType, BTreeMap<i32, usize>>,
    pub total_edges: usize,
    pub max_degree: usize,
}

impl HeteroGraph {
    /// Assembles a graph from sorted, deduplicated labels and validated
    /// edges. Local ids are positions in each label list.
    fn from_parts(labels: [Vec<String>; 3], mut edges: Vec<TypedEdge>) -> Self {
        edges.sort_by(|a, b| (a.etype, a.src, a.dst).cmp(&(b.etype, b.src, b.dst)));
        let index = std::array::from_fn(|k| {
            labels[k]
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), i))
                .collect()
        });
        let mut adj: [Vec<Vec<Neighbor>>; 3] = std::array::from_fn(|k| vec![Vec::new(); labels[k].len()]);
        for e in &edges {
            adj[e.src.kind.slot()][e.src.id].push(Neighbor {
                node: e.dst,
                etype: e.etype,
                weight: e.weight,
            });
            adj[e.dst.kind.slot()][e.dst.id].push(Neighbor {
                node: e.src,
                etype: e.etype,
                weight: e.weight,
            });
        }
        for list in adj.iter_mut().flatten() {
            list.sort_by(|a, b| (a.node, a.etype).cmp(&(b.node, b.etype)));
        }
        Self {
            labels,
            index,
            edges,
            adj,
        }
    }

    pub fn node_count(&self, kind: NodeKind) -> usize {
        self.labels[kind.slot()].len()
    }

    pub fn total_nodes(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> &[TypedEdge] {
        &self.edges
    }

    pub fn labels(&self, kind: NodeKind) -> &[String] {
        &self.labels[kind.slot()]
    }

    pub fn label(&self, node: NodeRef) -> Result<&str> {
        self.labels[node.kind.slot()]
            .get(node.id)
            .map(String::as_str)
            .ok_or_else(|| Error::Lookup(format!("no node {node}")))
    }

    pub fn lookup(&self, kind: NodeKind, label: &str) -> Option<NodeRef> {
        self.index[kind.slot()].get(label).map(|&id| NodeRef { kind, id })
    }

    /// Query node for raw query text, matched on its normalized key.
    pub fn query_node(&self, text: &str) -> Option<NodeRef> {
        self.lookup(NodeKind::Query, &query_key(text))
    }

    /// Adjacent nodes ordered by kind, id, then edge type.
    pub fn neighbors(&self, node: NodeRef, filter: Option<EdgeType>) -> Result<Vec<Neighbor>> {
        let list = self.adj[node.kind.slot()]
            .get(node.id)
            .ok_or_else(|| Error::Lookup(format!("no node {node}")))?;
        Ok(list
            .iter()
            .filter(|n| filter.is_none_or(|t| n.etype == t))
            .copied()
            .collect())
    }

    pub fn degree_stats(&self) -> DegreeStats {
        let mut s = DegreeStats {
            total_edges: self.edges.len(),
            ..Default::default()
        };
        for k in NodeKind::ALL {
            s.nodes.insert(k, self.node_count(k));
        }
        for t in EdgeType::ALL {
            s.edges.insert(t, 0);
            s.weight_hist.insert(t, BTreeMap::new());
        }
        for e in &self.edges {
            *s.edges.get_mut(&e.etype).unwrap() += 1;
            let bucket = e.weight.log2().floor() as i32;
            *s.weight_hist.get_mut(&e.etype).unwrap().entry(bucket).or_default() += 1;
        }
        s.max_degree = self.adj.iter().flatten().map(Vec::len).max().unwrap_or(0);
        s
    }

    /// Tab-separated text: two `H` count lines, `N` node lines, `E` edge lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("H\tnodes\t{}\nH\tedges\t{}\n", self.total_nodes(), self.edges.len());
        for k in NodeKind::ALL {
            for (i, l) in self.labels[k.slot()].iter().enumerate() {
                out.push_str(&format!("N\t{k}\t{i}\t{l}\n"));
            }
        }
        for e in &self.edges {
            out.push_str(&format!("E\t{}\t{}\t{}\t{}\n", e.etype, e.src, e.dst, e.weight));
        }
        out
    }

    pub fn from_text(text: &str, file: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::parse(file, line, msg);
        let mut lines = text.lines().enumerate();
        let mut header = |name: &str| -> Result<usize> {
            let (i, l) = lines.next().ok_or_else(|| perr(0, format!("missing {name} header")))?;
            let f: Vec<&str> = l.split('\t').collect();
            match f.as_slice() {
                ["H", n, v] if *n == name => v.parse().map_err(|_| perr(i + 1, "bad count".into())),
                _ => Err(perr(i + 1, format!("expected `H {name} <count>`"))),
            }
        };
        let n_nodes = header("nodes")?;
        let n_edges = header("edges")?;
        let mut labels: [Vec<String>; 3] = Default::default();
        let mut edges = Vec::with_capacity(n_edges);
        let mut seen = BTreeSet::new();
        for (i, line) in lines {
            let ln = i + 1;
            let f: Vec<&str> = line.split('\t').collect();
            match f.first() {
                Some(&"N") if f.len() == 4 => {
                    if !edges.is_empty() {
                        return Err(perr(ln, "node line after edges".into()));
                    }
                    let kind: NodeKind = f[1].parse().map_err(|m| perr(ln, m))?;
                    let id: usize = f[2].parse().map_err(|_| perr(ln, "bad node id".into()))?;
                    let slot = &mut labels[kind.slot()];
                    if id != slot.len() {
                        return Err(perr(ln, format!("node ids must be dense; expected {}", slot.len())));
                    }
                    slot.push(f[3].to_string());
                }
                Some(&"E") if f.len() == 5 => {
                    let etype: EdgeType = f[1].parse().map_err(|m| perr(ln, m))?;
                    let src: NodeRef = f[2].parse().map_err(|m| perr(ln, m))?;
                    let dst: NodeRef = f[3].parse().map_err(|m| perr(ln, m))?;
                    let weight: f64 = f[4].parse().map_err(|_| perr(ln, "bad weight".into()))?;
                    if (src.kind, dst.kind) != etype.endpoints() {
                        return Err(perr(ln, format!("{etype} cannot join {src} and {dst}")));
                    }
                    if src.id >= labels[src.kind.slot()].len() || dst.id >= labels[dst.kind.slot()].len() {
                        return Err(perr(ln, "edge references an undeclared node".into()));
                    }
                    if src == dst || !(weight > 0.0 && weight.is_finite()) {
                        return Err(perr(ln, "self-loop or non-positive weight".into()));
                    }
                    if !seen.insert((etype, src, dst)) {
                        return Err(perr(ln, "duplicate edge".into()));
                    }
                    edges.push(TypedEdge { src, dst, etype, weight });
                }
                _ => return Err(perr(ln, format!("unrecognized line {line:?}"))),
            }
        }
        let got_nodes: usize = labels.iter().map(Vec::len).sum();
        if got_nodes != n_nodes || edges.len() != n_edges {
            return Err(perr(
                text.lines().count(),
                format!("expected {n_nodes} nodes and {n_edges} edges, read {got_nodes} and {}", edges.len()),
            ));
        }
        Ok(Self::from_parts(labels, edges))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Builds the graph. Node ids follow sorted label order, so the result is
/// independent of record order.
pub fn build_graph(logs: &InteractionLogs, opts: &BuildOptions) -> Result<HeteroGraph> {
    let mut dangling = BTreeSet::new();
    let mut queries = BTreeSet::new();
    let mut ads: BTreeSet<String> = opts.ad_catalog.clone().unwrap_or_default();
    let mut users = BTreeSet::new();
    let mut key = |text: &str, ctx: &str, dangling: &mut BTreeSet<String>| -> Option<String> {
        let k = query_key(text);
        if k.is_empty() {
            dangling.insert(format!("empty query {text:?} in {ctx}"));
            return None;
        }
        queries.insert(k.clone());
        Some(k)
    };
    let mut clicks = Vec::with_capacity(logs.clicks.len());
    for c in &logs.clicks {
        let q = key(&c.query_text, &format!("click by {}", c.user_id), &mut dangling);
        if let Some(cat) = &opts.ad_catalog {
            if !cat.contains(&c.ad_id) {
                dangling.insert(format!("ad {}", c.ad_id));
                continue;
            }
        }
        ads.insert(c.ad_id.clone());
        users.insert(c.user_id.clone());
        if let Some(q) = q {
            clicks.push((q, c));
        }
    }
    let mut sessions = Vec::with_capacity(logs.sessions.len());
    for (si, s) in logs.sessions.iter().enumerate() {
        users.insert(s.user_id.clone());
        let keys: BTreeSet<String> = s
            .query_text
            .iter()
            .filter_map(|q| key(q, &format!("session {si}"), &mut dangling))
            .collect();
        sessions.push((s.user_id.as_str(), keys));
    }
    if !dangling.is_empty() {
        return Err(Error::Build(dangling.into_iter().collect()));
    }

    let labels: [Vec<String>; 3] = [
        queries.into_iter().collect(),
        ads.into_iter().collect(),
        users.into_iter().collect(),
    ];
    let idx = |k: NodeKind, l: &str| -> NodeRef {
        NodeRef {
            kind: k,
            id: labels[k.slot()].binary_search_by(|x| x.as_str().cmp(l)).expect("registered label"),
        }
    };
    // integer (clicks, impressions) counts keep the weights independent of record order
    let mut counts: BTreeMap<(EdgeType, NodeRef, NodeRef), (u64, u64)> = BTreeMap::new();
    let mut add = |t, a, b, imp: bool| {
        let c = counts.entry((t, a, b)).or_insert((0, 0));
        if imp {
            c.1 += 1;
        } else {
            c.0 += 1;
        }
    };
    for (q, c) in &clicks {
        if !c.clicked && !opts.include_impressions {
            continue;
        }
        add(EdgeType::QaClick, idx(NodeKind::Query, q), idx(NodeKind::Ad, &c.ad_id), !c.clicked);
    }
    for (user, keys) in &sessions {
        let u = idx(NodeKind::User, user);
        let qs: Vec<NodeRef> = keys.iter().map(|k| idx(NodeKind::Query, k)).collect();
        for (i, &a) in qs.iter().enumerate() {
            add(EdgeType::UqSession, u, a, false);
            for &b in &qs[i + 1..] {
                add(EdgeType::QqCooccur, a.min(b), a.max(b), false);
            }
        }
    }
    let edges = counts
        .into_iter()
        .map(|((etype, src, dst), (n, imp))| TypedEdge {
            src,
            dst,
            etype,
            weight: n as f64 + IMPRESSION_WEIGHT * imp as f64,
        })
        .collect();
    Ok(HeteroGraph::from_parts(labels, edges))
}

#[cfg(test)]
mod tests;
