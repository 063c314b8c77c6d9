//! Graph attention propagation over the heterogeneous graph.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::adgraph::{EdgeType, HeteroGraph, NodeKind, NodeRef};
use crate::error::{Error, Result};
use crate::numkit::{gaussian_init, ParamStore, SeededRng, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;
/// Gain slot used by self-loops, after the three edge types.
pub const SELF_SLOT: usize = 3;
const GAIN_SLOTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ELU" => Ok(Activation::Elu),
            "IDENTITY" | "NONE" => Ok(Activation::Identity),
            _ => Err(Error::config(format!("unknown activation {s:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Elu => "ELU",
            Activation::Identity => "IDENTITY",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatConfig {
    pub n_layers: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub include_self: bool,
    pub use_edge_weights: bool,
    pub leaky_slope: f64,
}

impl GatConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            n_layers: 2,
            d_in: d_model,
            d_out: d_model,
            activation: Activation::Elu,
            include_self: true,
            use_edge_weights: true,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::config("GAT needs at least one layer"));
        }
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::config("GAT dimensions must be positive"));
        }
        Ok(())
    }

    fn dims(&self, layer: usize) -> (usize, usize) {
        (if layer == 0 { self.d_in } else { self.d_out }, self.d_out)
    }
}

/// `W` starts at the (rectangular) identity plus N(0, 0.02) noise, `a` at
/// N(0, 0.02) and every edge gain at zero.
pub fn init_gat(cfg: &GatConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = SeededRng::fork(seed, "gat");
    let mut store = ParamStore::new();
    for k in 0..cfg.n_layers {
        let (din, dout) = cfg.dims(k);
        let mut w = gaussian_init(vec![dout, din], INIT_STD, &mut rng)?;
        for i in 0..dout.min(din) {
            w.data_mut()[i * din + i] += 1.0;
        }
        store.insert(format!("gat.layer{k}.w"), w);
        store.insert(format!("gat.layer{k}.a"), gaussian_init(vec![2 * dout], INIT_STD, &mut rng)?);
        store.insert(format!("gat.layer{k}.edge_gain"), Tensor::zeros(vec![GAIN_SLOTS])?);
    }
    Ok(store)
}

/// Learned embeddings for user nodes, N(0, 0.02).
pub fn init_user_table(n_users: usize, d: usize, seed: u64) -> Result<Tensor> {
    let mut rng = SeededRng::fork(seed, "gat.user_emb");
    gaussian_init(vec![n_users.max(1), d], INIT_STD, &mut rng)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InEdge {
    pub src: usize,
    pub slot: usize,
    pub weight: f64,
}

/// In-edge lists over global rows: queries, then ads, then users, then any
/// receiver-only rows appended with [`PropGraph::add_receiver`].
#[derive(Clone, Debug, PartialEq)]
pub struct PropGraph {
    counts: [usize; 3],
    offsets: Vec<usize>,
    edges: Vec<InEdge>,
}

impl PropGraph {
    pub fn from_hetero(g: &HeteroGraph) -> Self {
        let counts = NodeKind::ALL.map(|k| g.node_count(k));
        let mut pg = Self {
            counts,
            offsets: vec![0],
            edges: Vec::new(),
        };
        for k in NodeKind::ALL {
            for id in 0..g.node_count(k) {
                let ns = g.neighbors(NodeRef { kind: k, id }, None).expect("node exists");
                for n in ns {
                    pg.edges.push(InEdge {
                        src: pg.row_of(n.node),
                        slot: n.etype.index(),
                        weight: n.weight,
                    });
                }
                pg.offsets.push(pg.edges.len());
            }
        }
        pg
    }

    /// Graph with `n` rows and explicit undirected edges `(a, b, etype, w)`.
    /// All rows are treated as query rows.
    pub fn from_edges(n: usize, edges: &[(usize, usize, EdgeType, f64)]) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(a, b, t, w) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::shape(format!("bad edge ({a}, {b}) for {n} rows")));
            }
            lists[a].push(InEdge { src: b, slot: t.index(), weight: w });
            lists[b].push(InEdge { src: a, slot: t.index(), weight: w });
        }
        let mut pg = Self {
            counts: [n, 0, 0],
            offsets: vec![0],
            edges: Vec::new(),
        };
        for l in lists {
            pg.edges.extend(l);
            pg.offsets.push(pg.edges.len());
        }
        Ok(pg)
    }

    pub fn row_of(&self, node: NodeRef) -> usize {
        let base: usize = self.counts[..node.kind as usize].iter().sum();
        base + node.id
    }

    pub fn real_rows(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn in_edges(&self, row: usize) -> &[InEdge] {
        &self.edges[self.offsets[row]..self.offsets[row + 1]]
    }

    /// Appends a virtual row fed by existing rows. Real rows never
    /// receive from it.
    pub fn add_receiver(&mut self, in_edges: &[InEdge]) -> Result<usize> {
        if let Some(e) = in_edges.iter().find(|e| e.src >= self.rows()) {
            return Err(Error::shape(format!("receiver edge from unknown row {}", e.src)));
        }
        self.edges.extend_from_slice(in_edges);
        self.offsets.push(self.edges.len());
        Ok(self.rows() - 1)
    }

    /// Drops virtual rows.
    pub fn truncate_receivers(&mut self) {
        let n = self.real_rows();
        self.offsets.truncate(n + 1);
        self.edges.truncate(self.offsets[n]);
    }
}

#[derive(Clone, Debug)]
struct LayerPlan {
    /// Receiver positions within the previous layer's rows.
    recv_prev: Vec<usize>,
    src: Vec<usize>,
    slot: Vec<usize>,
    log_w: Vec<f64>,
    offsets: Vec<usize>,
}

/// Exact propagation restricted to the rows that can reach `targets`
/// within the configured number of layers.
#[derive(Clone, Debug)]
pub struct Plan {
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    layers: Vec<LayerPlan>,
}

impl Plan {
    /// `masked` lists unordered row pairs whose edges are ignored.
    pub fn new(
        g: &PropGraph,
        targets: &[usize],
        cfg: &GatConfig,
        masked: &HashSet<(usize, usize)>,
    ) -> Result<Self> {
        cfg.validate()?;
        if let Some(&t) = targets.iter().find(|&&t| t >= g.rows()) {
            return Err(Error::Lookup(format!("no graph row {t}")));
        }
        let live = |r: usize, e: &InEdge| !masked.contains(&(r.min(e.src), r.max(e.src)));
        let mut sets = vec![targets.iter().copied().collect::<BTreeSet<usize>>()];
        for _ in 0..cfg.n_layers {
            let mut s = sets.last().unwrap().clone();
            for &r in sets.last().unwrap() {
                s.extend(g.in_edges(r).iter().filter(|e| live(r, e)).map(|e| e.src));
            }
            sets.push(s);
        }
        sets.reverse();
        let sets: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let pos = |set: &[usize], r: usize| set.binary_search(&r).expect("row in plan");
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let (prev, cur) = (&sets[l], &sets[l + 1]);
            let mut lp = LayerPlan {
                recv_prev: Vec::with_capacity(cur.len()),
                src: Vec::new(),
                slot: Vec::new(),
                log_w: Vec::new(),
                offsets: vec![0],
            };
            for &r in cur {
                let rp = pos(prev, r);
                lp.recv_prev.push(rp);
                let mut push = |src, slot, w: f64| {
                    lp.src.push(src);
                    lp.slot.push(slot);
                    lp.log_w.push(w.ln_1p());
                };
                if cfg.include_self {
                    push(rp, SELF_SLOT, 1.0);
                }
                for e in g.in_edges(r).iter().filter(|e| live(r, e)) {
                    push(pos(prev, e.src), e.slot, e.weight);
                }
                if lp.src.len() == *lp.offsets.last().unwrap() {
                    return Err(Error::domain(format!("row {r} has an empty neighborhood")));
                }
                lp.offsets.push(lp.src.len());
            }
            layers.push(lp);
        }
        Ok(Self {
            inputs: sets[0].clone(),
            outputs: sets[cfg.n_layers].clone(),
            layers,
        })
    }

    /// Every graph row, so outputs cover the whole graph.
    pub fn full(g: &PropGraph, cfg: &GatConfig) -> Result<Self> {
        let all: Vec<usize> = (0..g.rows()).collect();
        Self::new(g, &all, cfg, &HashSet::new())
    }

    /// Global rows whose embeddings the input matrix must hold, in order.
    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    /// Global rows of the output matrix, in order.
    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    /// Output position of a global row.
    pub fn output_position(&self, row: usize) -> Option<usize> {
        self.outputs.binary_search(&row).ok()
    }
}

/// One attention layer. Returns the new embeddings and the per-edge
/// attention coefficients.
fn layer(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GatConfig,
    k: usize,
    h: Var,
    lp: &LayerPlan,
) -> Result<(Var, Var)> {
    let (din, dout) = cfg.dims(k);
    if tape.shape(h).get(1) != Some(&din) {
        return Err(Error::shape(format!(
            "GAT layer {k} expects width {din}, got {:?}",
            tape.shape(h)
        )));
    }
    let w = tape.param(store, &format!("gat.layer{k}.w"))?;
    let a = tape.param(store, &format!("gat.layer{k}.a"))?;
    let p = tape.matmul_nt(h, w)?;
    let a2 = tape.reshape(a, vec![2, dout])?;
    // column 0 scores a receiver, column 1 a sender
    let st = tape.matmul_nt(p, a2)?;
    let mut recv_idx = Vec::with_capacity(lp.src.len());
    for (s, win) in lp.offsets.windows(2).enumerate() {
        recv_idx.extend(std::iter::repeat_n(2 * lp.recv_prev[s], win[1] - win[0]));
    }
    let si = tape.gather_flat(st, recv_idx)?;
    let tj = tape.gather_flat(st, lp.src.iter().map(|&j| 2 * j + 1).collect())?;
    let e = tape.add(si, tj)?;
    let mut e = tape.leaky_relu(e, cfg.leaky_slope)?;
    if cfg.use_edge_weights {
        let gain = tape.param(store, &format!("gat.layer{k}.edge_gain"))?;
        let g = tape.gather_flat(gain, lp.slot.clone())?;
        let lw = tape.constant(Tensor::vector(lp.log_w.clone()));
        let bias = tape.mul(g, lw)?;
        e = tape.add(e, bias)?;
    }
    let alpha = tape.segment_softmax(e, lp.offsets.clone())?;
    let agg = tape.edge_aggregate(alpha, p, lp.src.clone(), lp.offsets.clone())?;
    let out = match cfg.activation {
        Activation::Elu => tape.elu(agg)?,
        Activation::Identity => agg,
    };
    Ok((out, alpha))
}

/// Result of [`propagate`]: output rows follow [`Plan::outputs`].
#[derive(Clone, Debug)]
pub struct Propagated {
    pub embeddings: Var,
    /// Per layer, attention over each receiver's edges in plan order.
    pub attention: Vec<Var>,
}

/// Applies every layer. `inputs` holds one row per entry of
/// [`Plan::inputs`].
pub fn propagate(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GatConfig,
    plan: &Plan,
    inputs: Var,
) -> Result<Propagated> {
    propagate_from(tape, store, cfg, plan, inputs, 0)
}

/// Like [`propagate`], but plan layer `i` uses the parameters of layer
/// `first + i`.
pub fn propagate_from(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GatConfig,
    plan: &Plan,
    inputs: Var,
    first: usize,
) -> Result<Propagated> {
    if first + plan.layers.len() > cfg.n_layers {
        return Err(Error::config(format!(
            "plan of {} layers starting at layer {first} exceeds {} layers",
            plan.layers.len(),
            cfg.n_layers
        )));
    }
    if tape.shape(inputs).first() != Some(&plan.inputs.len()) {
        return Err(Error::shape(format!(
            "plan needs {} input rows, got {:?}",
            plan.inputs.len(),
            tape.shape(inputs)
        )));
    }
    let mut h = inputs;
    let mut attention = Vec::with_capacity(plan.layers.len());
    for (k, lp) in plan.layers.iter().enumerate() {
        let (out, alpha) = layer(tape, store, cfg, first + k, h, lp)?;
        attention.push(alpha);
        h = out;
    }
    Ok(Propagated {
        embeddings: h,
        attention,
    })
}

/// Attention coefficients of node `h_i` over its neighborhood under layer
/// `layer`'s parameters. The order is self first (when included), then
/// `neighbors` in the given order. Each neighbor carries its edge type and
/// weight.
pub fn attention_coefficients(
    h_i: &[f64],
    neighbors: &[(&[f64], EdgeType, f64)],
    store: &ParamStore,
    cfg: &GatConfig,
    layer_index: usize,
) -> Result<Vec<f64>> {
    let d = cfg.dims(layer_index).0;
    if h_i.len() != d || neighbors.iter().any(|(h, _, _)| h.len() != d) {
        return Err(Error::shape("attention_coefficients: embedding width"));
    }
    let n = neighbors.len() + 1;
    // a star where only row 0 receives
    let edges: Vec<InEdge> = neighbors
        .iter()
        .enumerate()
        .map(|(j, &(_, t, w))| InEdge { src: j + 1, slot: t.index(), weight: w })
        .collect();
    let m = edges.len();
    let pg = PropGraph {
        counts: [n, 0, 0],
        offsets: std::iter::once(0).chain(std::iter::repeat_n(m, n)).collect(),
        edges,
    };
    let one = GatConfig { n_layers: 1, ..cfg.clone() };
    let plan = Plan::new(&pg, &[0], &one, &HashSet::new())?;
    let mut data = Vec::with_capacity(n * d);
    for &r in plan.inputs() {
        data.extend_from_slice(if r == 0 { h_i } else { neighbors[r - 1].0 });
    }
    let mut scoped = ParamStore::new();
    for suffix in ["w", "a", "edge_gain"] {
        let t = store.get(&format!("gat.layer{layer_index}.{suffix}"))?;
        scoped.insert(format!("gat.layer0.{suffix}"), t.clone());
    }
    let one = GatConfig { d_in: d, ..one };
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(plan.inputs().len(), d, data)?);
    let (_, alpha) = layer(&mut tape, &scoped, &one, 0, x, &plan.layers[0])?;
    Ok(tape.value(alpha).data().to_vec())
}

#[cfg(test)]
mod tests;
