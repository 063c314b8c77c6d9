//! Random small graphs for checking propagation against the oracle.

use adgt::adgraph::EdgeType;
use adgt::gatprop::{init_gat, propagate, Activation, GatConfig, Plan, PropGraph};
use adgt::numkit::{ParamStore, SeededRng, Tape, Tensor};

use super::gat_layer_oracle;

const TYPES: [EdgeType; 3] = [EdgeType::QaClick, EdgeType::UqSession, EdgeType::QqCooccur];

pub struct Case {
    pub n: usize,
    pub edges: Vec<(usize, usize, EdgeType, f64)>,
    pub cfg: GatConfig,
    pub store: ParamStore,
    pub h: Vec<Vec<f64>>,
}

pub fn random_case(seed: u64, layers: usize) -> Case {
    let mut rng = SeededRng::fork(seed, "gat.oracle");
    let n = 1 + rng.below(6);
    let (din, dout) = (1 + rng.below(4), 1 + rng.below(4));
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.bernoulli(0.5) {
                edges.push((a, b, TYPES[rng.below(3)], 1.0 + 9.0 * rng.uniform()));
            }
        }
    }
    let isolated = (0..n).any(|i| !edges.iter().any(|e| e.0 == i || e.1 == i));
    let cfg = GatConfig {
        n_layers: layers,
        d_in: din,
        d_out: dout,
        activation: if rng.bernoulli(0.5) { Activation::Elu } else { Activation::Identity },
        include_self: isolated || rng.bernoulli(0.7),
        use_edge_weights: rng.bernoulli(0.7),
        leaky_slope: 0.05 + 0.4 * rng.uniform(),
    };
    let mut store = init_gat(&cfg, seed).unwrap();
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v = rng.gaussian();
        }
    }
    let h = (0..n).map(|_| (0..din).map(|_| 2.0 * rng.gaussian()).collect()).collect();
    Case { n, edges, cfg, store, h }
}

impl Case {
    pub fn run(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let g = PropGraph::from_edges(self.n, &self.edges).unwrap();
        let plan = Plan::full(&g, &self.cfg).unwrap();
        let mut tape = Tape::new();
        let flat: Vec<f64> = self.h.iter().flatten().copied().collect();
        let x = tape.constant(Tensor::matrix(self.n, self.cfg.d_in, flat).unwrap());
        let out = propagate(&mut tape, &self.store, &self.cfg, &plan, x).unwrap();
        let v = tape.value(out.embeddings);
        let rows = (0..self.n).map(|i| v.row(i).to_vec()).collect();
        let alpha = tape.value(*out.attention.last().unwrap()).data().to_vec();
        let mut per_node = Vec::new();
        let mut at = 0;
        for i in 0..self.n {
            let k = g.in_edges(i).len() + usize::from(self.cfg.include_self);
            per_node.push(alpha[at..at + k].to_vec());
            at += k;
        }
        (rows, per_node)
    }

    /// The oracle applied layer by layer.
    pub fn oracle(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut h = self.h.clone();
        let mut alpha = Vec::new();
        for k in 0..self.cfg.n_layers {
            let p = |s: &str| self.store.get(&format!("gat.layer{k}.{s}")).unwrap().data().to_vec();
            let (out, a) = gat_layer_oracle(&h, &self.edges, &p("w"), &p("a"), &p("edge_gain"), &self.cfg);
            h = out;
            alpha = a;
        }
        (h, alpha)
    }
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

