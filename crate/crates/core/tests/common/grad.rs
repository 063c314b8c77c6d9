//! Gradient cases shared by the gradient tests and the acceptance run.

use adgt::adgraph::EdgeType;
use adgt::align::{total_loss, AlignBatch, LossWeights};
use adgt::dualenc::{encode_batch, init_encoder, EncoderConfig, Pooling, Tower};
use adgt::gatprop::{init_gat, propagate, Activation, GatConfig, Plan, PropGraph};
use adgt::numkit::{ParamStore, Segment, SeededRng, Tape, Tensor, Var};
use adgt::textpipe::Encoded;
use adgt::Result;

use super::{away_from_zero, fd_check, random_tensor, weighted_sum};

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

impl OpCase {
    fn new(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        Self {
            name,
            inputs,
            f: Box::new(f),
        }
    }

    /// Max relative error of the weighted-sum loss over all inputs.
    pub fn check(&self, seed: u64) -> f64 {
        let mut store = ParamStore::new();
        for (i, t) in self.inputs.iter().enumerate() {
            store.insert(format!("x{i}"), t.clone());
        }
        let n = self.inputs.len();
        fd_check(&store, |tape, s| {
            let vars: Vec<Var> = (0..n).map(|i| tape.param(s, &format!("x{i}"))).collect::<Result<_>>()?;
            let out = (self.f)(tape, &vars)?;
            weighted_sum(tape, out, seed)
        })
    }
}

/// One case per differentiable tape operation.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = SeededRng::fork(seed, "gradcheck.ops");
    let mut g = |shape: Vec<usize>| random_tensor(shape, &mut r, 1.0);
    let m34 = g(vec![3, 4]);
    let m34b = g(vec![3, 4]);
    let m42 = g(vec![4, 2]);
    let m24 = g(vec![2, 4]);
    let v4 = g(vec![4]);
    let v3 = g(vec![3]);
    let m62 = g(vec![6, 4]);
    let q = g(vec![5, 4]);
    let k = g(vec![5, 4]);
    let v = g(vec![5, 4]);
    let e7 = g(vec![7]);
    let mut r2 = SeededRng::fork(seed, "gradcheck.kinks");
    let kinked = away_from_zero(vec![3, 4], &mut r2, 0.1, 2.0);
    let positive = Tensor::matrix(2, 3, (0..6).map(|_| 0.5 + 2.0 * r2.uniform()).collect()).unwrap();
    let wide = random_tensor(vec![2, 5], &mut r2, 5.0);
    vec![
        OpCase::new("matmul", vec![m34.clone(), m42.clone()], |t, x| t.matmul(x[0], x[1])),
        OpCase::new("matmul_nt", vec![m34.clone(), m24.clone()], |t, x| t.matmul_nt(x[0], x[1])),
        OpCase::new("add", vec![m34.clone(), m34b.clone()], |t, x| t.add(x[0], x[1])),
        OpCase::new("sub", vec![m34.clone(), m34b.clone()], |t, x| t.sub(x[0], x[1])),
        OpCase::new("mul", vec![m34.clone(), m34b.clone()], |t, x| t.mul(x[0], x[1])),
        OpCase::new("scale", vec![m34.clone()], |t, x| t.scale(x[0], -1.7)),
        OpCase::new("exp", vec![m34.clone()], |t, x| t.exp(x[0])),
        OpCase::new("log", vec![positive], |t, x| t.log(x[0])),
        OpCase::new("leaky_relu", vec![kinked.clone()], |t, x| t.leaky_relu(x[0], 0.2)),
        OpCase::new("elu", vec![kinked.clone()], |t, x| t.elu(x[0])),
        OpCase::new("gelu", vec![m34.clone()], |t, x| t.gelu(x[0])),
        OpCase::new("add_rowvec", vec![m34.clone(), v4.clone()], |t, x| t.add_rowvec(x[0], x[1])),
        OpCase::new("scale_rows", vec![m34.clone(), v3.clone()], |t, x| t.scale_rows(x[0], x[1])),
        OpCase::new("concat_rows", vec![m34.clone(), m24.clone()], |t, x| t.concat(&[x[0], x[1]], 0)),
        OpCase::new("concat_cols", vec![m34.clone(), m34b.clone()], |t, x| t.concat(&[x[0], x[1]], 1)),
        OpCase::new("mean_axis", vec![m34.clone()], |t, x| t.mean_axis(x[0], 0)),
        OpCase::new("sum_axis", vec![m34.clone()], |t, x| t.sum_axis(x[0], 1)),
        OpCase::new("sum", vec![m34.clone()], |t, x| t.sum(x[0])),
        OpCase::new("mean", vec![m34.clone()], |t, x| t.mean(x[0])),
        OpCase::new("l2_norm", vec![m34.clone()], |t, x| t.l2_norm(x[0])),
        OpCase::new("softmax", vec![wide.clone()], |t, x| t.softmax(x[0], 1)),
        OpCase::new("log_softmax", vec![wide.clone()], |t, x| t.log_softmax(x[0], 1)),
        OpCase::new("layer_norm", vec![m34.clone(), v4.clone(), g(vec![4])], |t, x| t.layer_norm(x[0], x[1], x[2], 1e-5)),
        OpCase::new("gather_rows", vec![m34.clone()], |t, x| t.gather_rows(x[0], vec![2, 0, 2, 1])),
        OpCase::new("gather_flat", vec![m34.clone()], |t, x| t.gather_flat(x[0], vec![11, 0, 5, 5, 7])),
        OpCase::new("pick_per_row", vec![m34.clone()], |t, x| t.pick_per_row(x[0], vec![3, 0, 1])),
        OpCase::new("transpose", vec![m34.clone()], |t, x| t.transpose(x[0])),
        OpCase::new("reshape", vec![m34.clone()], |t, x| t.reshape(x[0], vec![2, 6])),
        OpCase::new("normalize_rows", vec![m34.clone()], |t, x| t.normalize_rows(x[0])),
        OpCase::new("segment_attention", vec![q, k, v], |t, x| {
            let segs = vec![Segment { start: 0, len: 2 }, Segment { start: 2, len: 3 }];
            t.segment_attention(x[0], x[1], x[2], segs, &[true, true, true, false, true], 2)
        }),
        OpCase::new("segment_mean", vec![m62.clone()], |t, x| {
            let segs = vec![Segment { start: 0, len: 4 }, Segment { start: 4, len: 2 }];
            t.segment_mean(x[0], segs, vec![true, false, true, true, true, true])
        }),
        OpCase::new("segment_softmax", vec![e7.clone()], |t, x| t.segment_softmax(x[0], vec![0, 3, 4, 7])),
        OpCase::new("edge_aggregate", vec![e7, m34], |t, x| {
            t.edge_aggregate(x[0], x[1], vec![0, 2, 1, 1, 0, 2, 2], vec![0, 3, 4, 7])
        }),
    ]
}

/// A random end-to-end mini-model: two encoder towers feeding a GAT over a
/// graph of at most six nodes, scored by the joint loss.
pub struct MiniModel {
    pub enc: EncoderConfig,
    pub gat: GatConfig,
    pub graph: PropGraph,
    pub queries: Vec<Encoded>,
    pub ads: Vec<Encoded>,
    pub refs: Vec<Encoded>,
    pub users: usize,
    pub store: ParamStore,
    pub weights: LossWeights,
}

fn random_seq(rng: &mut SeededRng, vocab: usize, max_len: usize) -> Encoded {
    let real = 1 + rng.below(max_len);
    let ids = (0..max_len).map(|i| if i < real { 1 + rng.below(vocab - 1) as u32 } else { 0 }).collect();
    let mask = (0..max_len).map(|i| i < real).collect();
    Encoded { ids, mask }
}

fn refs(v: &[Encoded]) -> Vec<&Encoded> {
    v.iter().collect()
}

impl MiniModel {
    pub fn random(seed: u64) -> Self {
        let mut rng = SeededRng::fork(seed, "gradcheck.model");
        let d = if rng.bernoulli(0.5) { 4 } else { 8 };
        let enc = EncoderConfig {
            d_model: d,
            n_heads: 2,
            n_layers: 1,
            d_ff: 2 * d,
            max_len: 4,
            pooling: if rng.bernoulli(0.5) { Pooling::Mean } else { Pooling::Cls },
            ..EncoderConfig::new(9)
        };
        let gat = GatConfig {
            n_layers: 1 + rng.below(2),
            activation: if rng.bernoulli(0.7) { Activation::Elu } else { Activation::Identity },
            ..GatConfig::new(d)
        };
        let nq = 2;
        let na = 2;
        let users = rng.below(3);
        let n = nq + na + users;
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let t = match (a < nq, b < nq, a < nq + na, b < nq + na) {
                    (true, true, _, _) => EdgeType::QqCooccur,
                    (true, false, _, true) => EdgeType::QaClick,
                    (true, false, _, false) => EdgeType::UqSession,
                    _ => continue,
                };
                if rng.bernoulli(0.6) {
                    edges.push((a, b, t, 1.0 + rng.below(4) as f64));
                }
            }
        }
        let graph = PropGraph::from_edges(n, &edges).unwrap();
        let mut store = init_encoder(&enc, seed).unwrap();
        store.extend(init_gat(&gat, seed).unwrap());
        // perturb away from the near-identity start so attention is not uniform
        for (_, t) in store.iter_mut() {
            for v in t.data_mut() {
                *v += 0.3 * rng.gaussian();
            }
        }
        if users > 0 {
            store.insert("users", random_tensor(vec![users, d], &mut rng, 1.0));
        }
        let queries = (0..nq).map(|_| random_seq(&mut rng, enc.vocab_size, enc.max_len)).collect();
        let ads = (0..na).map(|_| random_seq(&mut rng, enc.vocab_size, enc.max_len)).collect();
        let refs = (0..nq).map(|_| random_seq(&mut rng, enc.vocab_size, enc.max_len)).collect();
        let weights = LossWeights {
            tau: 0.5 + rng.uniform(),
            lambda1: 1.0,
            lambda2: 0.5 + rng.uniform(),
        };
        Self {
            enc,
            gat,
            graph,
            queries,
            ads,
            refs,
            users,
            store,
            weights,
        }
    }

    pub fn loss(&self, tape: &mut Tape, store: &ParamStore) -> Result<Var> {
        let zq = encode_batch(tape, store, &self.enc, Tower::Query, &refs(&self.queries))?;
        let za = encode_batch(tape, store, &self.enc, Tower::Ad, &refs(&self.ads))?;
        let mut blocks = vec![zq, za];
        if self.users > 0 {
            blocks.push(tape.param(store, "users")?);
        }
        let x = tape.concat(&blocks, 0)?;
        let plan = Plan::full(&self.graph, &self.gat)?;
        let out = propagate(tape, store, &self.gat, &plan, x)?.embeddings;
        let nq = self.queries.len();
        let q = tape.gather_rows(out, (0..nq).collect())?;
        let a = tape.gather_rows(out, (nq..nq + self.ads.len()).collect())?;
        let r = encode_batch(tape, store, &self.enc, Tower::Query, &refs(&self.refs))?;
        let parts = total_loss(tape, &AlignBatch { zq: q, za: a, zref: Some(r) }, &self.weights)?;
        Ok(parts.total)
    }

    pub fn check(&self) -> f64 {
        fd_check(&self.store, |t, s| self.loss(t, s))
    }
}
