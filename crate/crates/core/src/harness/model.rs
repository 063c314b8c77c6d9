use std::collections::{BTreeMap, HashMap, HashSet};

use crate::dualenc::{encode_batch, init_encoder, EncoderConfig, Tower};
use crate::error::{Error, Result};
use crate::gatprop::{init_gat, init_user_table, propagate, propagate_from, GatConfig, InEdge, Plan, PropGraph};
use crate::adgraph::{EdgeType, NodeKind};
use crate::numkit::{gaussian_init, ParamStore, SeededRng, Tape, Tensor, Var};

use super::config::{Arm, RunConfig};
use super::data::{Context, Prepared};

pub const USER_EMB: &str = "gat.user_emb";
pub const FREE_QUERY: &str = "gat.free_query";
pub const FREE_AD: &str = "gat.free_ad";
pub const FREE_UNK: &str = "gat.free_unk";
const FREE_STD: f64 = 0.02;
const CACHE_CHUNK: usize = 512;

/// Where one input row of a propagation comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Src {
    /// Live query-tower encoding of a text id.
    Query(usize),
    /// Live ad-tower encoding of a text id.
    Ad(usize),
    CachedQuery(usize),
    CachedAd(usize),
    User(usize),
    FreeQuery(usize),
    FreeAd(usize),
    Unk,
}

/// Encoder outputs of every graph query and ad node, held as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeCache {
    pub query: Option<Tensor>,
    pub ad: Tensor,
}

/// Refined query and ad embeddings plus raw translation references.
#[derive(Clone, Copy, Debug)]
pub struct BatchEmbeddings {
    pub zq: Var,
    pub za: Var,
    pub zref: Var,
}

pub struct Model<'a> {
    pub arm: Arm,
    pub prep: &'a Prepared,
    pub enc: EncoderConfig,
    pub gat: GatConfig,
    pub context_refine: bool,
}

impl<'a> Model<'a> {
    pub fn new(cfg: &RunConfig, prep: &'a Prepared) -> Self {
        Self {
            arm: cfg.arm,
            prep,
            enc: cfg.encoder(prep.vocab_size()),
            gat: cfg.gat(),
            context_refine: cfg.context_refine,
        }
    }

    fn d(&self) -> usize {
        self.enc.d_model
    }

    /// Fresh parameters for this model's arm.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let g = &self.prep.graph;
        let mut store = ParamStore::new();
        if self.arm.uses_encoder() {
            store.extend(init_encoder(&self.enc, seed)?);
        }
        if self.arm.uses_graph() {
            store.extend(init_gat(&self.gat, seed)?);
            store.insert(USER_EMB, init_user_table(g.node_count(NodeKind::User), self.d(), seed)?);
        }
        if self.arm == Arm::GatOnly {
            let mut rng = SeededRng::fork(seed, "gat.free");
            let d = self.d();
            store.insert(FREE_QUERY, gaussian_init(vec![g.node_count(NodeKind::Query).max(1), d], FREE_STD, &mut rng)?);
            store.insert(FREE_AD, gaussian_init(vec![g.node_count(NodeKind::Ad).max(1), d], FREE_STD, &mut rng)?);
            store.insert(FREE_UNK, gaussian_init(vec![1, d], FREE_STD, &mut rng)?);
        }
        Ok(store)
    }

    /// Parameter names the arm needs; a checkpoint must hold exactly these.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let want = self.init_params(0)?;
        let a: Vec<&str> = want.names().collect();
        let b: Vec<&str> = store.names().collect();
        if a != b {
            let missing: Vec<&str> = a.iter().filter(|n| !store.contains(n)).copied().collect();
            let extra: Vec<&str> = b.iter().filter(|n| !want.contains(n)).copied().collect();
            return Err(Error::contract(format!(
                "parameters do not fit arm {}: missing {missing:?}, unexpected {extra:?}",
                self.arm
            )));
        }
        for (name, t) in want.iter() {
            if store.get(name)?.shape() != t.shape() {
                return Err(Error::contract(format!("parameter {name} has the wrong shape")));
            }
        }
        Ok(())
    }

    fn encode_texts(&self, tape: &mut Tape, store: &ParamStore, tower: Tower, ids: &[usize]) -> Result<Var> {
        let encs: Vec<_> = ids.iter().map(|&t| &self.prep.texts[t].enc).collect();
        encode_batch(tape, store, &self.enc, tower, &encs)
    }

    /// Forward-only encoder outputs of all graph query and ad nodes.
    pub fn node_cache(&self, store: &ParamStore) -> Result<Option<NodeCache>> {
        if self.arm != Arm::Full {
            return Ok(None);
        }
        let run = |tower, texts: &[usize]| -> Result<Option<Tensor>> {
            if texts.is_empty() {
                return Ok(None);
            }
            let mut data = Vec::with_capacity(texts.len() * self.d());
            for chunk in texts.chunks(CACHE_CHUNK) {
                let mut tape = Tape::new();
                let z = self.encode_texts(&mut tape, store, tower, chunk)?;
                data.extend_from_slice(tape.value(z).data());
            }
            Ok(Some(Tensor::matrix(texts.len(), self.d(), data)?))
        };
        Ok(Some(NodeCache {
            query: run(Tower::Query, &self.prep.query_node_text)?,
            ad: run(Tower::Ad, &self.prep.ad_node_text)?.ok_or_else(|| Error::domain("no ads"))?,
        }))
    }

    /// One input matrix with a row per source, blocks deduplicated.
    fn inputs(&self, tape: &mut Tape, store: &ParamStore, cache: Option<&NodeCache>, srcs: &[Src]) -> Result<Var> {
        let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        let mut slot: HashMap<Src, (u8, usize)> = HashMap::new();
        for &s in srcs {
            if slot.contains_key(&s) {
                continue;
            }
            let (g, id) = match s {
                Src::Query(t) => (0, t),
                Src::Ad(t) => (1, t),
                Src::CachedQuery(n) => (2, n),
                Src::CachedAd(n) => (3, n),
                Src::User(u) => (4, u),
                Src::FreeQuery(n) => (5, n),
                Src::FreeAd(n) => (6, n),
                Src::Unk => (7, 0),
            };
            let list = groups.entry(g).or_default();
            slot.insert(s, (g, list.len()));
            list.push(id);
        }
        let mut blocks = Vec::new();
        let mut base: HashMap<u8, usize> = HashMap::new();
        let mut rows = 0;
        for (&g, ids) in &groups {
            let cached = |t: Option<&Tensor>| -> Result<Tensor> {
                let t = t.ok_or_else(|| Error::contract("node cache required for cached inputs"))?;
                let data: Vec<f64> = ids.iter().flat_map(|&i| t.row(i).to_vec()).collect();
                Tensor::matrix(ids.len(), self.d(), data)
            };
            let b = match g {
                0 => self.encode_texts(tape, store, Tower::Query, ids)?,
                1 => self.encode_texts(tape, store, Tower::Ad, ids)?,
                2 => {
                    let t = cached(cache.and_then(|c| c.query.as_ref()))?;
                    tape.constant(t)
                }
                3 => {
                    let t = cached(cache.map(|c| &c.ad))?;
                    tape.constant(t)
                }
                _ => {
                    let name = [USER_EMB, FREE_QUERY, FREE_AD, FREE_UNK][g as usize - 4];
                    let p = tape.param(store, name)?;
                    tape.gather_rows(p, ids.clone())?
                }
            };
            base.insert(g, rows);
            rows += ids.len();
            blocks.push(b);
        }
        let all = if blocks.len() == 1 { blocks[0] } else { tape.concat(&blocks, 0)? };
        let order = srcs
            .iter()
            .map(|s| {
                let (g, i) = slot[s];
                base[&g] + i
            })
            .collect();
        tape.gather_rows(all, order)
    }

    fn own_src(&self, occ: usize) -> Src {
        let o = &self.prep.occs[occ];
        match self.arm {
            Arm::GatOnly => o.node.map(Src::FreeQuery).unwrap_or(Src::Unk),
            _ => Src::Query(o.text),
        }
    }

    /// Context queries that are graph nodes are encoded live from their
    /// node text.
    fn context_node_src(&self, q: usize) -> Src {
        match self.arm {
            Arm::GatOnly => Src::FreeQuery(q),
            _ => Src::Query(self.prep.query_node_text[q]),
        }
    }

    fn text_src(&self, text: usize) -> Src {
        match self.arm {
            Arm::GatOnly => Src::Unk,
            _ => Src::Query(text),
        }
    }

    /// Source of a real graph row. `live_ads` run the encoder with
    /// gradients; other nodes read the cache.
    fn node_src(&self, row: usize, live_ads: &HashSet<usize>) -> Src {
        let nq = self.prep.graph.node_count(NodeKind::Query);
        let na = self.prep.graph.node_count(NodeKind::Ad);
        match (row, self.arm) {
            (r, Arm::GatOnly) if r < nq => Src::FreeQuery(r),
            (r, _) if r < nq => Src::CachedQuery(r),
            (r, Arm::GatOnly) if r < nq + na => Src::FreeAd(r - nq),
            (r, _) if r < nq + na && live_ads.contains(&(r - nq)) => Src::Ad(self.prep.ad_node_text[r - nq]),
            (r, _) if r < nq + na => Src::CachedAd(r - nq),
            (r, _) => Src::User(r - nq - na),
        }
    }

    /// Refined embeddings of occurrences `occs` and graph ads `ads`.
    /// Queries without usable context keep their unrefined embedding.
    /// `masked` holds `(query node, ad node)` edges to ignore.
    pub fn refine(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cache: Option<&NodeCache>,
        occs: &[usize],
        ads: &[usize],
        live_ads: bool,
        masked: &[(usize, usize)],
    ) -> Result<(Option<Var>, Option<Var>)> {
        if self.arm == Arm::EncoderOnly {
            let zq = if occs.is_empty() {
                None
            } else {
                let srcs: Vec<Src> = occs.iter().map(|&o| self.own_src(o)).collect();
                Some(self.inputs(tape, store, None, &srcs)?)
            };
            let za = if ads.is_empty() {
                None
            } else {
                let srcs: Vec<Src> = ads.iter().map(|&a| Src::Ad(self.prep.ad_node_text[a])).collect();
                Some(self.inputs(tape, store, None, &srcs)?)
            };
            return Ok((zq, za));
        }
        let nq = self.prep.graph.node_count(NodeKind::Query);
        let zq = if occs.is_empty() {
            None
        } else {
            Some(self.refine_queries(tape, store, cache, occs)?)
        };
        let za = if ads.is_empty() {
            None
        } else {
            let ad_rows: Vec<usize> = ads.iter().map(|&a| nq + a).collect();
            let live: HashSet<usize> = if live_ads { ads.iter().copied().collect() } else { HashSet::new() };
            let hidden: HashSet<(usize, usize)> = masked.iter().map(|&(q, a)| (q, nq + a)).collect();
            let p = Plan::new(&self.prep.prop, &ad_rows, &self.gat, &hidden)?;
            let srcs: Vec<Src> = p.inputs().iter().map(|&r| self.node_src(r, &live)).collect();
            let x = self.inputs(tape, store, cache, &srcs)?;
            let out = propagate(tape, store, &self.gat, &p, x)?.embeddings;
            let order = ad_rows.iter().map(|&r| p.output_position(r).expect("target row")).collect();
            Some(tape.gather_rows(out, order)?)
        };
        Ok((zq, za))
    }

    /// Query occurrences are not graph rows. Each one with session context
    /// takes a single step of the last GAT layer over its own input and the
    /// inputs of its context queries; the rest keep their input.
    fn refine_queries(&self, tape: &mut Tape, store: &ParamStore, cache: Option<&NodeCache>, occs: &[usize]) -> Result<Var> {
        let mut srcs: Vec<Src> = Vec::new();
        let mut row_of: HashMap<Src, usize> = HashMap::new();
        let mut row = |s: Src, srcs: &mut Vec<Src>| {
            *row_of.entry(s).or_insert_with(|| {
                srcs.push(s);
                srcs.len() - 1
            })
        };
        let slot = EdgeType::QqCooccur.index();
        let mut lists: Vec<Option<Vec<InEdge>>> = Vec::with_capacity(occs.len());
        for &o in occs {
            let ctx = &self.prep.occs[o].context;
            if !self.context_refine || ctx.is_empty() {
                lists.push(None);
                continue;
            }
            let edges = ctx
                .iter()
                .map(|c| {
                    let s = match *c {
                        Context::Node(q) => self.context_node_src(q),
                        Context::Text(t) => self.text_src(t),
                    };
                    InEdge { src: row(s, &mut srcs), slot, weight: 1.0 }
                })
                .collect();
            lists.push(Some(edges));
        }
        let n = srcs.len();
        let mut pg = PropGraph::from_edges(n, &[])?;
        let mut targets = Vec::new();
        let mut order = Vec::with_capacity(occs.len());
        let mut raw = Vec::new();
        for (&o, edges) in occs.iter().zip(&lists) {
            match edges {
                Some(e) => {
                    let r = pg.add_receiver(e)?;
                    srcs.push(self.own_src(o));
                    targets.push(r);
                    order.push(Ok(r));
                }
                None => {
                    raw.push(self.own_src(o));
                    order.push(Err(raw.len() - 1));
                }
            }
        }
        let mut blocks = Vec::new();
        let mut n_out = 0;
        let mut plan = None;
        if !targets.is_empty() {
            let step = GatConfig { n_layers: 1, ..self.gat.clone() };
            let p = Plan::new(&pg, &targets, &step, &HashSet::new())?;
            let inputs: Vec<Src> = p.inputs().iter().map(|&r| srcs[r]).collect();
            let x = self.inputs(tape, store, cache, &inputs)?;
            let out = propagate_from(tape, store, &self.gat, &p, x, self.gat.n_layers - 1)?.embeddings;
            n_out = p.outputs().len();
            blocks.push(out);
            plan = Some(p);
        }
        if !raw.is_empty() {
            blocks.push(self.inputs(tape, store, cache, &raw)?);
        }
        let all = if blocks.len() == 1 { blocks[0] } else { tape.concat(&blocks, 0)? };
        let order = order
            .into_iter()
            .map(|k| match k {
                Ok(r) => plan.as_ref().and_then(|p| p.output_position(r)).expect("target row"),
                Err(i) => n_out + i,
            })
            .collect();
        tape.gather_rows(all, order)
    }

    /// Unrefined reference embeddings of translation text ids.
    pub fn references(&self, tape: &mut Tape, store: &ParamStore, texts: &[usize]) -> Result<Var> {
        let srcs: Vec<Src> = texts
            .iter()
            .map(|&t| match self.arm {
                Arm::GatOnly => {
                    let key = crate::adgraph::query_key(&self.prep.texts[t].text);
                    self.prep
                        .graph
                        .lookup(NodeKind::Query, &key)
                        .map(|n| Src::FreeQuery(n.id))
                        .unwrap_or(Src::Unk)
                }
                _ => Src::Query(t),
            })
            .collect();
        self.inputs(tape, store, None, &srcs)
    }

    /// Embeddings entering the loss for a batch of occurrences: refined
    /// query, refined positive ad and raw reference translation. The click
    /// edge between an occurrence's own query node and its positive ad is
    /// hidden, since unseen queries never have one.
    pub fn batch(&self, tape: &mut Tape, store: &ParamStore, cache: Option<&NodeCache>, occs: &[usize]) -> Result<BatchEmbeddings> {
        let ads: Vec<usize> = occs.iter().map(|&o| self.prep.occs[o].positive).collect();
        let masked: Vec<(usize, usize)> = occs
            .iter()
            .filter_map(|&o| self.prep.occs[o].node.map(|q| (q, self.prep.occs[o].positive)))
            .collect();
        let (zq, za) = self.refine(tape, store, cache, occs, &ads, true, &masked)?;
        let refs: Vec<usize> = occs.iter().map(|&o| self.prep.occs[o].translation).collect();
        let zref = self.references(tape, store, &refs)?;
        Ok(BatchEmbeddings {
            zq: zq.expect("non-empty batch"),
            za: za.expect("non-empty batch"),
            zref,
        })
    }
}
