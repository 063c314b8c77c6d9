use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::adgraph::{build_graph, query_key, BuildOptions, HeteroGraph, InteractionLogs, NodeKind, SessionRecord};
use crate::error::{Error, Result};
use crate::gatprop::PropGraph;
use crate::synthgen::Dataset;
use crate::textpipe::{encode_text, Encoded, PipelineAssets};

use super::config::RunConfig;
use super::split::{split_data, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct TextEntry {
    pub text: String,
    pub lang: String,
    pub enc: Encoded,
}

/// A session neighbour of an occurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Context {
    /// Query node of the training graph.
    Node(usize),
    /// Query text outside the graph.
    Text(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccInfo {
    pub key: String,
    pub text: usize,
    pub lang: String,
    pub node: Option<usize>,
    pub translation: usize,
    pub translation_lang: String,
    pub concept: usize,
    pub polysemous: bool,
    /// Graph ad id of the shown concept-matched ad.
    pub positive: usize,
    /// Other distinct queries of the same session, in session order.
    pub context: Vec<Context>,
}

/// Dataset, split, train-only graph and encoded texts, ready for a run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub assets: PipelineAssets,
    pub split: Split,
    /// Query key of every occurrence, the unit of the split.
    pub keys: Vec<String>,
    pub graph: HeteroGraph,
    pub prop: PropGraph,
    pub texts: Vec<TextEntry>,
    pub occs: Vec<OccInfo>,
    pub query_node_text: Vec<usize>,
    pub ad_node_text: Vec<usize>,
    pub ad_concept: Vec<usize>,
    /// Distinct reference translations per language, as text ids.
    pub translation_table: BTreeMap<String, Vec<usize>>,
    pub(crate) text_index: HashMap<(String, String), usize>,
    pub max_len: usize,
}

/// Interaction logs restricted to queries whose key is in `keep`.
pub fn restrict_logs(logs: &InteractionLogs, keep: &BTreeSet<&str>) -> InteractionLogs {
    InteractionLogs {
        clicks: logs
            .clicks
            .iter()
            .filter(|c| keep.contains(query_key(&c.query_text).as_str()))
            .cloned()
            .collect(),
        sessions: logs
            .sessions
            .iter()
            .map(|s| SessionRecord {
                user_id: s.user_id.clone(),
                query_text: s
                    .query_text
                    .iter()
                    .filter(|q| keep.contains(query_key(q).as_str()))
                    .cloned()
                    .collect(),
            })
            .filter(|s| !s.query_text.is_empty())
            .collect(),
    }
}

/// Split of the dataset's occurrences by query key.
pub fn split_occurrences(dataset: &Dataset, cfg: &RunConfig) -> Result<(Vec<String>, Split)> {
    if dataset.occurrences.is_empty() {
        return Err(Error::domain("dataset has no query occurrences"));
    }
    let keys: Vec<String> = dataset.occurrences.iter().map(|o| query_key(&o.text)).collect();
    let split = split_data(&keys, cfg.fractions, cfg.split_seed())?;
    Ok((keys, split))
}

/// Graph over the train split's clicks and sessions, with every catalog ad.
pub fn train_graph(dataset: &Dataset, keys: &[String], split: &Split, cfg: &RunConfig) -> Result<HeteroGraph> {
    let keep: BTreeSet<&str> = split.train.iter().map(|&i| keys[i].as_str()).collect();
    let logs = restrict_logs(&dataset.interaction_logs(), &keep);
    let opts = BuildOptions {
        ad_catalog: Some(dataset.ads.iter().map(|a| a.id.clone()).collect()),
        include_impressions: cfg.include_impressions,
    };
    build_graph(&logs, &opts)
}

impl Prepared {
    pub fn new(dataset: Dataset, cfg: &RunConfig) -> Result<Self> {
        Self::with_graph(dataset, cfg, None)
    }

    /// Uses `graph` when given instead of rebuilding it from the train split.
    pub fn with_graph(dataset: Dataset, cfg: &RunConfig, graph: Option<HeteroGraph>) -> Result<Self> {
        let (keys, split) = split_occurrences(&dataset, cfg)?;
        let graph = match graph {
            Some(g) => g,
            None => train_graph(&dataset, &keys, &split, cfg)?,
        };
        let mut corpus: Vec<(&str, &str)> = dataset.ads.iter().map(|a| (a.lang.as_str(), a.text.as_str())).collect();
        for &i in &split.train {
            let o = &dataset.occurrences[i];
            corpus.push((o.lang.as_str(), o.text.as_str()));
            corpus.push((o.translation_lang.as_str(), o.translation.as_str()));
        }
        let assets = PipelineAssets::build(corpus, dataset.stopwords.clone(), cfg.bpe_merges)?;

        let mut prep = Self {
            prop: PropGraph::from_hetero(&graph),
            assets,
            split,
            keys,
            graph,
            texts: Vec::new(),
            occs: Vec::new(),
            query_node_text: Vec::new(),
            ad_node_text: Vec::new(),
            ad_concept: Vec::new(),
            translation_table: BTreeMap::new(),
            text_index: HashMap::new(),
            max_len: cfg.max_len,
            dataset: Dataset::default(),
        };

        let mut key_lang: HashMap<String, String> = HashMap::new();
        for (o, k) in dataset.occurrences.iter().zip(&prep.keys) {
            key_lang.entry(k.clone()).or_insert_with(|| o.lang.clone());
        }
        let fallback = dataset.languages().first().cloned().unwrap_or_default();
        let labels: Vec<String> = prep.graph.labels(NodeKind::Query).to_vec();
        for label in &labels {
            let lang = key_lang.get(label).cloned().unwrap_or_else(|| {
                log::warn!("query node {label:?} has no occurrence; encoding as {fallback}");
                fallback.clone()
            });
            let t = prep.intern(label, &lang)?;
            prep.query_node_text.push(t);
        }
        let ad_rows: HashMap<&str, usize> = dataset.ads.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();
        let ad_labels: Vec<String> = prep.graph.labels(NodeKind::Ad).to_vec();
        for label in &ad_labels {
            let ad = &dataset.ads[*ad_rows
                .get(label.as_str())
                .ok_or_else(|| Error::Lookup(format!("graph ad {label} is not in the catalog")))?];
            let t = prep.intern(&ad.text, &ad.lang)?;
            prep.ad_node_text.push(t);
            prep.ad_concept.push(ad.concept);
        }
        if ad_labels.len() != dataset.ads.len() {
            return Err(Error::contract("every catalog ad must be a graph node"));
        }

        let mut positive: HashMap<(usize, usize), &str> = HashMap::new();
        for p in dataset.pairs.iter().filter(|p| p.label) {
            positive.entry((p.session_id, p.position)).or_insert(p.ad_id.as_str());
        }
        let mut sessions: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, o) in dataset.occurrences.iter().enumerate() {
            sessions.entry(o.session_id).or_default().push(i);
        }
        let mut tables: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        for (i, o) in dataset.occurrences.iter().enumerate() {
            let key = prep.keys[i].clone();
            let text = prep.intern(&o.text, &o.lang)?;
            let translation = prep.intern(&o.translation, &o.translation_lang)?;
            tables.entry(o.translation_lang.clone()).or_default().insert(translation);
            let ad_id = positive.get(&(o.session_id, o.position)).ok_or_else(|| {
                Error::Lookup(format!("occurrence {}:{} has no matched ad", o.session_id, o.position))
            })?;
            let positive = prep.graph.lookup(NodeKind::Ad, ad_id).expect("catalog ad is a node").id;
            let mut seen = BTreeSet::from([key.clone()]);
            let mut context = Vec::new();
            for &j in &sessions[&o.session_id] {
                if !seen.insert(prep.keys[j].clone()) {
                    continue;
                }
                let other = &dataset.occurrences[j];
                context.push(match prep.graph.lookup(NodeKind::Query, &prep.keys[j]) {
                    Some(n) => Context::Node(n.id),
                    None => Context::Text(prep.intern(&other.text, &other.lang)?),
                });
            }
            prep.occs.push(OccInfo {
                node: prep.graph.lookup(NodeKind::Query, &key).map(|n| n.id),
                key,
                text,
                lang: o.lang.clone(),
                translation,
                translation_lang: o.translation_lang.clone(),
                concept: o.concept,
                polysemous: o.polysemous,
                positive,
                context,
            });
        }
        prep.translation_table = tables.into_iter().map(|(l, s)| (l, s.into_iter().collect())).collect();
        prep.dataset = dataset;
        Ok(prep)
    }

    /// Text id of `(text, lang)`, encoding it on first sight.
    pub fn intern(&mut self, text: &str, lang: &str) -> Result<usize> {
        if let Some(&i) = self.text_index.get(&(text.to_string(), lang.to_string())) {
            return Ok(i);
        }
        let enc = encode_text(text, lang, &self.assets, self.max_len)?;
        self.texts.push(TextEntry {
            text: text.to_string(),
            lang: lang.to_string(),
            enc,
        });
        let i = self.texts.len() - 1;
        self.text_index.insert((text.to_string(), lang.to_string()), i);
        Ok(i)
    }

    pub fn vocab_size(&self) -> usize {
        self.assets.vocab.len()
    }
}
