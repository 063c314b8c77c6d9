use std::collections::BTreeMap;

use crate::adgraph::NodeKind;
use crate::align::cosine_sim;
use crate::error::{Error, Result};
use crate::evalkit::{corpus_bleu, nearest, retrieval_eval, simulate_ctr_cvr, AdIndex, MetricsReport, K_LIST};
use crate::numkit::{Checkpoint, ParamStore, Tape, Var};
use crate::textpipe::tokenize;

use super::config::RunConfig;
use super::data::Prepared;
use super::model::{Model, NodeCache};

const EVAL_CHUNK: usize = 256;

fn rows(tape: &Tape, v: Var) -> Vec<Vec<f64>> {
    let t = tape.value(v);
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Parameters of `ckpt` after checking they belong to `cfg.arm`.
pub fn checked_params(model: &Model, ckpt: &Checkpoint) -> Result<ParamStore> {
    let arm = ckpt.hparams.get("arm").map(String::as_str).unwrap_or("");
    if arm != model.arm.to_string() {
        return Err(Error::contract(format!("checkpoint arm {arm:?} does not match config arm {}", model.arm)));
    }
    model.check_params(&ckpt.params)?;
    Ok(ckpt.params.clone())
}

/// Embeddings computed once per evaluation.
pub struct Embedded {
    pub queries: Vec<Vec<f64>>,
    pub ads: Vec<Vec<f64>>,
    pub refs: Vec<Vec<f64>>,
}

pub fn refined_queries(model: &Model, store: &ParamStore, cache: Option<&NodeCache>, occs: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(occs.len());
    for chunk in occs.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let (zq, _) = model.refine(&mut tape, store, cache, chunk, &[], false, &[])?;
        out.extend(rows(&tape, zq.expect("non-empty chunk")));
    }
    Ok(out)
}

pub fn refined_ads(model: &Model, store: &ParamStore, cache: Option<&NodeCache>) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..model.prep.graph.node_count(NodeKind::Ad)).collect();
    let mut out = Vec::with_capacity(all.len());
    for chunk in all.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let (_, za) = model.refine(&mut tape, store, cache, &[], chunk, false, &[])?;
        out.extend(rows(&tape, za.expect("non-empty chunk")));
    }
    Ok(out)
}

pub fn reference_rows(model: &Model, store: &ParamStore, texts: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let z = model.references(&mut tape, store, chunk)?;
        out.extend(rows(&tape, z));
    }
    Ok(out)
}

/// All metrics on the test split for the parameters in `ckpt`.
pub fn evaluate(cfg: &RunConfig, prep: &Prepared, ckpt: &Checkpoint) -> Result<MetricsReport> {
    let model = Model::new(cfg, prep);
    let store = checked_params(&model, ckpt)?;
    let test = &prep.split.test;
    if test.is_empty() {
        return Err(Error::config("the test split is empty"));
    }
    let cache = model.node_cache(&store)?;
    let queries = refined_queries(&model, &store, cache.as_ref(), test)?;
    let ads = refined_ads(&model, &store, cache.as_ref())?;
    let refs_ids: Vec<usize> = test.iter().map(|&o| prep.occs[o].translation).collect();
    let refs = reference_rows(&model, &store, &refs_ids)?;
    report(cfg, prep, &Embedded { queries, ads, refs }, &model, &store)
}

fn report(cfg: &RunConfig, prep: &Prepared, e: &Embedded, model: &Model, store: &ParamStore) -> Result<MetricsReport> {
    let test = &prep.split.test;
    let mut sim = 0.0;
    for (q, r) in e.queries.iter().zip(&e.refs) {
        sim += cosine_sim(q, r)?;
    }
    let semantic_similarity = sim / test.len() as f64;

    let mut tables: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for (lang, ids) in &prep.translation_table {
        tables.insert(lang.as_str(), reference_rows(model, store, ids)?);
    }
    let mut hyps = Vec::with_capacity(test.len());
    let mut gold = Vec::with_capacity(test.len());
    for (k, &o) in test.iter().enumerate() {
        let occ = &prep.occs[o];
        let lang = occ.translation_lang.as_str();
        let pick = nearest(&e.queries[k], &tables[lang])?;
        hyps.push(tokenize(&prep.texts[prep.translation_table[lang][pick]].text));
        gold.push(tokenize(&prep.texts[occ.translation].text));
    }
    let bleu = corpus_bleu(&hyps, &gold, 4)?.score;

    let ids = prep.graph.labels(NodeKind::Ad).to_vec();
    let index = AdIndex::new(ids, &e.ads)?;
    let r = retrieval_eval(&e.queries, &index, &K_LIST, |q, a| prep.ad_concept[a] == prep.occs[test[q]].concept)?;
    let click_model = prep.dataset.manifest.config.as_ref().map(|c| c.click_model).unwrap_or(cfg.synth.click_model);
    let traffic = simulate_ctr_cvr(&r.top1_relevant, &click_model, cfg.n_impressions, cfg.seed)?;
    let poly: Vec<bool> = test
        .iter()
        .zip(&r.top1_relevant)
        .filter(|(&o, _)| prep.occs[o].polysemous)
        .map(|(_, &hit)| hit)
        .collect();
    let polysemous_top1 = if poly.is_empty() {
        f64::NAN
    } else {
        poly.iter().filter(|&&h| h).count() as f64 / poly.len() as f64
    };
    Ok(MetricsReport {
        arm: cfg.arm.to_string(),
        seed: cfg.seed,
        bleu,
        semantic_similarity,
        recall: r.recall,
        mrr: r.mrr,
        ctr: traffic.ctr,
        cvr: traffic.cvr,
        polysemous_top1,
        n_queries: test.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedAd {
    pub ad_id: String,
    pub score: f64,
    pub text: String,
}

/// Top-`k` ads for a free-text query, best first. The query has no
/// session, so it is not refined over context.
pub fn retrieve(cfg: &RunConfig, prep: &mut Prepared, ckpt: &Checkpoint, text: &str, lang: &str, k: usize) -> Result<Vec<RetrievedAd>> {
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    let t = prep.intern(text, lang)?;
    let prep: &Prepared = prep;
    let model = Model::new(cfg, prep);
    let store = checked_params(&model, ckpt)?;
    let cache = model.node_cache(&store)?;
    let ads = refined_ads(&model, &store, cache.as_ref())?;
    let mut tape = Tape::new();
    // an unrefined query embeds exactly like a reference text
    let z = model.references(&mut tape, &store, &[t])?;
    let q = tape.value(z).row(0).to_vec();
    let index = AdIndex::new(prep.graph.labels(NodeKind::Ad).to_vec(), &ads)?;
    let ranked = index.rank(&q)?;
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(a, score)| RetrievedAd {
            ad_id: index.id(a).to_string(),
            score,
            text: prep.texts[prep.ad_node_text[a]].text.clone(),
        })
        .collect())
}
