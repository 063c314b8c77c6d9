//! Translation, similarity, retrieval and simulated-traffic metrics.

use std::collections::{BTreeMap, HashMap};

use crate::align::cosine_sim;
use crate::error::{Error, Result};
use crate::numkit::SeededRng;
use crate::synthgen::ClickModel;

/// Smoothing constant for zero or empty n-gram precisions.
pub const BLEU_EPS: f64 = 1e-9;
pub const K_LIST: [usize; 3] = [1, 5, 10];

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
}

impl BleuScore {
    pub fn x100(&self) -> f64 {
        self.score * 100.0
    }
}

fn ngram_counts<'a>(toks: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus BLEU over paired hypotheses and references: pooled clipped
/// n-gram precisions for n = 1..=max_n, geometric mean, pooled brevity
/// penalty. A zero numerator or denominator becomes `(m + eps) / (d + eps)`.
pub fn corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<BleuScore> {
    if max_n == 0 {
        return Err(Error::config("max_n must be at least 1"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::shape(format!("{} hypotheses vs {} references", hyps.len(), refs.len())));
    }
    if refs.is_empty() || refs.iter().any(Vec::is_empty) {
        return Err(Error::domain("BLEU needs non-empty references"));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &d)| {
            if m == 0 || d == 0 {
                (m as f64 + BLEU_EPS) / (d as f64 + BLEU_EPS)
            } else {
                m as f64 / d as f64
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
    Ok(BleuScore {
        score: brevity_penalty * log_mean.exp(),
        precisions,
        brevity_penalty,
    })
}

/// BLEU of a single hypothesis against a single reference.
pub fn bleu(hyp: &[String], reference: &[String], max_n: usize) -> Result<f64> {
    Ok(corpus_bleu(&[hyp.to_vec()], &[reference.to_vec()], max_n)?.score)
}

pub fn semantic_similarity_score(pred: &[f64], reference: &[f64]) -> Result<f64> {
    cosine_sim(pred, reference)
}

/// Mean cosine over `(prediction, reference)` pairs.
pub fn mean_semantic_similarity(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::domain("no pairs to score"));
    }
    let mut s = 0.0;
    for (p, r) in pairs {
        s += cosine_sim(p, r)?;
    }
    Ok(s / pairs.len() as f64)
}

/// Index of the highest-cosine entry; ties go to the lower index.
pub fn nearest(z: &[f64], table: &[Vec<f64>]) -> Result<usize> {
    if table.is_empty() {
        return Err(Error::domain("nearest-neighbour lookup in an empty table"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, t) in table.iter().enumerate() {
        let s = cosine_sim(z, t)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Unit-normalized ad embeddings with their ids.
#[derive(Clone, Debug)]
pub struct AdIndex {
    ids: Vec<String>,
    dim: usize,
    unit: Vec<f64>,
}

impl AdIndex {
    pub fn new(ids: Vec<String>, embeddings: &[Vec<f64>]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::domain("empty ad index"));
        }
        if ids.len() != embeddings.len() {
            return Err(Error::shape("one embedding per ad id"));
        }
        let dim = embeddings[0].len();
        let mut unit = Vec::with_capacity(ids.len() * dim);
        for (id, e) in ids.iter().zip(embeddings) {
            if e.len() != dim {
                return Err(Error::shape("ad embeddings differ in width"));
            }
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::domain(format!("ad {id} has a zero embedding")));
            }
            unit.extend(e.iter().map(|v| v / n));
        }
        Ok(Self { ids, dim, unit })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    /// `(ad index, cosine)` best first; equal scores order by ad id.
    pub fn rank(&self, query: &[f64]) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim {
            return Err(Error::shape(format!("query width {} vs index {}", query.len(), self.dim)));
        }
        let n = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::domain("zero query embedding"));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.ids.len())
            .map(|i| {
                let row = &self.unit[i * self.dim..(i + 1) * self.dim];
                (i, row.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / n)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        Ok(scored)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub recall: BTreeMap<usize, f64>,
    pub mrr: f64,
    /// Per query, whether the top-1 ad is relevant.
    pub top1_relevant: Vec<bool>,
}

/// Recall@k (some relevant ad within the top k) and mean reciprocal rank
/// of the first relevant ad. `relevant(q, ad)` decides relevance.
pub fn retrieval_eval(
    queries: &[Vec<f64>],
    index: &AdIndex,
    ks: &[usize],
    relevant: impl Fn(usize, usize) -> bool,
) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::domain("no queries to evaluate"));
    }
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut rr = 0.0;
    let mut top1 = Vec::with_capacity(queries.len());
    for (qi, q) in queries.iter().enumerate() {
        let ranked = index.rank(q)?;
        let first = ranked
            .iter()
            .position(|&(a, _)| relevant(qi, a))
            .ok_or_else(|| Error::domain(format!("query {qi} has no relevant ad")))?;
        rr += 1.0 / (first + 1) as f64;
        top1.push(first == 0);
        for (&k, h) in hits.iter_mut() {
            if first < k {
                *h += 1;
            }
        }
    }
    let n = queries.len() as f64;
    Ok(RetrievalReport {
        recall: hits.into_iter().map(|(k, h)| (k, h as f64 / n)).collect(),
        mrr: rr / n,
        top1_relevant: top1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficSim {
    pub impressions: usize,
    pub clicks: usize,
    pub conversions: usize,
    pub ctr: f64,
    pub cvr: f64,
}

/// Simulated traffic: each impression draws a query uniformly, shows its
/// top-1 ad and samples click then conversion from the click model.
/// `top1_matched[q]` says whether query `q`'s top ad matches its intent.
pub fn simulate_ctr_cvr(top1_matched: &[bool], model: &ClickModel, n_impressions: usize, seed: u64) -> Result<TrafficSim> {
    if n_impressions == 0 {
        return Err(Error::domain("n_impressions must be positive"));
    }
    if top1_matched.is_empty() {
        return Err(Error::domain("no ranked queries to show"));
    }
    model.validate()?;
    let mut rng = SeededRng::fork(seed, "evalkit.traffic");
    let (mut clicks, mut conversions) = (0, 0);
    for _ in 0..n_impressions {
        let m = top1_matched[rng.below(top1_matched.len())];
        if rng.bernoulli(model.click_prob(m)) {
            clicks += 1;
            if rng.bernoulli(model.conversion_prob(m)) {
                conversions += 1;
            }
        }
    }
    Ok(TrafficSim {
        impressions: n_impressions,
        clicks,
        conversions,
        ctr: clicks as f64 / n_impressions as f64,
        cvr: if clicks == 0 { 0.0 } else { conversions as f64 / clicks as f64 },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub arm: String,
    pub seed: u64,
    pub bleu: f64,
    pub semantic_similarity: f64,
    pub recall: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub ctr: f64,
    pub cvr: f64,
    /// Concept-correct top-1 rate over polysemous test queries.
    pub polysemous_top1: f64,
    pub n_queries: usize,
}

pub const REPORT_COLUMNS: [&str; 13] = [
    "arm",
    "seed",
    "bleu",
    "bleu_x100",
    "semantic_similarity",
    "recall@1",
    "recall@5",
    "recall@10",
    "mrr",
    "ctr",
    "cvr",
    "polysemous_top1",
    "n_queries",
];

impl MetricsReport {
    pub fn tsv_header() -> String {
        REPORT_COLUMNS.join("\t")
    }

    pub fn tsv_row(&self) -> String {
        let r = |k| self.recall.get(&k).copied().unwrap_or(f64::NAN);
        let cells = [
            self.arm.clone(),
            self.seed.to_string(),
            self.bleu.to_string(),
            (self.bleu * 100.0).to_string(),
            self.semantic_similarity.to_string(),
            r(1).to_string(),
            r(5).to_string(),
            r(10).to_string(),
            self.mrr.to_string(),
            self.ctr.to_string(),
            self.cvr.to_string(),
            self.polysemous_top1.to_string(),
            self.n_queries.to_string(),
        ];
        cells.join("\t")
    }

    pub fn from_tsv_row(line: &str, file: &str, line_no: usize) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != REPORT_COLUMNS.len() {
            return Err(Error::parse(file, line_no, format!("expected {} columns", REPORT_COLUMNS.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::parse(file, line_no, format!("bad {} value {:?}", REPORT_COLUMNS[i], f[i])))
        };
        Ok(Self {
            arm: f[0].to_string(),
            seed: f[1].parse().map_err(|_| Error::parse(file, line_no, "bad seed"))?,
            bleu: num(2)?,
            semantic_similarity: num(4)?,
            recall: [(1, num(5)?), (5, num(6)?), (10, num(7)?)].into(),
            mrr: num(8)?,
            ctr: num(9)?,
            cvr: num(10)?,
            polysemous_top1: num(11)?,
            n_queries: f[12].parse().map_err(|_| Error::parse(file, line_no, "bad count"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bleu_examples() {
        let r = toks("the cat sat on the mat");
        assert!((bleu(&r, &r, 4).unwrap() - 1.0).abs() < 1e-12);
        assert!(bleu(&toks("x y z w"), &toks("a b c d"), 4).unwrap() < 1e-6);
        let s = corpus_bleu(&[toks("a b c d")], &[toks("a b c e")], 4).unwrap();
        let p4 = BLEU_EPS / (1.0 + BLEU_EPS);
        assert_eq!(s.precisions, vec![0.75, 2.0 / 3.0, 0.5, p4]);
        assert_eq!(s.brevity_penalty, 1.0);
        let want = (0.75f64.ln() + (2.0f64 / 3.0).ln() + 0.5f64.ln() + p4.ln()) / 4.0;
        assert!((s.score - want.exp()).abs() < 1e-18);
        assert!(matches!(bleu(&toks("a"), &[], 4), Err(Error::Domain(_))));
    }

    #[test]
    fn bleu_clips_and_penalizes_brevity() {
        let s = corpus_bleu(&[toks("the the the")], &[toks("the cat")], 1).unwrap();
        assert!((s.precisions[0] - 1.0 / 3.0).abs() < 1e-15);
        let s = corpus_bleu(&[toks("a")], &[toks("a b")], 1).unwrap();
        assert!((s.brevity_penalty - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn semantic_similarity_mean() {
        let pairs = vec![(vec![1.0, 0.0], vec![2.0, 0.0]), (vec![1.0, 0.0], vec![0.0, 1.0])];
        assert!((mean_semantic_similarity(&pairs).unwrap() - 0.5).abs() < 1e-15);
        assert!(semantic_similarity_score(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn retrieval_examples() {
        let ids = vec!["a0".to_string(), "a1".into(), "a2".into(), "a3".into()];
        let embs = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.8, 0.3], vec![-1.0, 0.0]];
        let index = AdIndex::new(ids, &embs).unwrap();
        let q = vec![vec![1.0, 0.0]];
        let r = retrieval_eval(&q, &index, &K_LIST, |_, a| a == 2).unwrap();
        assert!((r.mrr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall[&1], 0.0);
        assert_eq!(r.recall[&5], 1.0);
        let r = retrieval_eval(&q, &index, &[1, 4], |_, a| a == 0).unwrap();
        assert_eq!((r.recall[&1], r.mrr), (1.0, 1.0));
        assert!(AdIndex::new(vec![], &[]).is_err());
    }

    #[test]
    fn ties_break_by_ad_id() {
        let ids = vec!["b".to_string(), "a".into()];
        let index = AdIndex::new(ids, &[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let ranked = index.rank(&[1.0, 1.0]).unwrap();
        assert_eq!(ranked[0].0, 1);
    }

    #[test]
    fn traffic_simulation_contracts() {
        let m = ClickModel::default();
        assert!(matches!(simulate_ctr_cvr(&[true], &m, 0, 1), Err(Error::Domain(_))));
        let a = simulate_ctr_cvr(&[true, false], &m, 1000, 3).unwrap();
        assert_eq!(a, simulate_ctr_cvr(&[true, false], &m, 1000, 3).unwrap());
        let none = ClickModel { p_match: 0.0, p_mismatch: 0.0, ..m };
        let z = simulate_ctr_cvr(&[true], &none, 100, 3).unwrap();
        assert_eq!((z.ctr, z.cvr), (0.0, 0.0));
    }

    #[test]
    fn report_row_round_trip() {
        let r = MetricsReport {
            arm: "FULL".into(),
            seed: 3,
            bleu: 0.25,
            semantic_similarity: 0.8,
            recall: [(1, 0.5), (5, 0.75), (10, 0.9)].into(),
            mrr: 0.6,
            ctr: 0.1,
            cvr: 0.2,
            polysemous_top1: 0.7,
            n_queries: 12,
        };
        let back = MetricsReport::from_tsv_row(&r.tsv_row(), "mem", 2).unwrap();
        assert_eq!(back, r);
        assert_eq!(MetricsReport::tsv_header().split('\t').count(), r.tsv_row().split('\t').count());
    }
}
