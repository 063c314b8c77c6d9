//! Query and ad encoders: small pre-norm transformers with pooling.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numkit::{gaussian_init, ParamStore, Segment, SeededRng, Tape, Tensor, Var};
use crate::textpipe::{encode_text, Encoded, PipelineAssets};

pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Cls,
    Mean,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CLS" => Ok(Pooling::Cls),
            "MEAN" => Ok(Pooling::Mean),
            _ => Err(Error::config(format!("unknown pooling mode {s:?}"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Cls => "CLS",
            Pooling::Mean => "MEAN",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tower {
    Query,
    Ad,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub pooling: Pooling,
    pub tie_encoders: bool,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            max_len: 16,
            pooling: Pooling::Mean,
            tie_encoders: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::config("encoder sizes must be positive"));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::config(format!("max_len must be at least 2, got {}", self.max_len)));
        }
        Ok(())
    }

    /// Parameter-name prefix for a tower. Tied towers share `enc_q`.
    pub fn prefix(&self, tower: Tower) -> &'static str {
        match (tower, self.tie_encoders) {
            (Tower::Ad, false) => "enc_a",
            _ => "enc_q",
        }
    }

    fn towers(&self) -> &'static [Tower] {
        if self.tie_encoders {
            &[Tower::Query]
        } else {
            &[Tower::Query, Tower::Ad]
        }
    }
}

/// Initializes every encoder parameter: N(0, 0.02) weights, unit
/// layer-norm gains and zero biases.
pub fn init_encoder(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let (d, f) = (cfg.d_model, cfg.d_ff);
    for &tower in cfg.towers() {
        let p = cfg.prefix(tower);
        let mut rng = SeededRng::fork(seed, p);
        let mut normal = |name: String, shape: Vec<usize>, store: &mut ParamStore| -> Result<()> {
            store.insert(name, gaussian_init(shape, INIT_STD, &mut rng)?);
            Ok(())
        };
        normal(format!("{p}.tok_emb"), vec![cfg.vocab_size, d], &mut store)?;
        normal(format!("{p}.pos_emb"), vec![cfg.max_len, d], &mut store)?;
        for l in 0..cfg.n_layers {
            for w in ["wq", "wk", "wv", "wo"] {
                normal(format!("{p}.layer{l}.attn.{w}"), vec![d, d], &mut store)?;
            }
            normal(format!("{p}.layer{l}.ff.w1"), vec![d, f], &mut store)?;
            normal(format!("{p}.layer{l}.ff.w2"), vec![f, d], &mut store)?;
            store.insert(format!("{p}.layer{l}.ff.b1"), Tensor::zeros(vec![f])?);
            store.insert(format!("{p}.layer{l}.ff.b2"), Tensor::zeros(vec![d])?);
            for ln in ["ln1", "ln2"] {
                insert_ln(&mut store, &format!("{p}.layer{l}.{ln}"), d);
            }
        }
        insert_ln(&mut store, &format!("{p}.ln_f"), d);
    }
    Ok(store)
}

fn insert_ln(store: &mut ParamStore, name: &str, d: usize) {
    store.insert(format!("{name}.gain"), Tensor::vector(vec![1.0; d]));
    store.insert(format!("{name}.bias"), Tensor::vector(vec![0.0; d]));
}

/// Hidden states plus the attention node of every layer.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub hidden: Var,
    pub attention: Vec<Var>,
}

fn ln(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let g = tape.param(store, &format!("{name}.gain"))?;
    let b = tape.param(store, &format!("{name}.bias"))?;
    tape.layer_norm(x, g, b, LN_EPS)
}

/// Runs the stack over packed rows. `segs` delimit sequences and
/// `key_mask` hides keys from attention.
fn forward_rows(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    tower: Tower,
    ids: Vec<usize>,
    positions: Vec<usize>,
    segs: Vec<Segment>,
    key_mask: &[bool],
) -> Result<EncoderOutput> {
    let p = cfg.prefix(tower);
    if let Some(bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::shape(format!("token id {bad} outside vocab of {}", cfg.vocab_size)));
    }
    let tok = tape.param(store, &format!("{p}.tok_emb"))?;
    let pos = tape.param(store, &format!("{p}.pos_emb"))?;
    let te = tape.gather_rows(tok, ids)?;
    let pe = tape.gather_rows(pos, positions)?;
    let mut x = tape.add(te, pe)?;
    let mut attention = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let lp = format!("{p}.layer{l}");
        let h = ln(tape, store, &format!("{lp}.ln1"), x)?;
        let proj = |w: &str, tape: &mut Tape| -> Result<Var> {
            let w = tape.param(store, &format!("{lp}.attn.{w}"))?;
            tape.matmul(h, w)
        };
        let q = proj("wq", tape)?;
        let k = proj("wk", tape)?;
        let v = proj("wv", tape)?;
        let a = tape.segment_attention(q, k, v, segs.clone(), key_mask, cfg.n_heads)?;
        attention.push(a);
        let wo = tape.param(store, &format!("{lp}.attn.wo"))?;
        let o = tape.matmul(a, wo)?;
        x = tape.add(x, o)?;

        let h = ln(tape, store, &format!("{lp}.ln2"), x)?;
        let w1 = tape.param(store, &format!("{lp}.ff.w1"))?;
        let b1 = tape.param(store, &format!("{lp}.ff.b1"))?;
        let w2 = tape.param(store, &format!("{lp}.ff.w2"))?;
        let b2 = tape.param(store, &format!("{lp}.ff.b2"))?;
        let u = tape.matmul(h, w1)?;
        let u = tape.add_rowvec(u, b1)?;
        let u = tape.gelu(u)?;
        let u = tape.matmul(u, w2)?;
        let u = tape.add_rowvec(u, b2)?;
        x = tape.add(x, u)?;
    }
    let hidden = ln(tape, store, &format!("{p}.ln_f"), x)?;
    Ok(EncoderOutput { hidden, attention })
}

/// Hidden states `[max_len × d_model]` for one encoded sequence. Masked
/// positions are hidden from attention as keys but still produce rows.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    tower: Tower,
    enc: &Encoded,
) -> Result<EncoderOutput> {
    let n = cfg.max_len;
    if enc.ids.len() != n || enc.mask.len() != n {
        return Err(Error::shape(format!(
            "expected {n} ids and mask entries, got {} and {}",
            enc.ids.len(),
            enc.mask.len()
        )));
    }
    let ids = enc.ids.iter().map(|&i| i as usize).collect();
    forward_rows(
        tape,
        store,
        cfg,
        tower,
        ids,
        (0..n).collect(),
        vec![Segment { start: 0, len: n }],
        &enc.mask,
    )
}

/// Fixed-length embedding `[d_model]` from hidden states `[n × d_model]`.
pub fn pool(tape: &mut Tape, h: Var, mask: &[bool], mode: Pooling) -> Result<Var> {
    let (n, d) = match tape.shape(h) {
        [n, d] => (*n, *d),
        s => return Err(Error::shape(format!("pool needs a matrix, got {s:?}"))),
    };
    let z = match mode {
        Pooling::Cls => tape.gather_rows(h, vec![0])?,
        Pooling::Mean => tape.segment_mean(h, vec![Segment { start: 0, len: n }], mask.to_vec())?,
    };
    tape.reshape(z, vec![d])
}

/// Pooled embeddings `[B × d_model]` for a batch of sequences. Only real
/// tokens are run through the stack; masked tail positions cannot affect
/// them, so the result equals per-sequence [`encode`] followed by [`pool`].
pub fn encode_batch(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    tower: Tower,
    batch: &[&Encoded],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::shape("encode_batch with an empty batch"));
    }
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    let mut segs = Vec::with_capacity(batch.len());
    for e in batch {
        if e.ids.len() != cfg.max_len || e.mask.len() != cfg.max_len {
            return Err(Error::shape("sequence length differs from max_len"));
        }
        let real = e.mask.iter().take_while(|&&m| m).count();
        if real == 0 || e.mask[real..].iter().any(|&m| m) {
            return Err(Error::domain("mask must be a non-empty prefix of real tokens"));
        }
        segs.push(Segment { start: ids.len(), len: real });
        ids.extend(e.ids[..real].iter().map(|&i| i as usize));
        positions.extend(0..real);
    }
    let mask = vec![true; ids.len()];
    let out = forward_rows(tape, store, cfg, tower, ids, positions, segs.clone(), &mask)?;
    match cfg.pooling {
        Pooling::Mean => tape.segment_mean(out.hidden, segs, mask),
        Pooling::Cls => tape.gather_rows(out.hidden, segs.iter().map(|s| s.start).collect()),
    }
}

/// Text to pooled embeddings for both towers.
pub fn encode_pair(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    assets: &PipelineAssets,
    query: (&str, &str),
    ad: (&str, &str),
) -> Result<(Var, Var)> {
    let mut embed = |(text, lang): (&str, &str), tower| -> Result<Var> {
        let e = encode_text(text, lang, assets, cfg.max_len)?;
        let out = encode(tape, store, cfg, tower, &e)?;
        pool(tape, out.hidden, &e.mask, cfg.pooling)
    };
    let zq = embed(query, Tower::Query)?;
    let za = embed(ad, Tower::Ad)?;
    Ok((zq, za))
}
