//! Cosine similarity, in-batch contrastive loss and the translation term.

use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};

/// Cosine similarity of two non-zero vectors.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::domain("cosine similarity of a zero vector"));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || !(self.lambda1 + self.lambda2 > 0.0) {
            return Err(Error::config("loss weights must be non-negative with a positive sum"));
        }
        Ok(())
    }
}

/// Row `i` of `zq` is paired with row `i` of `za`; the other rows of `za`
/// are its negatives.
#[derive(Clone, Copy, Debug)]
pub struct AlignBatch {
    pub zq: Var,
    pub za: Var,
    pub zref: Option<Var>,
}

fn batch_dims(tape: &Tape, a: Var, b: Var, what: &str) -> Result<usize> {
    match (tape.shape(a), tape.shape(b)) {
        ([n, d], [m, e]) if n == m && d == e => Ok(*n),
        (x, y) => Err(Error::shape(format!("{what}: shapes {x:?} and {y:?}"))),
    }
}

/// Pairwise cosine similarities `[B × B]` between rows.
pub fn similarity_matrix(tape: &mut Tape, zq: Var, za: Var) -> Result<Var> {
    let qn = tape.normalize_rows(zq)?;
    let an = tape.normalize_rows(za)?;
    tape.matmul_nt(qn, an)
}

/// Mean over rows of `-log softmax_j(sim(q_i, a_j) / tau)[i]`.
pub fn contrastive_loss(tape: &mut Tape, zq: Var, za: Var, tau: f64) -> Result<Var> {
    let b = batch_dims(tape, zq, za, "contrastive_loss")?;
    if b < 2 {
        return Err(Error::contract(format!("contrastive loss needs a batch of at least 2, got {b}")));
    }
    let s = similarity_matrix(tape, zq, za)?;
    let logits = tape.scale(s, 1.0 / tau)?;
    let ls = tape.log_softmax(logits, 1)?;
    let diag = tape.pick_per_row(ls, (0..b).collect())?;
    let m = tape.mean(diag)?;
    tape.scale(m, -1.0)
}

/// Mean of `1 - cos(zq_i, zref_i)`.
pub fn translation_loss(tape: &mut Tape, zq: Var, zref: Var) -> Result<Var> {
    batch_dims(tape, zq, zref, "translation_loss")?;
    let qn = tape.normalize_rows(zq)?;
    let rn = tape.normalize_rows(zref)?;
    let prod = tape.mul(qn, rn)?;
    let cos = tape.sum_axis(prod, 1)?;
    let m = tape.mean(cos)?;
    let one = tape.constant(Tensor::scalar(1.0));
    tape.sub(one, m)
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub contrastive: Var,
    pub translation: Option<Var>,
}

/// `lambda1 * contrastive + lambda2 * translation`. The translation term
/// is computed whenever references are present.
pub fn total_loss(tape: &mut Tape, batch: &AlignBatch, w: &LossWeights) -> Result<LossParts> {
    w.validate()?;
    let contrastive = contrastive_loss(tape, batch.zq, batch.za, w.tau)?;
    let translation = match batch.zref {
        Some(r) => Some(translation_loss(tape, batch.zq, r)?),
        None if w.lambda2 > 0.0 => {
            return Err(Error::contract("lambda2 > 0 but the batch has no reference translations"))
        }
        None => None,
    };
    let mut total = tape.scale(contrastive, w.lambda1)?;
    if let Some(t) = translation {
        let t = tape.scale(t, w.lambda2)?;
        total = tape.add(total, t)?;
    }
    Ok(LossParts {
        total,
        contrastive,
        translation,
    })
}
