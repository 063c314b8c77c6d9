//! Batches for the contrastive and translation loss checks.

use adgt::align::{contrastive_loss, total_loss, translation_loss, AlignBatch, LossWeights};
use adgt::numkit::{SeededRng, Tape, Tensor};

use super::random_tensor;

fn rows(data: &[Vec<f64>]) -> Tensor {
    Tensor::matrix(data.len(), data[0].len(), data.iter().flatten().copied().collect()).unwrap()
}

/// Contrastive loss of a batch where every query has the same similarity
/// to every ad: random queries against one shared ad direction.
pub fn uniform_batch_loss(b: usize, seed: u64, tau: f64) -> f64 {
    let mut rng = SeededRng::fork(seed, "align.uniform");
    let d = 5;
    let c: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
    let q: Vec<Vec<f64>> = (0..b).map(|_| (0..d).map(|_| rng.gaussian()).collect()).collect();
    let a: Vec<Vec<f64>> = (0..b)
        .map(|_| {
            let f = 0.5 + rng.uniform();
            c.iter().map(|x| x * f).collect()
        })
        .collect();
    let mut t = Tape::new();
    let (q, a) = (t.constant(rows(&q)), t.constant(rows(&a)));
    let l = contrastive_loss(&mut t, q, a, tau).unwrap();
    t.value(l).item()
}

/// `(contrastive, translation, total)` for explicit matrices.
pub fn losses(q: &Tensor, a: &Tensor, r: &Tensor, w: &LossWeights) -> (f64, f64, f64) {
    let mut t = Tape::new();
    let (qv, av, rv) = (t.constant(q.clone()), t.constant(a.clone()), t.constant(r.clone()));
    let c = contrastive_loss(&mut t, qv, av, w.tau).unwrap();
    let tr = translation_loss(&mut t, qv, rv).unwrap();
    let parts = total_loss(&mut t, &AlignBatch { zq: qv, za: av, zref: Some(rv) }, w).unwrap();
    (t.value(c).item(), t.value(tr).item(), t.value(parts.total).item())
}

fn rescaled(m: &Tensor, rng: &mut SeededRng) -> Tensor {
    let cols = m.cols();
    let mut out = m.clone();
    let factors: Vec<f64> = (0..m.rows()).map(|_| (4.0 * rng.gaussian()).exp()).collect();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v *= factors[i / cols];
    }
    out
}

/// Largest change of any loss when every row of every input is multiplied
/// by its own random positive factor.
pub fn scale_invariance_gap(seed: u64) -> f64 {
    let mut rng = SeededRng::fork(seed, "align.scale");
    let b = 2 + rng.below(7);
    let d = 1 + rng.below(6);
    let q = random_tensor(vec![b, d], &mut rng, 1.0);
    let a = random_tensor(vec![b, d], &mut rng, 1.0);
    let r = random_tensor(vec![b, d], &mut rng, 1.0);
    let w = LossWeights {
        tau: 0.05 + rng.uniform(),
        lambda1: rng.uniform(),
        lambda2: 0.1 + rng.uniform(),
    };
    let base = losses(&q, &a, &r, &w);
    let moved = losses(&rescaled(&q, &mut rng), &rescaled(&a, &mut rng), &rescaled(&r, &mut rng), &w);
    [(base.0 - moved.0).abs(), (base.1 - moved.1).abs(), (base.2 - moved.2).abs()]
        .into_iter()
        .fold(0.0, f64::max)
}
