#![allow(dead_code)]

use adgt::adgraph::EdgeType;
use adgt::gatprop::{Activation, GatConfig, SELF_SLOT};
use adgt::harness::RunConfig;
use adgt::numkit::{ParamStore, SeededRng, Tape, Tensor, Var};
use adgt::synthgen::{gen_interactions, gen_world, Dataset, SynthConfig};
use adgt::Result;

pub mod align;
pub mod gat;
pub mod grad;
pub mod metrics;

pub const FD_STEP: f64 = 1e-4;
/// Magnitudes below this count as this, so near-zero gradients are
/// compared absolutely.
pub const FD_FLOOR: f64 = 1e-2;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Largest relative error between backward and central differences over
/// every entry of every parameter in `store`.
pub fn fd_check<F>(store: &ParamStore, f: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut s = store.clone();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &s).expect("forward");
    tape.backward(loss, &mut s).expect("backward");
    let names: Vec<String> = s.names().map(String::from).collect();
    let mut worst: f64 = 0.0;
    for name in names {
        let grad = s.get(&name).unwrap().grad.clone().expect("gradient");
        for i in 0..grad.len() {
            let eval = |delta: f64| {
                let mut p = store.clone();
                p.get_mut(&name).unwrap().data_mut()[i] += delta;
                let mut t = Tape::new();
                let l = f(&mut t, &p).expect("forward");
                t.value(l).item()
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad[i], numeric));
        }
    }
    worst
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut SeededRng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * rng.gaussian()).collect()).unwrap()
}

/// Values in `[lo, hi]` with random sign, away from kinks at zero.
pub fn away_from_zero(shape: Vec<usize>, rng: &mut SeededRng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = lo + (hi - lo) * rng.uniform();
            if rng.bernoulli(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry matters.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut rng = SeededRng::new(seed);
    let r = tape.constant(random_tensor(shape, &mut rng, 1.0));
    let p = tape.mul(out, r)?;
    tape.sum(p)
}

/// Direct evaluation of one attention layer from the formula, with loops
/// over an explicit edge list. `edges` are undirected `(a, b, etype, w)`.
pub fn gat_layer_oracle(
    h: &[Vec<f64>],
    edges: &[(usize, usize, EdgeType, f64)],
    w: &[f64],
    a: &[f64],
    gain: &[f64],
    cfg: &GatConfig,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = h.len();
    let (dout, din) = (a.len() / 2, h[0].len());
    let wh: Vec<Vec<f64>> = h
        .iter()
        .map(|x| (0..dout).map(|r| (0..din).map(|c| w[r * din + c] * x[c]).sum()).collect())
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    for i in 0..n {
        let mut nb: Vec<(usize, usize, f64)> = Vec::new();
        if cfg.include_self {
            nb.push((i, SELF_SLOT, 1.0));
        }
        for &(x, y, t, wt) in edges {
            if x == i {
                nb.push((y, t.index(), wt));
            } else if y == i {
                nb.push((x, t.index(), wt));
            }
        }
        let logits: Vec<f64> = nb
            .iter()
            .map(|&(j, slot, wt)| {
                let mut e: f64 = (0..dout).map(|k| a[k] * wh[i][k] + a[dout + k] * wh[j][k]).sum();
                if e < 0.0 {
                    e *= cfg.leaky_slope;
                }
                if cfg.use_edge_weights {
                    e += gain[slot] * (1.0 + wt).ln();
                }
                e
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = ex.iter().sum();
        let alpha: Vec<f64> = ex.iter().map(|e| e / z).collect();
        let mut o = vec![0.0; dout];
        for (&(j, _, _), &al) in nb.iter().zip(&alpha) {
            for k in 0..dout {
                o[k] += al * wh[j][k];
            }
        }
        if cfg.activation == Activation::Elu {
            for v in &mut o {
                if *v < 0.0 {
                    *v = v.exp_m1();
                }
            }
        }
        out.push(o);
        alphas.push(alpha);
    }
    (out, alphas)
}

/// A reduced world that trains in seconds.
pub fn small_synth() -> SynthConfig {
    SynthConfig {
        concepts: 24,
        users: 40,
        sessions: 300,
        ads: 120,
        ..SynthConfig::default()
    }
}

pub fn small_dataset(seed: u64) -> Dataset {
    let world = gen_world(&small_synth(), seed).unwrap();
    let logs = gen_interactions(&world, seed);
    Dataset::from_world(&world, &logs)
}

pub fn small_run_config() -> RunConfig {
    let mut cfg = RunConfig {
        epochs: 3,
        d_model: 8,
        d_ff: 16,
        enc_layers: 1,
        max_len: 8,
        bpe_merges: 64,
        n_impressions: 2000,
        wall_time: false,
        ..RunConfig::default()
    };
    cfg.synth = small_synth();
    cfg
}

pub fn default_dataset(seed: u64) -> Dataset {
    let world = gen_world(&SynthConfig::default(), seed).unwrap();
    let logs = gen_interactions(&world, seed);
    Dataset::from_world(&world, &logs)
}
