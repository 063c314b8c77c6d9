//! BLEU and traffic-simulation cases.

use std::collections::HashMap;

use adgt::evalkit::{corpus_bleu, simulate_ctr_cvr, BLEU_EPS};
use adgt::numkit::SeededRng;
use adgt::synthgen::ClickModel;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// BLEU by direct enumeration: for each hypothesis n-gram position, count
/// it at most as often as the reference holds it.
pub fn enumerated_bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> f64 {
    let mut m = vec![0usize; max_n];
    let mut d = vec![0usize; max_n];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            if h.len() < n {
                continue;
            }
            for i in 0..=h.len() - n {
                let g = &h[i..i + n];
                d[n - 1] += 1;
                let earlier = (0..i).filter(|&j| &h[j..j + n] == g).count();
                let in_ref = if rf.len() < n { 0 } else { (0..=rf.len() - n).filter(|&j| &rf[j..j + n] == g).count() };
                if earlier < in_ref {
                    m[n - 1] += 1;
                }
            }
        }
    }
    let mut log_p = 0.0;
    for n in 0..max_n {
        let p = if m[n] == 0 || d[n] == 0 {
            (m[n] as f64 + BLEU_EPS) / (d[n] as f64 + BLEU_EPS)
        } else {
            m[n] as f64 / d[n] as f64
        };
        log_p += p.ln();
    }
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_p / max_n as f64).exp()
}

/// A random small corpus over a 5-letter alphabet.
pub fn random_corpus(seed: u64) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut rng = SeededRng::fork(seed, "bleu.corpus");
    let word = |rng: &mut SeededRng| ["a", "b", "c", "d", "e"][rng.below(5)].to_string();
    let n = 1 + rng.below(4);
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..n {
        let lh = rng.below(9);
        let lr = 1 + rng.below(8);
        hyps.push((0..lh).map(|_| word(&mut rng)).collect());
        refs.push((0..lr).map(|_| word(&mut rng)).collect());
    }
    (hyps, refs)
}

/// BLEU before and after a random bijective renaming of the alphabet.
pub fn renaming_case(seed: u64) -> (f64, f64) {
    let (hyps, refs) = random_corpus(seed);
    let mut rng = SeededRng::fork(seed, "bleu.rename");
    let mut names: Vec<String> = (0..5).map(|i| format!("w{i}x{}", rng.below(1000))).collect();
    rng.shuffle(&mut names);
    let map: HashMap<&str, &str> = ["a", "b", "c", "d", "e"].into_iter().zip(names.iter().map(String::as_str)).collect();
    let rename = |c: &[Vec<String>]| -> Vec<Vec<String>> {
        c.iter().map(|s| s.iter().map(|t| map[t.as_str()].to_string()).collect()).collect()
    };
    let a = corpus_bleu(&hyps, &refs, 4).unwrap().score;
    let b = corpus_bleu(&rename(&hyps), &rename(&refs), 4).unwrap().score;
    (a, b)
}

/// Simulated CTR of a ranker whose top-1 ad always (or never) matches,
/// with the binomial standard deviation around the click model's rate.
pub fn calibration(model: &ClickModel, matched: bool, n: usize, seed: u64) -> (f64, f64, f64) {
    let flags = vec![matched; 50];
    let sim = simulate_ctr_cvr(&flags, model, n, seed).unwrap();
    let p = model.click_prob(matched);
    (sim.ctr, p, (p * (1.0 - p) / n as f64).sqrt())
}
