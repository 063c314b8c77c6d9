//! Byte-pair-encoding merges learned over word frequencies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use super::vocab::{Vocab, UNK};
use crate::error::{Error, Result};

/// Marks the end of a word; never produced by [`super::tokenize`].
pub const END_OF_WORD: &str = "</w>";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

fn split_word(word: &str) -> Vec<String> {
    word.chars()
        .map(String::from)
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::new();
        for (i, m) in merges.iter().enumerate() {
            if ranks.insert(m.clone(), i).is_some() {
                return Err(Error::domain(format!("duplicate merge {m:?}")));
            }
        }
        Ok(Self { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Vocabulary of every symbol the model can emit over `corpus`: the
    /// sorted base characters, the end-of-word marker, then merged symbols
    /// in rank order.
    pub fn build_vocab(&self, corpus: &[Vec<String>]) -> Vocab {
        let alphabet: BTreeSet<char> = corpus.iter().flatten().flat_map(|w| w.chars()).collect();
        let mut v = Vocab::new();
        for c in alphabet {
            v.add(&c.to_string());
        }
        v.add(END_OF_WORD);
        for (l, r) in &self.merges {
            v.add(&format!("{l}{r}"));
        }
        v
    }

    /// Subword strings for one token. A trailing end-of-word marker that
    /// was never merged into a subword is dropped.
    pub fn segment(&self, token: &str) -> Vec<String> {
        if token.is_empty() {
            return vec![];
        }
        let mut syms = split_word(token);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == l && &syms[i + 1] == r {
                    merged.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = merged;
        }
        if syms.last().map(String::as_str) == Some(END_OF_WORD) {
            syms.pop();
        }
        syms
    }

    /// Subword ids for one token; symbols outside `vocab` become UNK.
    pub fn encode(&self, token: &str, vocab: &Vocab) -> Vec<u32> {
        self.segment(token)
            .iter()
            .map(|s| vocab.id(s).unwrap_or(UNK))
            .collect()
    }

    /// Concatenates subwords and strips end-of-word markers.
    pub fn decode(&self, ids: &[u32], vocab: &Vocab) -> String {
        ids.iter()
            .filter_map(|&id| vocab.token(id))
            .collect::<String>()
            .replace(END_OF_WORD, "")
    }

    /// One `left right` pair per line; the line number is the rank.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, file: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (l, r) = line
                .split_once(' ')
                .filter(|(l, r)| !l.is_empty() && !r.is_empty())
                .ok_or_else(|| Error::parse(file, i + 1, "expected `left right`"))?;
            if merges.iter().any(|(a, b)| a == l && b == r) {
                return Err(Error::parse(file, i + 1, "duplicate merge"));
            }
            merges.push((l.to_string(), r.to_string()));
        }
        Self::from_merges(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Learns up to `num_merges` merges. Each round merges the most frequent
/// adjacent pair; ties go to the lexicographically smallest pair.
pub fn train_bpe(corpus: &[Vec<String>], num_merges: usize) -> Result<BpeModel> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for tokens in corpus {
        for t in tokens.iter().filter(|t| !t.is_empty()) {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::domain("cannot train BPE on an empty corpus"));
    }

    // symbols are interned so pair counting works on integers
    let mut names: Vec<String> = Vec::new();
    let mut intern: HashMap<String, u32> = HashMap::new();
    let mut id_of = |s: String, names: &mut Vec<String>| -> u32 {
        *intern.entry(s.clone()).or_insert_with(|| {
            names.push(s);
            names.len() as u32 - 1
        })
    };
    let mut words: Vec<(Vec<u32>, u64)> = counts
        .iter()
        .map(|(w, &c)| {
            let syms = split_word(w).into_iter().map(|s| id_of(s, &mut names)).collect();
            (syms, c)
        })
        .collect();

    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += c;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&names[pa.0 as usize], &names[pa.1 as usize]);
                let kb = (&names[pb.0 as usize], &names[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), _)) = best else { break };
        let joined = format!("{}{}", names[l as usize], names[r as usize]);
        let new_id = id_of(joined, &mut names);
        for (syms, _) in words.iter_mut() {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push((names[l as usize].clone(), names[r as usize].clone()));
    }
    BpeModel::from_merges(merges)
}
