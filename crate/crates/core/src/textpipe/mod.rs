//! Tokenization, stop-word filtering and sub-word encoding.

mod bpe;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub use bpe::{train_bpe, BpeModel, END_OF_WORD};
pub use vocab::{Vocab, CLS, PAD, SEP, UNK};

use crate::error::{Error, Result};

pub const DEFAULT_MERGES: usize = 512;

/// Lower-cases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Stop words keyed by language code; lookups are case-folded.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopwordSet {
    langs: BTreeMap<String, BTreeSet<String>>,
}

impl StopwordSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_lang<I, S>(&mut self, lang: &str, words: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set = self.langs.entry(lang.to_string()).or_default();
        set.extend(words.into_iter().map(|w| w.as_ref().to_lowercase()));
    }

    pub fn langs(&self) -> impl Iterator<Item = &str> {
        self.langs.keys().map(String::as_str)
    }

    pub fn words(&self, lang: &str) -> Option<&BTreeSet<String>> {
        self.langs.get(lang)
    }

    pub fn contains(&self, lang: &str, word: &str) -> bool {
        self.langs
            .get(lang)
            .is_some_and(|s| s.contains(&word.to_lowercase()))
    }

    /// Writes `<dir>/<lang>.txt`, one word per line.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (lang, words) in &self.langs {
            let path = dir.join(format!("{lang}.txt"));
            let mut text = String::new();
            for w in words {
                text.push_str(w);
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let lang = path.file_stem().unwrap().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            set.insert_lang(&lang, text.lines().map(str::trim).filter(|l| !l.is_empty()));
        }
        Ok(set)
    }
}

/// Order-preserving filter. An unknown language has no stop words.
pub fn remove_stopwords(tokens: Vec<String>, lang: &str, stopwords: &StopwordSet) -> Vec<String> {
    match stopwords.words(lang) {
        Some(set) => tokens
            .into_iter()
            .filter(|t| !set.contains(&t.to_lowercase()))
            .collect(),
        None => {
            log::warn!("no stop-word list for language {lang:?}; keeping all tokens");
            tokens
        }
    }
}

/// Fixed-length id sequence with a parallel mask of real positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Encoded {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Everything needed to turn raw text into ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineAssets {
    pub stopwords: StopwordSet,
    pub bpe: BpeModel,
    pub vocab: Vocab,
}

impl PipelineAssets {
    /// Tokenizes and filters every `(lang, text)` pair, then trains one
    /// joint BPE model over the filtered tokens of all languages.
    pub fn build<'a, I>(texts: I, stopwords: StopwordSet, num_merges: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let corpus: Vec<Vec<String>> = texts
            .into_iter()
            .map(|(lang, text)| remove_stopwords(tokenize(text), lang, &stopwords))
            .collect();
        let bpe = train_bpe(&corpus, num_merges)?;
        let vocab = bpe.build_vocab(&corpus);
        Ok(Self {
            stopwords,
            bpe,
            vocab,
        })
    }

    /// Subword ids of `text` before CLS, truncation and padding.
    pub fn subword_ids(&self, text: &str, lang: &str) -> Vec<u32> {
        remove_stopwords(tokenize(text), lang, &self.stopwords)
            .iter()
            .flat_map(|t| self.bpe.encode(t, &self.vocab))
            .collect()
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        self.bpe.save(&dir.join("merges.txt"))?;
        self.stopwords.save_dir(&dir.join("stopwords"))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(Self {
            vocab: Vocab::load(&dir.join("vocab.txt"))?,
            bpe: BpeModel::load(&dir.join("merges.txt"))?,
            stopwords: StopwordSet::load_dir(&dir.join("stopwords"))?,
        })
    }
}

/// `[CLS] subwords… [PAD]…` of exactly `max_len` ids.
pub fn encode_text(text: &str, lang: &str, assets: &PipelineAssets, max_len: usize) -> Result<Encoded> {
    if max_len < 2 {
        return Err(Error::config(format!("max_len must be at least 2, got {max_len}")));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(assets.subword_ids(text, lang).into_iter().take(max_len - 1));
    let real = ids.len();
    ids.resize(max_len, PAD);
    let mask = (0..max_len).map(|i| i < real).collect();
    Ok(Encoded { ids, mask })
}
