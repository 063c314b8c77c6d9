//! Deterministic synthetic multilingual ad world with a known click model.

mod dataset;
mod interactions;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use dataset::{AdRecord, Dataset, LexiconRow, Manifest, OccurrenceRecord, PairRecord, SessionRow};
pub use interactions::{gen_interactions, Impression, Occurrence, Session, SynthLogs};

use crate::error::{Error, Result};
use crate::numkit::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickModel {
    pub p_match: f64,
    pub p_mismatch: f64,
    pub q_match: f64,
    pub q_mismatch: f64,
}

impl Default for ClickModel {
    fn default() -> Self {
        Self {
            p_match: 0.35,
            p_mismatch: 0.05,
            q_match: 0.25,
            q_mismatch: 0.02,
        }
    }
}

impl ClickModel {
    pub fn validate(&self) -> Result<()> {
        let all = [self.p_match, self.p_mismatch, self.q_match, self.q_mismatch];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("click model probabilities must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Stricter check for a model meant to separate relevant ads.
    pub fn validate_ordered(&self) -> Result<()> {
        self.validate()?;
        if self.p_match <= self.p_mismatch || self.q_match <= self.q_mismatch {
            return Err(Error::config("matched probabilities must exceed mismatched ones"));
        }
        Ok(())
    }

    pub fn click_prob(&self, matched: bool) -> f64 {
        if matched {
            self.p_match
        } else {
            self.p_mismatch
        }
    }

    pub fn conversion_prob(&self, matched: bool) -> f64 {
        if matched {
            self.q_match
        } else {
            self.q_mismatch
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub languages: usize,
    pub concepts: usize,
    pub rho: f64,
    pub users: usize,
    pub sessions: usize,
    pub ads: usize,
    pub modifiers: usize,
    pub ad_words: usize,
    pub stopwords: usize,
    pub profile_size: usize,
    /// Chance a query for a concept with a polysemous term uses that term.
    pub p_polysemous: f64,
    pub p_modifier: f64,
    pub p_stopword: f64,
    pub p_distractor: f64,
    pub click_model: ClickModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            languages: 2,
            concepts: 200,
            rho: 0.2,
            users: 500,
            sessions: 5000,
            ads: 2000,
            modifiers: 12,
            ad_words: 24,
            stopwords: 6,
            profile_size: 3,
            p_polysemous: 0.5,
            p_modifier: 0.5,
            p_stopword: 0.3,
            p_distractor: 0.3,
            click_model: ClickModel::default(),
        }
    }
}

impl SynthConfig {
    /// Polysemous terms per language for the configured rate.
    pub fn polysemous_terms(&self) -> usize {
        (self.rho * self.concepts as f64 / (1.0 - self.rho)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.languages < 2 {
            return Err(Error::config("need at least 2 languages"));
        }
        if self.concepts < 10 {
            return Err(Error::config("need at least 10 concepts"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        // each concept joins at most one polysemous term per language
        if 2 * self.polysemous_terms() > self.concepts {
            return Err(Error::config(format!(
                "rho {} needs {} two-concept terms over only {} concepts",
                self.rho,
                self.polysemous_terms(),
                self.concepts
            )));
        }
        if self.profile_size == 0 || self.profile_size > self.concepts {
            return Err(Error::config("profile size must be in 1..=concepts"));
        }
        if self.users == 0 && self.sessions > 0 {
            return Err(Error::config("sessions need at least one user"));
        }
        if self.ads < self.concepts {
            return Err(Error::config("need at least one ad per concept"));
        }
        if self.modifiers == 0 || self.ad_words == 0 {
            return Err(Error::config("modifier and ad-word pools must be non-empty"));
        }
        for p in [self.p_polysemous, self.p_modifier, self.p_stopword, self.p_distractor] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("probabilities must lie in [0, 1]"));
            }
        }
        self.click_model.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Term {
    pub text: String,
    pub concepts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    pub lang: String,
    /// Unambiguous terms first (term `c` names concept `c`), then shared ones.
    pub terms: Vec<Term>,
    pub polysemous_of: Vec<Option<usize>>,
    /// Modifier `m` means the same thing in every language.
    pub modifiers: Vec<String>,
    pub ad_words: Vec<String>,
    pub stopwords: Vec<String>,
}

impl Lexicon {
    pub fn unambiguous(&self, concept: usize) -> &str {
        &self.terms[concept].text
    }

    pub fn polysemous_count(&self) -> usize {
        self.terms.iter().filter(|t| t.concepts.len() >= 2).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ad {
    pub id: String,
    pub concept: usize,
    pub lang: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub seed: u64,
    pub languages: Vec<String>,
    pub lexicons: Vec<Lexicon>,
    pub ads: Vec<Ad>,
    /// Ad indices per concept.
    pub ads_by_concept: Vec<Vec<usize>>,
}

pub fn language_code(i: usize) -> String {
    format!("l{}", i + 1)
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Pseudo-words from consonant-vowel syllables, unique across the world.
struct WordMaker {
    used: HashSet<String>,
}

impl WordMaker {
    fn make(&mut self, rng: &mut SeededRng, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.below(ONSETS.len())]);
                w.push_str(VOWELS[rng.below(VOWELS.len())]);
            }
            if rng.bernoulli(0.3) {
                w.push_str(["n", "r", "s"][rng.below(3)]);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

pub fn gen_world(config: &SynthConfig, seed: u64) -> Result<SynthWorld> {
    config.validate()?;
    let mut rng = SeededRng::fork(seed, "synth.world");
    let mut words = WordMaker { used: HashSet::new() };
    let c = config.concepts;
    let n_poly = config.polysemous_terms();
    let languages: Vec<String> = (0..config.languages).map(language_code).collect();
    let mut lexicons = Vec::with_capacity(config.languages);
    for lang in &languages {
        let mut terms: Vec<Term> = (0..c)
            .map(|k| {
                let syl = 2 + rng.below(2);
                Term {
                    text: words.make(&mut rng, syl),
                    concepts: vec![k],
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..c).collect();
        rng.shuffle(&mut order);
        let mut polysemous_of = vec![None; c];
        for pair in order.chunks(2).take(n_poly) {
            let mut concepts = pair.to_vec();
            concepts.sort_unstable();
            for &k in &concepts {
                polysemous_of[k] = Some(terms.len());
            }
            let syl = 2 + rng.below(2);
            terms.push(Term {
                text: words.make(&mut rng, syl),
                concepts,
            });
        }
        let modifiers = (0..config.modifiers).map(|_| words.make(&mut rng, 2)).collect();
        let ad_words = (0..config.ad_words).map(|_| words.make(&mut rng, 2)).collect();
        let stopwords = (0..config.stopwords).map(|_| words.make(&mut rng, 1)).collect();
        lexicons.push(Lexicon {
            lang: lang.clone(),
            terms,
            polysemous_of,
            modifiers,
            ad_words,
            stopwords,
        });
    }

    let mut ads = Vec::with_capacity(config.ads);
    let mut ads_by_concept = vec![Vec::new(); c];
    let width = config.ads.to_string().len();
    for i in 0..config.ads {
        let concept = i % c;
        let lang = (i / c) % config.languages;
        let lex = &lexicons[lang];
        let mut toks = vec![lex.unambiguous(concept).to_string()];
        for _ in 0..2 {
            toks.push(rng.choose(&lex.ad_words).unwrap().clone());
        }
        if !lex.stopwords.is_empty() && rng.bernoulli(config.p_stopword) {
            let at = rng.below(toks.len() + 1);
            toks.insert(at, rng.choose(&lex.stopwords).unwrap().clone());
        }
        ads_by_concept[concept].push(ads.len());
        ads.push(Ad {
            id: format!("ad{i:0width$}"),
            concept,
            lang,
            text: toks.join(" "),
        });
    }
    Ok(SynthWorld {
        config: config.clone(),
        seed,
        languages,
        lexicons,
        ads,
        ads_by_concept,
    })
}
