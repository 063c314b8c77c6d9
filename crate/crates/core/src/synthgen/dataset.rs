use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::interactions::user_id;
use super::{SynthConfig, SynthLogs, SynthWorld};
use crate::adgraph::{ClickRecord, InteractionLogs, SessionRecord};
use crate::error::{Error, Result};
use crate::textpipe::StopwordSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdRecord {
    pub id: String,
    pub lang: String,
    pub concept: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccurrenceRecord {
    pub session_id: usize,
    pub position: usize,
    pub user_id: String,
    pub lang: String,
    pub text: String,
    pub translation_lang: String,
    pub translation: String,
    pub concept: usize,
    pub polysemous: bool,
}

/// One shown (query, ad) pair; `label` is exact concept match.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub session_id: usize,
    pub position: usize,
    pub query_text: String,
    pub ad_id: String,
    pub ad_text: String,
    pub lang_q: String,
    pub lang_a: String,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRow {
    pub session_id: usize,
    pub user_id: String,
    pub lang: String,
    pub query_text: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconRow {
    pub lang: String,
    pub role: String,
    pub word: String,
    pub concepts: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: Option<SynthConfig>,
    pub languages: Vec<String>,
    pub summary: BTreeMap<String, f64>,
}

/// Every exported table of a synthetic world, as loaded from disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub ads: Vec<AdRecord>,
    pub occurrences: Vec<OccurrenceRecord>,
    pub pairs: Vec<PairRecord>,
    pub clicks: Vec<ClickRecord>,
    pub sessions: Vec<SessionRow>,
    pub lexicon: Vec<LexiconRow>,
    pub stopwords: StopwordSet,
}

const PAIRS_HEADER: &str = "session_id\tposition\tquery_text\tad_id\tad_text\tlang_q\tlang_a\tlabel";
const TRANSLATIONS_HEADER: &str =
    "session_id\tposition\tuser_id\tlang_q\tquery_text\tlang_t\ttranslation\tconcept\tpolysemous";
const ADS_HEADER: &str = "ad_id\tlang\tconcept\ttext";
const LEXICON_HEADER: &str = "lang\trole\tword\tconcepts";

struct Rows<'a> {
    file: String,
    lines: Vec<(usize, Vec<&'a str>)>,
}

fn rows<'a>(text: &'a str, file: &Path, header: &str, width: usize) -> Result<Rows<'a>> {
    let file = file.display().to_string();
    let mut it = text.lines().enumerate();
    match it.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(Error::parse(&file, 1, format!("expected header {header:?}"))),
    }
    let mut lines = Vec::new();
    for (i, l) in it {
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != width {
            return Err(Error::parse(&file, i + 1, format!("expected {width} fields, got {}", f.len())));
        }
        lines.push((i + 1, f));
    }
    Ok(Rows { file, lines })
}

impl Rows<'_> {
    fn num<T: std::str::FromStr>(&self, line: usize, s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::parse(&self.file, line, format!("bad number {s:?}")))
    }

    fn flag(&self, line: usize, s: &str) -> Result<bool> {
        match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(Error::parse(&self.file, line, format!("expected 0 or 1, got {s:?}"))),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn from_world(world: &SynthWorld, logs: &SynthLogs) -> Self {
        let lang = |i: usize| world.languages[i].clone();
        let ads = world
            .ads
            .iter()
            .map(|a| AdRecord {
                id: a.id.clone(),
                lang: lang(a.lang),
                concept: a.concept,
                text: a.text.clone(),
            })
            .collect();
        let occurrences = logs
            .occurrences
            .iter()
            .map(|o| OccurrenceRecord {
                session_id: o.session,
                position: o.position,
                user_id: user_id(o.user),
                lang: lang(o.lang),
                text: o.text.clone(),
                translation_lang: lang(o.translation_lang),
                translation: o.translation.clone(),
                concept: o.concept,
                polysemous: o.polysemous,
            })
            .collect();
        let pairs = logs
            .impressions
            .iter()
            .map(|imp| {
                let o = &logs.occurrences[imp.occurrence];
                let a = &world.ads[imp.ad];
                PairRecord {
                    session_id: o.session,
                    position: o.position,
                    query_text: o.text.clone(),
                    ad_id: a.id.clone(),
                    ad_text: a.text.clone(),
                    lang_q: lang(o.lang),
                    lang_a: lang(a.lang),
                    label: imp.label,
                }
            })
            .collect();
        let il = logs.to_interaction_logs(world);
        let sessions = logs
            .sessions
            .iter()
            .zip(il.sessions)
            .map(|(s, r)| SessionRow {
                session_id: s.id,
                user_id: r.user_id,
                lang: lang(s.lang),
                query_text: r.query_text,
            })
            .collect();
        let mut lexicon = Vec::new();
        let mut stopwords = StopwordSet::new();
        for lex in &world.lexicons {
            let mut push = |role: &str, word: &str, concepts: Vec<usize>| {
                lexicon.push(LexiconRow {
                    lang: lex.lang.clone(),
                    role: role.to_string(),
                    word: word.to_string(),
                    concepts,
                })
            };
            for t in &lex.terms {
                let role = if t.concepts.len() > 1 { "polysemous" } else { "term" };
                push(role, &t.text, t.concepts.clone());
            }
            for (m, w) in lex.modifiers.iter().enumerate() {
                push("modifier", w, vec![m]);
            }
            for w in &lex.ad_words {
                push("ad_word", w, vec![]);
            }
            for w in &lex.stopwords {
                push("stopword", w, vec![]);
            }
            stopwords.insert_lang(&lex.lang, &lex.stopwords);
        }
        let mut summary = BTreeMap::new();
        let n_occ = logs.occurrences.len() as f64;
        let n_imp = logs.impressions.len() as f64;
        let clicks = logs.impressions.iter().filter(|i| i.clicked).count() as f64;
        let conv = logs.impressions.iter().filter(|i| i.converted).count() as f64;
        let poly = logs.occurrences.iter().filter(|o| o.polysemous).count() as f64;
        summary.insert("occurrences".into(), n_occ);
        summary.insert("impressions".into(), n_imp);
        summary.insert("clicks".into(), clicks);
        summary.insert("conversions".into(), conv);
        summary.insert("polysemous_occurrence_rate".into(), if n_occ > 0.0 { poly / n_occ } else { 0.0 });
        summary.insert(
            "polysemous_term_rate".into(),
            world.lexicons[0].polysemous_count() as f64 / world.lexicons[0].terms.len() as f64,
        );
        Dataset {
            manifest: Manifest {
                seed: world.seed,
                config: Some(world.config.clone()),
                languages: world.languages.clone(),
                summary,
            },
            ads,
            occurrences,
            pairs,
            clicks: il.clicks,
            sessions,
            lexicon,
            stopwords,
        }
    }

    pub fn interaction_logs(&self) -> InteractionLogs {
        InteractionLogs {
            clicks: self.clicks.clone(),
            sessions: self
                .sessions
                .iter()
                .map(|s| SessionRecord {
                    user_id: s.user_id.clone(),
                    query_text: s.query_text.clone(),
                })
                .collect(),
        }
    }

    pub fn languages(&self) -> &[String] {
        &self.manifest.languages
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut pairs = format!("{PAIRS_HEADER}\n");
        for p in &self.pairs {
            pairs.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                p.session_id, p.position, p.query_text, p.ad_id, p.ad_text, p.lang_q, p.lang_a, p.label as u8
            ));
        }
        write(&dir.join("pairs.tsv"), &pairs)?;

        let mut tr = format!("{TRANSLATIONS_HEADER}\n");
        for o in &self.occurrences {
            tr.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                o.session_id,
                o.position,
                o.user_id,
                o.lang,
                o.text,
                o.translation_lang,
                o.translation,
                o.concept,
                o.polysemous as u8
            ));
        }
        write(&dir.join("translations.tsv"), &tr)?;

        let mut ads = format!("{ADS_HEADER}\n");
        for a in &self.ads {
            ads.push_str(&format!("{}\t{}\t{}\t{}\n", a.id, a.lang, a.concept, a.text));
        }
        write(&dir.join("ads.tsv"), &ads)?;

        let mut lex = format!("{LEXICON_HEADER}\n");
        for r in &self.lexicon {
            let cs: Vec<String> = r.concepts.iter().map(|c| c.to_string()).collect();
            lex.push_str(&format!("{}\t{}\t{}\t{}\n", r.lang, r.role, r.word, cs.join(",")));
        }
        write(&dir.join("lexicon.tsv"), &lex)?;

        let clicks = InteractionLogs {
            clicks: self.clicks.clone(),
            sessions: vec![],
        };
        write(&dir.join("clicks.tsv"), &clicks.clicks_to_tsv())?;

        let path = dir.join("sessions.jsonl");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(f);
        for s in &self.sessions {
            let line = serde_json::to_string(s).expect("session serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        self.stopwords.save_dir(&dir.join("stopwords"))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write(&dir.join("world.json"), &format!("{manifest}\n"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("pairs.tsv");
        let text = read(&path)?;
        let r = rows(&text, &path, PAIRS_HEADER, 8)?;
        let mut pairs = Vec::with_capacity(r.lines.len());
        for (ln, f) in &r.lines {
            pairs.push(PairRecord {
                session_id: r.num(*ln, f[0])?,
                position: r.num(*ln, f[1])?,
                query_text: f[2].into(),
                ad_id: f[3].into(),
                ad_text: f[4].into(),
                lang_q: f[5].into(),
                lang_a: f[6].into(),
                label: r.flag(*ln, f[7])?,
            });
        }

        let path = dir.join("translations.tsv");
        let text = read(&path)?;
        let r = rows(&text, &path, TRANSLATIONS_HEADER, 9)?;
        let mut occurrences = Vec::with_capacity(r.lines.len());
        for (ln, f) in &r.lines {
            occurrences.push(OccurrenceRecord {
                session_id: r.num(*ln, f[0])?,
                position: r.num(*ln, f[1])?,
                user_id: f[2].into(),
                lang: f[3].into(),
                text: f[4].into(),
                translation_lang: f[5].into(),
                translation: f[6].into(),
                concept: r.num(*ln, f[7])?,
                polysemous: r.flag(*ln, f[8])?,
            });
        }

        let path = dir.join("ads.tsv");
        let text = read(&path)?;
        let r = rows(&text, &path, ADS_HEADER, 4)?;
        let mut ads = Vec::with_capacity(r.lines.len());
        for (ln, f) in &r.lines {
            ads.push(AdRecord {
                id: f[0].into(),
                lang: f[1].into(),
                concept: r.num(*ln, f[2])?,
                text: f[3].into(),
            });
        }

        let path = dir.join("lexicon.tsv");
        let text = read(&path)?;
        let r = rows(&text, &path, LEXICON_HEADER, 4)?;
        let mut lexicon = Vec::with_capacity(r.lines.len());
        for (ln, f) in &r.lines {
            let concepts = if f[3].is_empty() {
                vec![]
            } else {
                f[3].split(',').map(|c| r.num(*ln, c)).collect::<Result<_>>()?
            };
            lexicon.push(LexiconRow {
                lang: f[0].into(),
                role: f[1].into(),
                word: f[2].into(),
                concepts,
            });
        }

        let path = dir.join("clicks.tsv");
        let clicks = InteractionLogs::parse_clicks(&read(&path)?, &path.display().to_string())?;
        let path = dir.join("sessions.jsonl");
        let text = read(&path)?;
        let sessions = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))
            })
            .collect::<Result<Vec<SessionRow>>>()?;
        let stopwords = StopwordSet::load_dir(&dir.join("stopwords"))?;
        let path = dir.join("world.json");
        let manifest = serde_json::from_str(&read(&path)?)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))?;
        Ok(Dataset {
            manifest,
            ads,
            occurrences,
            pairs,
            clicks,
            sessions,
            lexicon,
            stopwords,
        })
    }
}
