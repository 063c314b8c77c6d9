use super::{SynthWorld, Term};
use crate::adgraph::{ClickRecord, InteractionLogs, SessionRecord};
use crate::numkit::SeededRng;

/// One issued query with its hidden intent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occurrence {
    pub session: usize,
    pub position: usize,
    pub user: usize,
    pub lang: usize,
    pub concept: usize,
    pub text: String,
    pub polysemous: bool,
    pub translation_lang: usize,
    pub translation: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub id: usize,
    pub user: usize,
    pub lang: usize,
    pub focus: usize,
    /// Range into [`SynthLogs::occurrences`].
    pub start: usize,
    pub len: usize,
}

/// One ad shown for one occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Impression {
    pub occurrence: usize,
    pub ad: usize,
    pub label: bool,
    pub clicked: bool,
    pub converted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthLogs {
    pub user_langs: Vec<usize>,
    pub profiles: Vec<Vec<usize>>,
    pub sessions: Vec<Session>,
    pub occurrences: Vec<Occurrence>,
    pub impressions: Vec<Impression>,
}

pub fn user_id(u: usize) -> String {
    format!("u{u:04}")
}

impl SynthLogs {
    pub fn to_interaction_logs(&self, world: &SynthWorld) -> InteractionLogs {
        let clicks = self
            .impressions
            .iter()
            .map(|imp| {
                let occ = &self.occurrences[imp.occurrence];
                ClickRecord {
                    user_id: user_id(occ.user),
                    query_text: occ.text.clone(),
                    ad_id: world.ads[imp.ad].id.clone(),
                    clicked: imp.clicked,
                    converted: imp.converted,
                }
            })
            .collect();
        let sessions = self
            .sessions
            .iter()
            .map(|s| SessionRecord {
                user_id: user_id(s.user),
                query_text: self.occurrences[s.start..s.start + s.len]
                    .iter()
                    .map(|o| o.text.clone())
                    .collect(),
            })
            .collect();
        InteractionLogs { clicks, sessions }
    }
}

struct QuerySpec {
    concept: usize,
    polysemous: bool,
}

fn render(world: &SynthWorld, rng: &mut SeededRng, lang: usize, q: &QuerySpec) -> (String, String) {
    let cfg = &world.config;
    let lex = &world.lexicons[lang];
    let term: &Term = match (q.polysemous, lex.polysemous_of[q.concept]) {
        (true, Some(t)) => &lex.terms[t],
        _ => &lex.terms[q.concept],
    };
    let modifier = rng.bernoulli(cfg.p_modifier).then(|| rng.below(cfg.modifiers));
    let stop = (!lex.stopwords.is_empty() && rng.bernoulli(cfg.p_stopword))
        .then(|| rng.choose(&lex.stopwords).unwrap().clone());
    let mut toks = Vec::new();
    if let Some(m) = modifier {
        toks.push(lex.modifiers[m].clone());
    }
    toks.extend(stop);
    toks.push(term.text.clone());
    // the reference translation names the intended concept unambiguously
    let tl = &world.lexicons[(lang + 1) % world.languages.len()];
    let mut ttoks = Vec::new();
    if let Some(m) = modifier {
        ttoks.push(tl.modifiers[m].clone());
    }
    ttoks.push(tl.unambiguous(q.concept).to_string());
    (toks.join(" "), ttoks.join(" "))
}

/// Samples users, sessions, impressions and clicks. Users have a fixed
/// language and a small interest profile; each session focuses on one
/// profile concept and always contains an unambiguous query for it, so
/// any polysemous query in the session can be resolved from context.
pub fn gen_interactions(world: &SynthWorld, seed: u64) -> SynthLogs {
    let cfg = &world.config;
    let mut rng = SeededRng::fork(seed, "synth.interactions");
    let n_lang = world.languages.len();
    let user_langs: Vec<usize> = (0..cfg.users).map(|_| rng.below(n_lang)).collect();
    let profiles: Vec<Vec<usize>> = (0..cfg.users)
        .map(|_| {
            let mut all: Vec<usize> = (0..cfg.concepts).collect();
            rng.shuffle(&mut all);
            all.truncate(cfg.profile_size);
            all
        })
        .collect();

    let mut sessions = Vec::with_capacity(cfg.sessions);
    let mut occurrences = Vec::new();
    let mut impressions = Vec::new();
    for sid in 0..cfg.sessions {
        let user = rng.below(cfg.users);
        let lang = user_langs[user];
        let lex = &world.lexicons[lang];
        let focus = *rng.choose(&profiles[user]).unwrap();
        let n = 2 + rng.below(3);
        let has_poly = lex.polysemous_of[focus].is_some();
        let mut specs: Vec<QuerySpec> = (0..n)
            .map(|_| QuerySpec {
                concept: focus,
                polysemous: has_poly && rng.bernoulli(cfg.p_polysemous),
            })
            .collect();
        if specs.iter().all(|s| s.polysemous) {
            let k = rng.below(n);
            specs[k].polysemous = false;
        }
        let others: Vec<usize> = profiles[user].iter().copied().filter(|&c| c != focus).collect();
        if !others.is_empty() && rng.bernoulli(cfg.p_distractor) {
            let at = rng.below(specs.len() + 1);
            let concept = *rng.choose(&others).unwrap();
            specs.insert(at, QuerySpec { concept, polysemous: false });
        }
        let start = occurrences.len();
        for (position, spec) in specs.iter().enumerate() {
            let (text, translation) = render(world, &mut rng, lang, spec);
            let polysemous = spec.polysemous && lex.polysemous_of[spec.concept].is_some();
            let occ = occurrences.len();
            occurrences.push(Occurrence {
                session: sid,
                position,
                user,
                lang,
                concept: spec.concept,
                text,
                polysemous,
                translation_lang: (lang + 1) % n_lang,
                translation,
            });
            for ad in shown_ads(world, &mut rng, lang, spec) {
                let label = world.ads[ad].concept == spec.concept;
                let clicked = rng.bernoulli(cfg.click_model.click_prob(label));
                let converted = clicked && rng.bernoulli(cfg.click_model.conversion_prob(label));
                impressions.push(Impression {
                    occurrence: occ,
                    ad,
                    label,
                    clicked,
                    converted,
                });
            }
        }
        sessions.push(Session {
            id: sid,
            user,
            lang,
            focus,
            start,
            len: specs.len(),
        });
    }
    SynthLogs {
        user_langs,
        profiles,
        sessions,
        occurrences,
        impressions,
    }
}

/// Logging policy: one ad of the intended concept, one of a competing
/// concept (the other sense of a polysemous term when there is one), and
/// one uniformly random ad, all distinct.
fn shown_ads(world: &SynthWorld, rng: &mut SeededRng, lang: usize, spec: &QuerySpec) -> Vec<usize> {
    let c = world.config.concepts;
    let lex = &world.lexicons[lang];
    let matched = *rng.choose(&world.ads_by_concept[spec.concept]).unwrap();
    let sense = lex.polysemous_of[spec.concept].filter(|_| spec.polysemous);
    let rival = if let Some(t) = sense {
        *lex.terms[t].concepts.iter().find(|&&k| k != spec.concept).unwrap()
    } else {
        let k = rng.below(c - 1);
        if k >= spec.concept {
            k + 1
        } else {
            k
        }
    };
    let competing = *rng.choose(&world.ads_by_concept[rival]).unwrap();
    let mut shown = vec![matched, competing];
    while shown.len() < 3 && world.ads.len() > 2 {
        let a = rng.below(world.ads.len());
        if !shown.contains(&a) {
            shown.push(a);
        }
    }
    shown
}
