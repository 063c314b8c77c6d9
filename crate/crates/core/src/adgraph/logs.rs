use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClickRecord {
    pub user_id: String,
    pub query_text: String,
    pub ad_id: String,
    pub clicked: bool,
    pub converted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub user_id: String,
    pub query_text: Vec<String>,
}

/// Impressions with click/conversion outcomes plus search sessions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionLogs {
    pub clicks: Vec<ClickRecord>,
    pub sessions: Vec<SessionRecord>,
}

const CLICK_HEADER: &str = "user_id\tquery_text\tad_id\tclicked\tconverted";

fn flag(s: &str, file: &str, line: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::parse(file, line, format!("expected 0 or 1, got {s:?}"))),
    }
}

impl InteractionLogs {
    pub fn clicks_to_tsv(&self) -> String {
        let mut out = String::from(CLICK_HEADER);
        out.push('\n');
        for c in &self.clicks {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                c.user_id, c.query_text, c.ad_id, c.clicked as u8, c.converted as u8
            ));
        }
        out
    }

    pub fn parse_clicks(text: &str, file: &str) -> Result<Vec<ClickRecord>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || (i == 0 && line == CLICK_HEADER) {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::parse(file, i + 1, format!("expected 5 fields, got {}", f.len())));
            }
            out.push(ClickRecord {
                user_id: f[0].to_string(),
                query_text: f[1].to_string(),
                ad_id: f[2].to_string(),
                clicked: flag(f[3], file, i + 1)?,
                converted: flag(f[4], file, i + 1)?,
            });
        }
        Ok(out)
    }

    pub fn parse_sessions(text: &str, file: &str) -> Result<Vec<SessionRecord>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(file, i + 1, e.to_string())))
            .collect()
    }

    pub fn save(&self, clicks: &Path, sessions: &Path) -> Result<()> {
        std::fs::write(clicks, self.clicks_to_tsv()).map_err(|e| Error::io(clicks, e))?;
        let f = std::fs::File::create(sessions).map_err(|e| Error::io(sessions, e))?;
        let mut w = std::io::BufWriter::new(f);
        for s in &self.sessions {
            let line = serde_json::to_string(s).expect("session serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(sessions, e))?;
        }
        w.flush().map_err(|e| Error::io(sessions, e))
    }

    pub fn load(clicks: &Path, sessions: &Path) -> Result<Self> {
        let ctext = std::fs::read_to_string(clicks).map_err(|e| Error::io(clicks, e))?;
        let stext = std::fs::read_to_string(sessions).map_err(|e| Error::io(sessions, e))?;
        Ok(Self {
            clicks: Self::parse_clicks(&ctext, &clicks.display().to_string())?,
            sessions: Self::parse_sessions(&stext, &sessions.display().to_string())?,
        })
    }
}
