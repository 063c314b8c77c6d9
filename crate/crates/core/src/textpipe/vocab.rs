use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token string ↔ id bijection. Ids 0..4 are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, ids }
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `token` if absent and returns its id.
    pub fn add(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// One non-reserved token per line; line `n` holds id `n + 4`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, file: &str) -> Result<Self> {
        let mut v = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || RESERVED.contains(&line) || v.id(line).is_some() {
                return Err(Error::parse(file, i + 1, format!("invalid or duplicate token {line:?}")));
            }
            v.add(line);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let mut v = Vocab::new();
        assert_eq!(v.id("[PAD]"), Some(PAD));
        assert_eq!(v.id("[UNK]"), Some(UNK));
        assert_eq!(v.id("[CLS]"), Some(CLS));
        assert_eq!(v.id("[SEP]"), Some(SEP));
        assert_eq!(v.add("ab"), 4);
        assert_eq!(v.add("ab"), 4);
        assert_eq!(v.add("c"), 5);
    }

    #[test]
    fn file_lines_are_offset_past_reserved() {
        let mut v = Vocab::new();
        v.add("x");
        v.add("yz");
        let text = v.to_text();
        assert_eq!(text, "x\nyz\n");
        let back = Vocab::from_text(&text, "mem").unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("a\na\n", "mem").is_err());
    }
}
