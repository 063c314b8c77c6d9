//! Flat text container for named parameters.
//!
//! ```text
//! adgt-checkpoint 1
//! seed 42
//! hparam lr 0.0001
//! params 2
//! param enc_q.tok_emb 2 600 32
//! <row-major values, space separated>
//! ...
//! end
//! ```
//! Values use Rust's shortest round-trip `f64` formatting, so identical
//! parameters always serialize to identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "adgt-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub hparams: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "seed {}", self.seed);
        for (k, v) in &self.hparams {
            let _ = writeln!(out, "hparam {k} {v}");
        }
        let _ = writeln!(out, "params {}", self.params.len());
        for (name, t) in self.params.iter() {
            let _ = write!(out, "param {name} {}", t.rank());
            for d in t.shape() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v}")).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str, file: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(file, 0, format!("unexpected end of file; expected {what}")))
        };
        let (ln, head) = next("header")?;
        if head != format!("{MAGIC} {FORMAT_VERSION}") {
            return Err(Error::parse(file, ln, format!("bad header {head:?}")));
        }
        let (ln, seed_line) = next("seed")?;
        let seed = seed_line
            .strip_prefix("seed ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(file, ln, "expected `seed <u64>`"))?;
        let mut hparams = BTreeMap::new();
        let count;
        loop {
            let (ln, l) = next("hparam or params")?;
            if let Some(rest) = l.strip_prefix("hparam ") {
                let (k, v) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::parse(file, ln, "hparam needs key and value"))?;
                hparams.insert(k.to_string(), v.to_string());
            } else if let Some(n) = l.strip_prefix("params ") {
                count = n
                    .parse::<usize>()
                    .map_err(|_| Error::parse(file, ln, "bad parameter count"))?;
                break;
            } else {
                return Err(Error::parse(file, ln, format!("unexpected line {l:?}")));
            }
        }
        let mut params = ParamStore::new();
        for _ in 0..count {
            let (ln, l) = next("param header")?;
            let fields: Vec<&str> = l.split(' ').collect();
            if fields.len() < 3 || fields[0] != "param" {
                return Err(Error::parse(file, ln, "expected `param <name> <rank> <dims>`"));
            }
            let rank: usize = fields[2]
                .parse()
                .map_err(|_| Error::parse(file, ln, "bad rank"))?;
            if fields.len() != 3 + rank {
                return Err(Error::parse(file, ln, "dimension count does not match rank"));
            }
            let shape = fields[3..]
                .iter()
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(file, ln, "bad dimension"))?;
            let (vln, vals) = next("values")?;
            let data = vals
                .split(' ')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(file, vln, "bad value"))?;
            let t = Tensor::new(shape, data).map_err(|e| Error::parse(file, vln, e.to_string()))?;
            params.insert(fields[1], t);
        }
        let (ln, end) = next("end")?;
        if end != "end" {
            return Err(Error::parse(file, ln, "expected `end`"));
        }
        Ok(Self {
            seed,
            hparams,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}
