use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::align::LossWeights;
use crate::dualenc::{EncoderConfig, Pooling};
use crate::error::{Error, Result};
use crate::gatprop::{Activation, GatConfig};
use crate::numkit::AdamWConfig;
use crate::synthgen::SynthConfig;
use crate::textpipe::DEFAULT_MERGES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Full,
    EncoderOnly,
    GatOnly,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Full, Arm::EncoderOnly, Arm::GatOnly];

    pub fn uses_encoder(self) -> bool {
        self != Arm::GatOnly
    }

    pub fn uses_graph(self) -> bool {
        self != Arm::EncoderOnly
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FULL" => Ok(Arm::Full),
            "ENCODER_ONLY" => Ok(Arm::EncoderOnly),
            "GAT_ONLY" => Ok(Arm::GatOnly),
            _ => Err(Error::config(format!("unknown arm {s:?}"))),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Full => "FULL",
            Arm::EncoderOnly => "ENCODER_ONLY",
            Arm::GatOnly => "GAT_ONLY",
        })
    }
}

/// Everything a run needs. Text form is flat `key = value` lines; see
/// [`CONFIG_KEYS`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Dataset directory; `None` means `<out_dir>/data`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub arm: Arm,
    pub seed: u64,
    /// Seed for the train/val/test split; `None` uses `seed`.
    pub split_seed: Option<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub fractions: [f64; 3],
    pub optim: AdamWConfig,
    pub loss: LossWeights,
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub pooling: Pooling,
    pub tie_encoders: bool,
    pub bpe_merges: usize,
    pub gat_layers: usize,
    pub activation: Activation,
    pub include_self: bool,
    pub use_edge_weights: bool,
    pub leaky_slope: f64,
    pub include_impressions: bool,
    /// Refine non-node queries over their session context.
    pub context_refine: bool,
    pub n_impressions: usize,
    /// Record real seconds in the trace; off writes 0 for byte-stable output.
    pub wall_time: bool,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            out_dir: PathBuf::from("out"),
            arm: Arm::Full,
            seed: 42,
            split_seed: None,
            epochs: 30,
            batch_size: 32,
            patience: 5,
            fractions: [0.8, 0.1, 0.1],
            optim: AdamWConfig::default(),
            loss: LossWeights::default(),
            d_model: 32,
            n_heads: 2,
            enc_layers: 2,
            d_ff: 64,
            max_len: 16,
            pooling: Pooling::Mean,
            tie_encoders: false,
            bpe_merges: DEFAULT_MERGES,
            gat_layers: 2,
            activation: Activation::Elu,
            include_self: true,
            use_edge_weights: true,
            leaky_slope: 0.2,
            include_impressions: false,
            context_refine: true,
            n_impressions: 20_000,
            wall_time: true,
            synth: SynthConfig::default(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("data_dir", "dataset directory (default: <out_dir>/data)"),
    ("out_dir", "output directory"),
    ("arm", "FULL | ENCODER_ONLY | GAT_ONLY"),
    ("seed", "root seed for initialization and batching"),
    ("split_seed", "seed of the query-level split (default: seed)"),
    ("epochs", "maximum training epochs"),
    ("batch_size", "training batch size"),
    ("patience", "epochs without validation improvement before stopping"),
    ("train_frac", "train share of query nodes"),
    ("val_frac", "validation share of query nodes"),
    ("test_frac", "test share of query nodes"),
    ("lr", "AdamW learning rate"),
    ("weight_decay", "AdamW decoupled weight decay"),
    ("beta1", "AdamW first-moment decay"),
    ("beta2", "AdamW second-moment decay"),
    ("grad_clip", "global gradient-norm ceiling or none"),
    ("tau", "contrastive temperature"),
    ("lambda1", "contrastive loss weight"),
    ("lambda2", "translation loss weight"),
    ("d_model", "embedding width"),
    ("n_heads", "attention heads per encoder layer"),
    ("enc_layers", "encoder layers"),
    ("d_ff", "encoder feed-forward width"),
    ("max_len", "token positions per sequence"),
    ("pooling", "MEAN | CLS"),
    ("tie_encoders", "share weights between query and ad towers"),
    ("bpe_merges", "BPE merge operations"),
    ("gat_layers", "graph attention layers"),
    ("activation", "ELU | IDENTITY after each graph layer"),
    ("include_self", "self-loop in every graph neighborhood"),
    ("use_edge_weights", "log(1+w) edge-weight bias in attention"),
    ("leaky_slope", "LeakyReLU slope of attention logits"),
    ("include_impressions", "unclicked impressions add light QA edges"),
    ("context_refine", "refine queries over their session context"),
    ("n_impressions", "simulated impressions for CTR/CVR"),
    ("wall_time", "record elapsed seconds in the trace"),
    ("synth.languages", "synthetic languages"),
    ("synth.concepts", "synthetic concepts"),
    ("synth.rho", "share of polysemous terms"),
    ("synth.users", "synthetic users"),
    ("synth.sessions", "synthetic sessions"),
    ("synth.ads", "synthetic ads"),
    ("synth.modifiers", "modifier words per language"),
    ("synth.ad_words", "filler ad words per language"),
    ("synth.stopwords", "stop words per language"),
    ("synth.profile_size", "concepts per user profile"),
    ("synth.p_polysemous", "chance a query uses a polysemous term"),
    ("synth.p_modifier", "chance a query has a modifier"),
    ("synth.p_stopword", "chance of an inserted stop word"),
    ("synth.p_distractor", "chance of an off-focus session query"),
    ("synth.p_match", "click probability of a matched ad"),
    ("synth.p_mismatch", "click probability of a mismatched ad"),
    ("synth.q_match", "conversion probability after a matched click"),
    ("synth.q_mismatch", "conversion probability after a mismatched click"),
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("bad value {v:?} for {key}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("bad boolean {v:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "data_dir" => {
                self.data_dir = match v {
                    "none" => None,
                    _ => Some(PathBuf::from(v)),
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "arm" => self.arm = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "split_seed" => {
                self.split_seed = match v {
                    "none" => None,
                    _ => Some(num(key, v)?),
                }
            }
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "train_frac" => self.fractions[0] = num(key, v)?,
            "val_frac" => self.fractions[1] = num(key, v)?,
            "test_frac" => self.fractions[2] = num(key, v)?,
            "lr" => self.optim.lr = num(key, v)?,
            "weight_decay" => self.optim.weight_decay = num(key, v)?,
            "beta1" => self.optim.beta1 = num(key, v)?,
            "beta2" => self.optim.beta2 = num(key, v)?,
            "grad_clip" => {
                self.optim.grad_clip = match v {
                    "none" => None,
                    _ => Some(num(key, v)?),
                }
            }
            "tau" => self.loss.tau = num(key, v)?,
            "lambda1" => self.loss.lambda1 = num(key, v)?,
            "lambda2" => self.loss.lambda2 = num(key, v)?,
            "d_model" => self.d_model = num(key, v)?,
            "n_heads" => self.n_heads = num(key, v)?,
            "enc_layers" => self.enc_layers = num(key, v)?,
            "d_ff" => self.d_ff = num(key, v)?,
            "max_len" => self.max_len = num(key, v)?,
            "pooling" => self.pooling = v.parse()?,
            "tie_encoders" => self.tie_encoders = flag(key, v)?,
            "bpe_merges" => self.bpe_merges = num(key, v)?,
            "gat_layers" => self.gat_layers = num(key, v)?,
            "activation" => self.activation = v.parse()?,
            "include_self" => self.include_self = flag(key, v)?,
            "use_edge_weights" => self.use_edge_weights = flag(key, v)?,
            "leaky_slope" => self.leaky_slope = num(key, v)?,
            "include_impressions" => self.include_impressions = flag(key, v)?,
            "context_refine" => self.context_refine = flag(key, v)?,
            "n_impressions" => self.n_impressions = num(key, v)?,
            "wall_time" => self.wall_time = flag(key, v)?,
            "synth.languages" => s.languages = num(key, v)?,
            "synth.concepts" => s.concepts = num(key, v)?,
            "synth.rho" => s.rho = num(key, v)?,
            "synth.users" => s.users = num(key, v)?,
            "synth.sessions" => s.sessions = num(key, v)?,
            "synth.ads" => s.ads = num(key, v)?,
            "synth.modifiers" => s.modifiers = num(key, v)?,
            "synth.ad_words" => s.ad_words = num(key, v)?,
            "synth.stopwords" => s.stopwords = num(key, v)?,
            "synth.profile_size" => s.profile_size = num(key, v)?,
            "synth.p_polysemous" => s.p_polysemous = num(key, v)?,
            "synth.p_modifier" => s.p_modifier = num(key, v)?,
            "synth.p_stopword" => s.p_stopword = num(key, v)?,
            "synth.p_distractor" => s.p_distractor = num(key, v)?,
            "synth.p_match" => s.click_model.p_match = num(key, v)?,
            "synth.p_mismatch" => s.click_model.p_mismatch = num(key, v)?,
            "synth.q_match" => s.click_model.q_match = num(key, v)?,
            "synth.q_mismatch" => s.click_model.q_mismatch = num(key, v)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of a key, in the form [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let s = &self.synth;
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        Ok(match key {
            "data_dir" => opt(self.data_dir.as_ref().map(|p| p.display().to_string())),
            "out_dir" => self.out_dir.display().to_string(),
            "arm" => self.arm.to_string(),
            "seed" => self.seed.to_string(),
            "split_seed" => opt(self.split_seed.map(|v| v.to_string())),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "patience" => self.patience.to_string(),
            "train_frac" => self.fractions[0].to_string(),
            "val_frac" => self.fractions[1].to_string(),
            "test_frac" => self.fractions[2].to_string(),
            "lr" => self.optim.lr.to_string(),
            "weight_decay" => self.optim.weight_decay.to_string(),
            "beta1" => self.optim.beta1.to_string(),
            "beta2" => self.optim.beta2.to_string(),
            "grad_clip" => opt(self.optim.grad_clip.map(|v| v.to_string())),
            "tau" => self.loss.tau.to_string(),
            "lambda1" => self.loss.lambda1.to_string(),
            "lambda2" => self.loss.lambda2.to_string(),
            "d_model" => self.d_model.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "enc_layers" => self.enc_layers.to_string(),
            "d_ff" => self.d_ff.to_string(),
            "max_len" => self.max_len.to_string(),
            "pooling" => self.pooling.to_string(),
            "tie_encoders" => self.tie_encoders.to_string(),
            "bpe_merges" => self.bpe_merges.to_string(),
            "gat_layers" => self.gat_layers.to_string(),
            "activation" => self.activation.to_string(),
            "include_self" => self.include_self.to_string(),
            "use_edge_weights" => self.use_edge_weights.to_string(),
            "leaky_slope" => self.leaky_slope.to_string(),
            "include_impressions" => self.include_impressions.to_string(),
            "context_refine" => self.context_refine.to_string(),
            "n_impressions" => self.n_impressions.to_string(),
            "wall_time" => self.wall_time.to_string(),
            "synth.languages" => s.languages.to_string(),
            "synth.concepts" => s.concepts.to_string(),
            "synth.rho" => s.rho.to_string(),
            "synth.users" => s.users.to_string(),
            "synth.sessions" => s.sessions.to_string(),
            "synth.ads" => s.ads.to_string(),
            "synth.modifiers" => s.modifiers.to_string(),
            "synth.ad_words" => s.ad_words.to_string(),
            "synth.stopwords" => s.stopwords.to_string(),
            "synth.profile_size" => s.profile_size.to_string(),
            "synth.p_polysemous" => s.p_polysemous.to_string(),
            "synth.p_modifier" => s.p_modifier.to_string(),
            "synth.p_stopword" => s.p_stopword.to_string(),
            "synth.p_distractor" => s.p_distractor.to_string(),
            "synth.p_match" => s.click_model.p_match.to_string(),
            "synth.p_mismatch" => s.click_model.p_mismatch.to_string(),
            "synth.q_match" => s.click_model.q_match.to_string(),
            "synth.q_mismatch" => s.click_model.q_mismatch.to_string(),
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        })
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions {:?} must lie in [0, 1] and sum to 1", self.fractions)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2 for in-batch negatives"));
        }
        if !(self.optim.lr >= 0.0) || self.optim.weight_decay < 0.0 {
            return Err(Error::config("lr and weight_decay must be non-negative"));
        }
        if self.n_impressions == 0 {
            return Err(Error::config("n_impressions must be positive"));
        }
        self.loss.validate()?;
        self.encoder(1).validate()?;
        self.gat().validate()?;
        self.synth.validate()
    }

    pub fn data_path(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.enc_layers,
            d_ff: self.d_ff,
            max_len: self.max_len,
            pooling: self.pooling,
            tie_encoders: self.tie_encoders,
        }
    }

    pub fn gat(&self) -> GatConfig {
        GatConfig {
            n_layers: self.gat_layers,
            d_in: self.d_model,
            d_out: self.d_model,
            activation: self.activation,
            include_self: self.include_self,
            use_edge_weights: self.use_edge_weights,
            leaky_slope: self.leaky_slope,
        }
    }
}
