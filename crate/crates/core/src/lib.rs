//! Cross-lingual query–ad matching with dual text encoders, graph
//! attention over a heterogeneous query/ad/user graph, and contrastive
//! alignment. Includes a synthetic multilingual ad world, an evaluation
//! suite and a training/ablation harness.

pub mod error;
pub mod numkit;
pub mod textpipe;
pub mod dualenc;
pub mod adgraph;
pub mod gatprop;
pub mod align;
pub mod synthgen;
pub mod evalkit;
pub mod harness;

pub use error::{Error, Result};
