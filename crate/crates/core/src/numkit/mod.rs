//! Dense tensors, a reverse-mode tape, AdamW and seeded randomness.

mod checkpoint;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use optim::{AdamWConfig, AdamWState};
pub use params::ParamStore;
pub use rng::{gaussian_init, SeededRng};
pub use tape::{Segment, Tape, Var};
pub use tensor::Tensor;
