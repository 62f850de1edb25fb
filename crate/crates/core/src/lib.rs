//! Review-based rating prediction driven by generated rationales.
//!
//! The crate is organised as a cascade:
//!
//! * [`corpus`] ingests review JSONL, cleans text, applies k-core filtering
//!   and builds the rating-frequency table and train/validation/test splits.
//! * [`reward`] scores generated rationales (format, frequency-aware accuracy,
//!   analysis length) and [`grpo`] optimises a pluggable policy against them
//!   with group-relative advantages.
//! * [`encoder`] turns rationale plus review text into fixed-size embeddings,
//!   which [`cache`] persists per user and per item.
//! * [`recsys`] fuses ID embeddings with cached histories through stacked
//!   cross-attention and trains with MSE plus a contrastive hinge.
//! * [`pipeline`] wires the stages together behind one TOML config.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by training.

pub mod cache;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod grpo;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod recsys;
pub mod reward;
mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision used for all training and evaluation.
pub type Real = f64;

pub type Tensor = nn::Tensor2D<Real>;
pub type Adam = nn::AdamState<Real>;
pub type Encoder = encoder::EncoderParams<Real>;
pub type RecModel = recsys::RecModelParams<Real>;
pub type ToyPolicy = grpo::ToyTemplatePolicy<Real>;
pub type History = cache::StackedHistory<Real>;

/// Deterministic RNG used throughout (portable stream for a given seed).
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's RNG from a seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
