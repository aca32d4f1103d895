//! Span-based structured prediction with syntactic scaffolding.
//!
//! This crate holds everything that is pure computation: a small dense
//! tensor engine with reverse-mode differentiation, the BiLSTM encoder and
//! span representations built on it, a semi-Markov CRF with softmax-margin
//! training, the treebank-derived scaffold task, an antecedent-ranking
//! coreference head, evaluation metrics, and the joint training loop.
//!
//! It is `no_std` and only needs `alloc`. File formats, checkpoints and the
//! command line live in the companion `scaffold` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod coref;
pub mod data;
pub mod encoder;
pub mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod scaffold;
pub mod semicrf;
pub mod spanrep;
pub mod tensor;
pub mod train;

pub use error::Error;
pub use spanrep::Span;

/// Deterministic generator used for initialization, dropout and resampling.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Creates the crate's generator from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
