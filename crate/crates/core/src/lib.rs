//! Core algorithms for learning to track popular threads in evolving,
//! tree-structured discussions.
//!
//! The crate is `no_std` (with `alloc`) and contains no IO. It provides:
//!
//! - [`nn`]: dense layers, feed-forward nets and a BiLSTM with exact analytic
//!   backward passes, SGD and a finite-difference gradient checker.
//! - [`text`]: preprocessing, vocabularies, bag-of-words and TF-IDF cosine.
//! - [`env`]: discussion trees, the episode dynamics, a synthetic corpus
//!   generator, the random policy and the thread-union oracle bound.
//! - [`knowledge`]: the external document store, relevance features, softmax
//!   attention, world embeddings and rule-based retrieval.
//! - [`qnet`]: DRRN (single comment), DRRN-Sum and DRRN-BiLSTM value functions.
//! - [`search`]: top-m subset search over sub-action values.
//! - [`agent`]: replay, TD targets and the two-phase training loop.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agent;
pub mod env;
mod error;
pub mod knowledge;
pub mod math;
pub mod nn;
pub mod qnet;
pub mod search;
pub mod text;

pub use error::{Error, Result};

/// Deterministic RNG used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
