//! Composite text-query attention with a weight-sharing visual aligner, next
//! to a baseline concatenated self-attention decoder.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense `f64` matrices, seeded RNG and the matmul FLOP counter
//! * [`attention`] masks, both attention variants and the analytic backward
//! * [`layers`] projector, FFN, aligner, decoder layers and the toy model
//! * [`inference`] KV-cache prefill/decode, greedy generation, benchmarking
//! * [`costmodel`] closed-form FLOP formulas and the instrumented counter
//! * [`verify`] seeded property suites shared by the CLI and the tests
//! * [`cli`] the `compattn` command line
//!
//! With the default `parallel` feature, matmuls split output rows across
//! rayon workers and the verification/sweep drivers fan out across trials.
//! Disabling it gives a single-threaded build with bitwise-identical results.

pub mod attention;
pub mod cli;
pub mod costmodel;
pub mod error;
pub mod inference;
pub mod layers;
pub mod reference;
pub mod tensor;
pub mod verify;

mod par;

pub use error::{Error, Result};
