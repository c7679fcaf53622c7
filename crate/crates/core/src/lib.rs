//! Validating-response dialogue pipeline core.
//!
//! Everything in this crate is pure computation over in-memory data:
//! phrase-rule annotation of validation timing, tokenization, a small
//! encoder-classifier with hand-written backpropagation, gradient×input cause
//! extraction, template response generation and the evaluation metrics.
//! File IO, the CLI and the HTTP service live in the `valresp` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod emotion;
pub mod metrics;
pub mod neuralnet;
pub mod normalize;
pub mod pipeline;
pub mod responder;
pub mod saliency;
pub mod text;

pub use emotion::{Emotion, NUM_EMOTIONS};
