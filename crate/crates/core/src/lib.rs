//! Training-free deepfake detection framed as visual question answering.
//!
//! An image is interrogated with a bank of artifact-probing prompts through a
//! multimodal chat-completions endpoint ([`gateway`]), the answers are folded
//! into a structured summary, and a text model returns a Real/Fake verdict
//! with a rationale ([`pipeline`]). [`manifest`], [`metrics`] and [`eval`]
//! form the evaluation and ablation harness around it.

pub mod digest;
pub mod eval;
pub mod gateway;
pub mod label;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod prompts;

pub use label::Label;
