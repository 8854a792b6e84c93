//! Training engine for structured audio-visual reasoning responses.
//!
//! A toy differentiable policy emits three-tag responses
//! (`<a-think>`, `<v-think>`, `<answer>`) for synthetic audio-visual
//! confusion tasks. Training runs in stages: supervised warm-up,
//! group-relative clipped policy optimization driven by a step-wise
//! reasoning reward, and answer-centered confidence optimization.

pub mod advantage;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod experiment;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod response_format;
pub mod reward;
pub mod similarity;
