//! Structured-vision chain-of-thought toolkit: the scene-state schema and
//! its canonical form, a total parser for tagged model output, the gated
//! reward stack, SFT and GRPO over a token policy, and the dataset
//! construction pipeline.

pub mod config;
pub mod grpo;
pub mod http;
pub mod parser;
pub mod pipeline;
pub mod retry;
pub mod reward;
pub mod vision;
