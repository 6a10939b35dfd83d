//! A small, seeded vision-language transformer.
//!
//! It tokenizes images into patch embeddings, runs genuine multi-head causal
//! attention over system, visual, query and answer-prefix tokens, exports the
//! final-position attention over visual tokens, and decodes step by step with
//! a key/value cache. Weights are random; [`scripted`] builds variants with
//! planted circuits whose behavior is known in advance.

pub mod backend;
pub mod config;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod scripted;
pub mod tensor;
pub mod tokenizer;

pub use backend::ToyPrompt;
pub use config::ToyVlmConfig;
pub use error::ToyError;
pub use model::{KvCache, Prefill, Prompt, TokenizedImage, ToyVlm};
pub use scripted::{make_scripted_model, Scenario, ScriptedModel};

pub type ToyVlm32 = ToyVlm<f32>;
pub type ToyVlm64 = ToyVlm<f64>;
