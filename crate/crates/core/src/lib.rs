//! Zero-shot classification with attribute-enhanced visual prompts.
//!
//! A prompt-conditioned encoder produces visual tokens and a prompt
//! embedding. Concept-aware attention harmonizes attribute and visual tokens
//! against a shared token bank, a zero-initialized linear unit predicts a
//! semantic residual from the pair, and the residual is added to every prompt
//! token before the enriched feature is mapped into attribute space and
//! scored by cosine similarity.

pub mod caa;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod harness;
pub mod numerics;
pub mod objective;
pub mod params;
pub mod vrru;

pub use config::RunConfig;
pub use error::{Error, Result};
