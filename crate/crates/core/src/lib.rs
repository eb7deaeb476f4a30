//! Attention-allocation laboratory.
//!
//! Measures how much a (tiny) multimodal transformer attends to image tokens
//! relative to system tokens, trains it with attention-guided objectives,
//! reallocates attention at inference time, and shapes GRPO rewards with the
//! same statistic.

pub mod attention;
pub mod dump;
pub mod error;
pub mod experiment;
pub mod exec;
pub mod intervention;
pub mod model;
pub mod objectives;
pub mod rl;
pub mod rng;
pub mod segment;
pub mod train;
pub mod vas;

pub use attention::AttentionTensor;
pub use error::{Error, Result};
pub use exec::Exec;
pub use segment::{Span, TokenSegmentation};
