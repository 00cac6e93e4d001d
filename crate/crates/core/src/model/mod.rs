//! The network: token encoder, per-label attention, a mixture of expert
//! heads with a softmax gate, and the three pathway scores.
//!
//! All pathways share the encoder, attention and experts:
//!
//! * knowledge `z_k`: gated experts on the full input (demographic tokens
//!   followed by the note),
//! * demographic `z_d`: the same gated experts on the demographic tokens
//!   alone,
//! * uniform-expert `z_e`: the experts on the full input, averaged with
//!   equal weight.

mod backward;
mod forward;
mod params;

use thiserror::Error;

pub use backward::{backward, DocGradient, PathwayGrads};
pub use forward::{
    counterfactual, encode, expert_scores, forward, forward_tokens, gate_weights, label_attention,
    mix_experts, pathway_zd, pathway_ze, pathway_zk, uniform_mix, Attended, BranchTrace, Encoded,
    ForwardTrace, PathwayScores,
};
pub use params::{Expert, GateMode, ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
}
