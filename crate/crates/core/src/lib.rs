//! Sequence-level uncertainty scoring for LLM generations from attention
//! traces, with baselines, rejection-curve evaluation and attention
//! diagnostics.
//!
//! The pipeline is: read [`trace::GenerationTrace`]s from an NDJSON stream,
//! score them with [`engine::rauq_score`] or a [`baselines::BaselineId`], and
//! evaluate the scores against quality labels with [`eval::prr`] and
//! [`eval::roc_auc`].

pub mod analysis;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod method;
pub mod synth;
pub mod trace;

pub use baselines::{attention_score, msp_score, perplexity_score, AttentionScoreVariant, BaselineId};
pub use engine::{
    rauq_breakdown, rauq_score, select_heads, HeadSelection, LayerAgg, LayerPolicy, RauqConfig, Recurrence,
    TokenAgg,
};
pub use error::{Error, Result};
pub use eval::{evaluate, prr, rejection_curve, roc_auc, EvalReport, RejectionOrder, ScoreRecord};
pub use method::Method;
pub use trace::{read_traces, write_traces, GenerationTrace, TraceFileHeader};
