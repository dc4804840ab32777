//! Entropy-guided dynamic temperature sampling and its baselines, as a pure
//! logits-to-token kernel plus everything needed to study the
//! quality/diversity trade-off at desk scale: an autoregressive decoder over
//! any logit source, a small n-gram language model, ROUGE/BLEU/Self-BLEU/EDA
//! scoring, and a deterministic sweep harness.

pub mod decode;
pub mod harness;
pub mod metrics;
pub mod ngram;
pub mod sampling;

pub use decode::{
    decode, decode_k, derive_seed, teacher_force_entropies, DecodeError, DecodeRequest,
    DecodeResult, LogitSource, Termination,
};
pub use sampling::{
    CategoricalDistribution, LogitVector, PolicyKind, SamplingError, StepDecision,
    TemperaturePolicy, TokenId,
};
