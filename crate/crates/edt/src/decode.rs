//! Autoregressive decoding: drives a [`LogitSource`] under a
//! [`TemperaturePolicy`], one confidence-signal-to-temperature decision per
//! step, and records the full trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sampling::{
    edt_temperature, entropy_nats, greedy_argmax, kl_divergence, kld_temperature, sample_token,
    softmax_with_temperature, top_p_filter, udt_temperature, LogitVector, PolicyKind,
    SamplingError, StepDecision, TemperaturePolicy, TokenId,
};

pub type SourceError = Box<dyn std::error::Error + Send + Sync + 'static>;

/// Anything that can produce next-token logits. Implementations must be
/// deterministic: the same `(prompt, generated)` pair always yields the same
/// logits.
pub trait LogitSource: Sync {
    /// Vocabulary size; every returned logit vector has this length.
    fn vocab_size(&self) -> usize;

    /// Next-token logits given the prompt and everything generated so far.
    fn logits(&self, prompt: &[TokenId], generated: &[TokenId])
        -> Result<LogitVector, SourceError>;

    /// Next-token logits with the prompt dropped entirely; the q-side of the
    /// KLD policy's conditional/unconditional pair.
    fn unconditional_logits(&self, generated: &[TokenId]) -> Result<LogitVector, SourceError> {
        self.logits(&[], generated)
    }
}

#[derive(Debug, Clone)]
pub struct DecodeRequest {
    pub prompt: Vec<TokenId>,
    pub policy: TemperaturePolicy,
    pub max_new_tokens: usize,
    pub eos_token: TokenId,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Eos,
    MaxLength,
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    /// Generated token ids, eos excluded.
    pub tokens: Vec<TokenId>,
    /// One entry per sampled token, including the eos step when one fired.
    pub steps: Vec<StepDecision>,
    pub terminated_by: Termination,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("max_new_tokens must be >= 1")]
    ZeroMaxTokens,
    #[error("sample count must be >= 1")]
    ZeroSamples,
    #[error("eos token {eos} outside vocabulary of size {vocab}")]
    EosOutOfRange { eos: TokenId, vocab: usize },
    #[error("source returned {got} logits at step {step}, expected vocabulary size {want}")]
    VocabMismatch {
        step: usize,
        got: usize,
        want: usize,
    },
    #[error("reference must be non-empty")]
    EmptyReference,
    #[error("logit source failed at step {step}: {source}")]
    Source {
        step: usize,
        #[source]
        source: SourceError,
    },
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stated seed-splitting rule: one SplitMix64 avalanche of the parent seed,
/// xor the stream index, avalanched again. Chaining it per level gives every
/// (master, instance, sample) triple its own independent stream, so the
/// evaluation order of parallel work never changes any result.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index)
}

/// Generates up to `max_new_tokens` tokens. Per step: base distribution at
/// T=1 from the raw logits, confidence signal, temperature from the policy,
/// temperature-scaled softmax, top-p filter, sample. A temperature of zero
/// short-circuits to greedy argmax without consuming randomness.
pub fn decode(
    source: &dyn LogitSource,
    request: &DecodeRequest,
) -> Result<DecodeResult, DecodeError> {
    request.policy.validate()?;
    if request.max_new_tokens == 0 {
        return Err(DecodeError::ZeroMaxTokens);
    }
    let vocab = source.vocab_size();
    if request.eos_token as usize >= vocab {
        return Err(DecodeError::EosOutOfRange {
            eos: request.eos_token,
            vocab,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut steps: Vec<StepDecision> = Vec::with_capacity(request.max_new_tokens);
    let mut terminated_by = Termination::MaxLength;
    // InstanceEdt freezes the first step's schedule output for the whole
    // generation.
    let mut instance_temperature: Option<f64> = None;

    for step in 0..request.max_new_tokens {
        let logits = source
            .logits(&request.prompt, &tokens)
            .map_err(|source| DecodeError::Source { step, source })?;
        if logits.len() != vocab {
            return Err(DecodeError::VocabMismatch {
                step,
                got: logits.len(),
                want: vocab,
            });
        }
        let base = softmax_with_temperature(&logits, 1.0)?;
        let entropy = entropy_nats(&base);
        let top1 = base.top1();
        let uncertainty = (1.0 - top1).max(0.0).sqrt();

        let mut kl = None;
        let temperature = match request.policy.kind {
            PolicyKind::Fixed => request.policy.t0,
            PolicyKind::Edt => edt_temperature(entropy, &request.policy)?,
            PolicyKind::InstanceEdt => match instance_temperature {
                Some(t) => t,
                None => {
                    let t = edt_temperature(entropy, &request.policy)?;
                    instance_temperature = Some(t);
                    t
                }
            },
            PolicyKind::Udt => udt_temperature(top1, &request.policy)?,
            PolicyKind::Kld => {
                let unconditional = source
                    .unconditional_logits(&tokens)
                    .map_err(|source| DecodeError::Source { step, source })?;
                let q = softmax_with_temperature(&unconditional, 1.0)?;
                let divergence = kl_divergence(&base, &q)?;
                kl = Some(divergence);
                kld_temperature(divergence, &request.policy)?
            }
        };

        let chosen_token = if temperature == 0.0 {
            greedy_argmax(&logits)
        } else {
            let scaled = softmax_with_temperature(&logits, temperature)?;
            let filtered = top_p_filter(&scaled, request.policy.top_p)?;
            sample_token(&filtered, &mut rng)?
        };

        steps.push(StepDecision {
            temperature,
            entropy_nats: entropy,
            uncertainty,
            kl_divergence: kl,
            chosen_token,
        });

        if chosen_token == request.eos_token {
            terminated_by = Termination::Eos;
            break;
        }
        tokens.push(chosen_token);
    }

    Ok(DecodeResult {
        tokens,
        steps,
        terminated_by,
    })
}

/// Runs `k` decodes whose seeds are derived from `request.seed` via
/// [`derive_seed`], in sample order.
pub fn decode_k(
    source: &dyn LogitSource,
    request: &DecodeRequest,
    k: usize,
) -> Result<Vec<DecodeResult>, DecodeError> {
    if k == 0 {
        return Err(DecodeError::ZeroSamples);
    }
    (0..k)
        .map(|i| {
            let mut sample = request.clone();
            sample.seed = derive_seed(request.seed, i as u64);
            decode(source, &sample)
        })
        .collect()
}

/// Entropy (nats) of the base next-token distribution at every reference
/// position, feeding gold tokens as context: element `t` conditions on
/// `prompt` plus `reference[..t]`.
pub fn teacher_force_entropies(
    source: &dyn LogitSource,
    prompt: &[TokenId],
    reference: &[TokenId],
) -> Result<Vec<f64>, DecodeError> {
    if reference.is_empty() {
        return Err(DecodeError::EmptyReference);
    }
    let mut entropies = Vec::with_capacity(reference.len());
    for t in 0..reference.len() {
        let logits = source
            .logits(prompt, &reference[..t])
            .map_err(|source| DecodeError::Source { step: t, source })?;
        let base = softmax_with_temperature(&logits, 1.0)?;
        entropies.push(entropy_nats(&base));
    }
    Ok(entropies)
}
