//! Pure logits-to-token sampling kernel: temperature softmax, entropy,
//! the dynamic temperature schedules, nucleus (top-p) filtering, and seeded
//! categorical draws.
//!
//! Everything here is a pure function of its inputs plus an explicit RNG, so
//! the whole module is safe to call from any number of threads.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vocabulary index of a token.
pub type TokenId = u32;

/// Smallest nonzero temperature a schedule may return. Zero is reserved as
/// the explicit "go greedy" signal; anything between 0 and this bound is
/// clamped up so the scaled softmax stays well-conditioned.
pub const MIN_TEMPERATURE: f64 = 1e-4;

/// Default base of the confidence schedules (the `0.8` of `T = T0 * N^(x)`).
pub const DEFAULT_N_BASE: f64 = 0.8;

/// Default nucleus mass kept by top-p filtering.
pub const DEFAULT_TOP_P: f64 = 0.95;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("logit at index {index} is not finite")]
    NonFiniteLogit { index: usize },
    #[error("logit vector needs at least 2 entries, got {0}")]
    VocabTooSmall(usize),
    #[error("temperature must be a positive finite number, got {0}")]
    NonPositiveTemperature(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("entropy must be >= 0, got {0}")]
    NegativeEntropy(f64),
    #[error("top-1 probability must be in [0, 1], got {0}")]
    InvalidTopProbability(f64),
    #[error("KL divergence must be >= 0, got {0}")]
    NegativeKl(f64),
    #[error("distribution lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("q assigns zero probability at index {index} where p is positive")]
    ZeroSupport { index: usize },
    #[error("top-p must be in (0, 1], got {0}")]
    InvalidTopP(f64),
    #[error("policy {field} is invalid: {reason}")]
    InvalidPolicy { field: &'static str, reason: String },
    #[error("policy kind {0} does not drive this schedule")]
    WrongPolicyKind(PolicyKind),
    #[error("distribution has no positive mass")]
    EmptySupport,
}

/// Raw per-token scores produced by a model at one decode step.
///
/// Guaranteed finite and at least two entries long.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SamplingError> {
        if values.len() < 2 {
            return Err(SamplingError::VocabTooSmall(values.len()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SamplingError::NonFiniteLogit { index });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Normalized probabilities over the vocabulary: entries in [0, 1] summing
/// to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDistribution(Vec<f64>);

impl CategoricalDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, SamplingError> {
        if probs.len() < 2 {
            return Err(SamplingError::VocabTooSmall(probs.len()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(SamplingError::InvalidDistribution(format!(
                    "probability {p} at index {i} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SamplingError::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Token ids carrying positive probability.
    pub fn support(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i as TokenId)
    }

    /// Largest probability in the distribution.
    pub fn top1(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

/// Which rule selects the per-step temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Constant temperature `t0` at every step.
    Fixed,
    /// Entropy-guided: `T = t0 * n_base^(theta / entropy)` per step.
    Edt,
    /// Entropy-guided, but frozen to the first step's value for the whole
    /// generation.
    InstanceEdt,
    /// Uncertainty-guided: entropy replaced by `sqrt(1 - top1_prob)`.
    Udt,
    /// Divergence-guided: `T = t0 * (1/2)^(kl / sigma)` from the KL between
    /// the conditional and unconditional next-token distributions.
    Kld,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyKind::Fixed => "fixed",
            PolicyKind::Edt => "edt",
            PolicyKind::InstanceEdt => "instance_edt",
            PolicyKind::Udt => "udt",
            PolicyKind::Kld => "kld",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(PolicyKind::Fixed),
            "edt" => Ok(PolicyKind::Edt),
            "instance_edt" | "instance-edt" => Ok(PolicyKind::InstanceEdt),
            "udt" => Ok(PolicyKind::Udt),
            "kld" => Ok(PolicyKind::Kld),
            other => Err(format!(
                "unknown policy kind '{other}' (expected fixed|edt|instance-edt|udt|kld)"
            )),
        }
    }
}

/// A temperature selection rule plus its hyperparameters.
///
/// Fields irrelevant to `kind` are ignored at decode time but still have to
/// hold valid values, so a policy deserialized from config is always safe to
/// pass around whole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePolicy {
    pub kind: PolicyKind,
    /// Upper bound of the sampled temperature.
    pub t0: f64,
    /// Sharpness of the confidence schedules; 0 degenerates to `Fixed`.
    #[serde(default)]
    pub theta: f64,
    /// Base of the confidence schedules, strictly inside (0, 1).
    #[serde(default = "default_n_base")]
    pub n_base: f64,
    /// Half-life of the KLD decay.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Nucleus mass kept before sampling.
    #[serde(default = "default_top_p")]
    pub top_p: f64,
}

fn default_n_base() -> f64 {
    DEFAULT_N_BASE
}

fn default_sigma() -> f64 {
    1.0
}

fn default_top_p() -> f64 {
    DEFAULT_TOP_P
}

impl TemperaturePolicy {
    pub fn fixed(t0: f64) -> Self {
        Self::with_kind(PolicyKind::Fixed, t0)
    }

    pub fn edt(t0: f64, theta: f64) -> Self {
        Self {
            theta,
            ..Self::with_kind(PolicyKind::Edt, t0)
        }
    }

    pub fn instance_edt(t0: f64, theta: f64) -> Self {
        Self {
            theta,
            ..Self::with_kind(PolicyKind::InstanceEdt, t0)
        }
    }

    pub fn udt(t0: f64, theta: f64) -> Self {
        Self {
            theta,
            ..Self::with_kind(PolicyKind::Udt, t0)
        }
    }

    pub fn kld(t0: f64, sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::with_kind(PolicyKind::Kld, t0)
        }
    }

    fn with_kind(kind: PolicyKind, t0: f64) -> Self {
        Self {
            kind,
            t0,
            theta: 0.0,
            n_base: DEFAULT_N_BASE,
            sigma: 1.0,
            top_p: DEFAULT_TOP_P,
        }
    }

    pub fn with_top_p(mut self, top_p: f64) -> Self {
        self.top_p = top_p;
        self
    }

    pub fn with_n_base(mut self, n_base: f64) -> Self {
        self.n_base = n_base;
        self
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if !self.t0.is_finite() || self.t0 <= 0.0 {
            return Err(SamplingError::InvalidPolicy {
                field: "t0",
                reason: format!("must be a positive finite number, got {}", self.t0),
            });
        }
        if !self.theta.is_finite() || self.theta < 0.0 {
            return Err(SamplingError::InvalidPolicy {
                field: "theta",
                reason: format!("must be >= 0, got {}", self.theta),
            });
        }
        if !self.n_base.is_finite() || self.n_base <= 0.0 || self.n_base >= 1.0 {
            return Err(SamplingError::InvalidPolicy {
                field: "n_base",
                reason: format!("must lie strictly inside (0, 1), got {}", self.n_base),
            });
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(SamplingError::InvalidPolicy {
                field: "sigma",
                reason: format!("must be a positive finite number, got {}", self.sigma),
            });
        }
        if !self.top_p.is_finite() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(SamplingError::InvalidPolicy {
                field: "top_p",
                reason: format!("must lie in (0, 1], got {}", self.top_p),
            });
        }
        Ok(())
    }

    /// Short human-readable descriptor, e.g. `edt(t0=0.6, theta=0.1)`.
    pub fn describe(&self) -> String {
        match self.kind {
            PolicyKind::Fixed => format!("fixed(t0={})", self.t0),
            PolicyKind::Edt => format!("edt(t0={}, theta={})", self.t0, self.theta),
            PolicyKind::InstanceEdt => {
                format!("instance_edt(t0={}, theta={})", self.t0, self.theta)
            }
            PolicyKind::Udt => format!("udt(t0={}, theta={})", self.t0, self.theta),
            PolicyKind::Kld => format!("kld(t0={}, sigma={})", self.t0, self.sigma),
        }
    }
}

/// Per-step trace entry of the decode pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    /// Temperature actually applied at this step; 0 means the step went
    /// greedy.
    pub temperature: f64,
    /// Entropy (nats) of the unscaled next-token distribution.
    pub entropy_nats: f64,
    /// `sqrt(1 - top1)` of the unscaled distribution.
    pub uncertainty: f64,
    /// Conditional-vs-unconditional KL; only present under the KLD policy.
    pub kl_divergence: Option<f64>,
    pub chosen_token: TokenId,
}

/// Softmax of `logits / t`, stabilized by subtracting the max logit before
/// exponentiation.
pub fn softmax_with_temperature(
    logits: &LogitVector,
    t: f64,
) -> Result<CategoricalDistribution, SamplingError> {
    if !t.is_finite() || t <= 0.0 {
        return Err(SamplingError::NonPositiveTemperature(t));
    }
    let values = logits.values();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = values.iter().map(|&l| ((l - max) / t).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    CategoricalDistribution::new(exps)
}

/// Index of the maximum logit; ties break toward the lowest token id.
pub fn greedy_argmax(logits: &LogitVector) -> TokenId {
    let mut best = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &v) in logits.values().iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best as TokenId
}

/// Shannon entropy in nats, with the 0 * ln 0 = 0 convention.
pub fn entropy_nats(dist: &CategoricalDistribution) -> f64 {
    let h: f64 = dist
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// `T = t0 * n_base^(theta / signal)` shared by the entropy and uncertainty
/// schedules.
///
/// `theta == 0` wins over `signal == 0` so that a zero-sharpness policy is
/// token-for-token equivalent to `Fixed(t0)` even on fully confident steps.
/// A zero signal otherwise returns 0, the caller's cue to go greedy.
fn confidence_temperature(signal: f64, policy: &TemperaturePolicy) -> f64 {
    if policy.theta == 0.0 {
        return policy.t0;
    }
    if signal == 0.0 {
        return 0.0;
    }
    let t = policy.t0 * policy.n_base.powf(policy.theta / signal);
    t.max(MIN_TEMPERATURE)
}

/// Entropy-guided temperature for an `Edt` or `InstanceEdt` policy.
pub fn edt_temperature(
    entropy_nats: f64,
    policy: &TemperaturePolicy,
) -> Result<f64, SamplingError> {
    policy.validate()?;
    if !matches!(policy.kind, PolicyKind::Edt | PolicyKind::InstanceEdt) {
        return Err(SamplingError::WrongPolicyKind(policy.kind));
    }
    if !entropy_nats.is_finite() || entropy_nats < 0.0 {
        return Err(SamplingError::NegativeEntropy(entropy_nats));
    }
    Ok(confidence_temperature(entropy_nats, policy))
}

/// Uncertainty-guided temperature: the entropy signal replaced by
/// `sqrt(1 - top1_prob)`.
pub fn udt_temperature(top1_prob: f64, policy: &TemperaturePolicy) -> Result<f64, SamplingError> {
    policy.validate()?;
    if policy.kind != PolicyKind::Udt {
        return Err(SamplingError::WrongPolicyKind(policy.kind));
    }
    if !top1_prob.is_finite() || !(0.0..=1.0).contains(&top1_prob) {
        return Err(SamplingError::InvalidTopProbability(top1_prob));
    }
    let uncertainty = (1.0 - top1_prob).sqrt();
    Ok(confidence_temperature(uncertainty, policy))
}

/// Divergence-guided temperature `T = t0 * (1/2)^(kl / sigma)`.
///
/// Unlike the confidence schedules this one is left unclamped: the decay is
/// bounded in (0, 1] for every finite KL, and the half-life contract wants
/// strict monotonicity all the way down.
pub fn kld_temperature(kl: f64, policy: &TemperaturePolicy) -> Result<f64, SamplingError> {
    policy.validate()?;
    if policy.kind != PolicyKind::Kld {
        return Err(SamplingError::WrongPolicyKind(policy.kind));
    }
    if !kl.is_finite() || kl < 0.0 {
        return Err(SamplingError::NegativeKl(kl));
    }
    Ok(policy.t0 * 0.5f64.powf(kl / policy.sigma))
}

/// Kullback-Leibler divergence `sum p_i ln(p_i / q_i)` in nats.
pub fn kl_divergence(
    p: &CategoricalDistribution,
    q: &CategoricalDistribution,
) -> Result<f64, SamplingError> {
    if p.len() != q.len() {
        return Err(SamplingError::LengthMismatch(p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (index, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(SamplingError::ZeroSupport { index });
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Nucleus filter: keeps the smallest prefix of tokens in descending
/// probability order (ties toward the lowest id) whose cumulative mass
/// reaches `p`, renormalized over the kept set. `p == 1` is the identity.
pub fn top_p_filter(
    dist: &CategoricalDistribution,
    p: f64,
) -> Result<CategoricalDistribution, SamplingError> {
    if !p.is_finite() || p <= 0.0 || p > 1.0 {
        return Err(SamplingError::InvalidTopP(p));
    }
    if p == 1.0 {
        return Ok(dist.clone());
    }
    let probs = dist.probs();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));

    let mut kept = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        kept[i] = probs[i];
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    // Rounding can leave the running total a hair under p even after every
    // token; at that point the kept set is simply everything.
    for v in &mut kept {
        *v /= mass;
    }
    CategoricalDistribution::new(kept)
}

/// Draws one token id from `dist` via inverse-CDF walk over a single uniform
/// variate, advancing `rng` by exactly one `f64` draw.
pub fn sample_token<R: Rng + ?Sized>(
    dist: &CategoricalDistribution,
    rng: &mut R,
) -> Result<TokenId, SamplingError> {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = None;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = Some(i as TokenId);
            if u < cum {
                return Ok(i as TokenId);
            }
        }
    }
    // u landed in the sliver between the accumulated mass and 1.0.
    last_positive.ok_or(SamplingError::EmptySupport)
}
