//! Probability-distribution algebra over a closed vocabulary.
//!
//! Every [`TokenDistribution`] is stored in natural-log space and is floored:
//! no token carries less than [`PROB_FLOOR`] mass, so the PMI ratio and the
//! KL logarithm are always defined. Divergences are reported in bits, which
//! makes the Jensen-Shannon divergence lie in `[0, 1]`.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use thiserror::Error;

use crate::TokenId;

/// Smallest probability any token may carry after construction.
pub const PROB_FLOOR: f64 = 1e-12;

/// Largest vocabulary the desk-scale engine accepts.
pub const MAX_VOCAB: usize = 65_536;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("logit at index {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },
    #[error("vocabulary of size {0} is too small (need at least 2)")]
    VocabTooSmall(usize),
    #[error("vocabulary of size {0} exceeds the supported maximum of {MAX_VOCAB}")]
    VocabTooLarge(usize),
    #[error("vocabulary sizes differ: {left} vs {right}")]
    VocabMismatch { left: usize, right: usize },
    #[error("alpha must be a non-negative real, got {0}")]
    NegativeAlpha(f64),
    #[error("k = {k} is out of range for a vocabulary of {vocab}")]
    KOutOfRange { k: usize, vocab: usize },
    #[error("probability at index {index} is invalid ({value})")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
}

/// Non-negative adjustment weight of the contrastive combination.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Alpha(f64);

impl Alpha {
    pub const ZERO: Alpha = Alpha(0.0);
    pub const ONE: Alpha = Alpha(1.0);

    pub fn new(value: f64) -> Result<Self, DistError> {
        if value.is_nan() || value < 0.0 || value.is_infinite() {
            return Err(DistError::NegativeAlpha(value));
        }
        Ok(Alpha(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A normalized, floored next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Log-softmax of raw scores.
    pub fn from_logits(logits: &[f64]) -> Result<Self, DistError> {
        check_len(logits.len())?;
        if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DistError::NonFiniteLogit { index, value });
        }
        Ok(Self::from_finite_scores(logits))
    }

    /// Builds a distribution from probabilities that already sum to one
    /// (within `1e-6`). Zero entries are floored.
    pub fn from_probs(probs: &[f64]) -> Result<Self, DistError> {
        check_len(probs.len())?;
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(DistError::InvalidProbability { index, value });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(DistError::NotNormalized { sum });
        }
        let log_probs: Vec<f64> = probs.iter().map(|&p| (p / sum).ln()).collect();
        Ok(Self::floored(log_probs))
    }

    /// Normalizes non-negative weights with a positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self, DistError> {
        check_len(weights.len())?;
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(DistError::InvalidProbability { index, value });
        }
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(DistError::NotNormalized { sum });
        }
        let ln_sum = sum.ln();
        Ok(Self::floored(weights.iter().map(|&w| w.ln() - ln_sum).collect()))
    }

    pub fn uniform(vocab_size: usize) -> Result<Self, DistError> {
        check_len(vocab_size)?;
        Ok(Self::from_finite_scores(&vec![0.0; vocab_size]))
    }

    fn from_finite_scores(scores: &[f64]) -> Self {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        Self::floored(scores.iter().map(|&s| s - lse).collect())
    }

    /// Applies the probability floor to normalized log-probabilities
    /// (entries may be `-inf`) and renormalizes.
    fn floored(log_probs: Vec<f64>) -> Self {
        let floor_ln = PROB_FLOOR.ln();
        if log_probs.iter().all(|&l| l >= floor_ln) {
            let probs = log_probs.iter().map(|l| l.exp()).collect();
            return TokenDistribution { log_probs, probs };
        }
        let clamped: Vec<f64> = log_probs.iter().map(|&l| l.max(floor_ln)).collect();
        let total: f64 = clamped.iter().map(|l| l.exp()).sum();
        let ln_total = total.ln();
        let log_probs: Vec<f64> = clamped.iter().map(|l| l - ln_total).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        TokenDistribution { log_probs, probs }
    }

    pub fn vocab_size(&self) -> usize {
        self.log_probs.len()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token as usize]
    }

    pub fn log_prob(&self, token: TokenId) -> f64 {
        self.log_probs[token as usize]
    }

    /// Most probable token; ties resolve to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &lp) in self.log_probs.iter().enumerate().skip(1) {
            if lp > self.log_probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax() as usize]
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| p * lp)
            .sum::<f64>()
            / LN_2
    }

    /// The `k` most probable tokens, descending, ties by ascending id.
    pub fn top_k(&self, k: usize) -> Result<Vec<(TokenId, f64)>, DistError> {
        if k == 0 || k > self.vocab_size() {
            return Err(DistError::KOutOfRange { k, vocab: self.vocab_size() });
        }
        let mut ids: Vec<usize> = (0..self.vocab_size()).collect();
        ids.sort_by(|&a, &b| {
            self.log_probs[b]
                .partial_cmp(&self.log_probs[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        Ok(ids
            .into_iter()
            .take(k)
            .map(|i| (i as TokenId, self.probs[i]))
            .collect())
    }

    pub(crate) fn check_same_vocab(&self, other: &TokenDistribution) -> Result<(), DistError> {
        if self.vocab_size() != other.vocab_size() {
            return Err(DistError::VocabMismatch {
                left: self.vocab_size(),
                right: other.vocab_size(),
            });
        }
        Ok(())
    }
}

fn check_len(len: usize) -> Result<(), DistError> {
    if len < 2 {
        return Err(DistError::VocabTooSmall(len));
    }
    if len > MAX_VOCAB {
        return Err(DistError::VocabTooLarge(len));
    }
    Ok(())
}

/// `KL(p || m)` in bits. Terms with zero `p` mass contribute nothing.
pub fn kl_divergence(p: &TokenDistribution, m: &TokenDistribution) -> Result<f64, DistError> {
    p.check_same_vocab(m)?;
    let nats: f64 = p
        .probs
        .iter()
        .zip(&p.log_probs)
        .zip(&m.log_probs)
        .filter(|((pi, _), _)| **pi > 0.0)
        .map(|((pi, lp), lm)| pi * (lp - lm))
        .sum();
    Ok((nats / LN_2).max(0.0))
}

/// Jensen-Shannon divergence in bits, bounded in `[0, 1]`.
///
/// Each index contributes `p·ln(p/m) + q·ln(q/m)`; the two halves commute,
/// so `jsd(p, q)` and `jsd(q, p)` are bit-identical.
pub fn jsd(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64, DistError> {
    p.check_same_vocab(q)?;
    let mut nats = 0.0;
    for i in 0..p.vocab_size() {
        let (pi, qi) = (p.probs[i], q.probs[i]);
        let (lp, lq) = (p.log_probs[i], q.log_probs[i]);
        let (hi, lo) = if lp >= lq { (lp, lq) } else { (lq, lp) };
        // exact when lp == lq, so jsd(p, p) is exactly zero
        let lm = hi + (0.5 * (1.0 + (lo - hi).exp())).ln();
        let tp = if pi > 0.0 { pi * (p.log_probs[i] - lm) } else { 0.0 };
        let tq = if qi > 0.0 { qi * (q.log_probs[i] - lm) } else { 0.0 };
        nats += tp + tq;
    }
    Ok((0.5 * nats / LN_2).clamp(0.0, 1.0))
}

/// `p_ctx · (p_ctx / p_noctx)^alpha`, renormalized.
///
/// Computed in log space as `(1 + alpha)·log p_ctx − alpha·log p_noctx`
/// followed by a log-softmax. `alpha = 0` returns `p_ctx` unchanged.
pub fn contrastive_combine(
    p_ctx: &TokenDistribution,
    p_noctx: &TokenDistribution,
    alpha: Alpha,
) -> Result<TokenDistribution, DistError> {
    p_ctx.check_same_vocab(p_noctx)?;
    let a = alpha.value();
    if a == 0.0 {
        return Ok(p_ctx.clone());
    }
    let scores: Vec<f64> = p_ctx
        .log_probs
        .iter()
        .zip(&p_noctx.log_probs)
        .map(|(lc, ln)| (1.0 + a) * lc - a * ln)
        .collect();
    Ok(TokenDistribution::from_finite_scores(&scores))
}
