//! Decoding strategies and the autoregressive loop.
//!
//! Every strategy picks the argmax of its final distribution (lowest id on
//! ties). They differ only in how the final distribution is formed from the
//! with-context and without-context conditionals:
//!
//! | kind    | `p_final`                                             |
//! |---------|-------------------------------------------------------|
//! | Greedy  | `p_ctx`                                               |
//! | Cad     | `combine(p_ctx, p_noctx, alpha)`                      |
//! | AdaCad  | `combine(p_ctx, p_noctx, max(jsd, warmup_lambda))`    |
//! | ConfCd  | `combine` with the confidence-derived alpha           |
//! | Coiecd  | `combine` on conflicting steps, truncated `p_ctx` else |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::bench::ConflictInstance;
use crate::dist::{contrastive_combine, jsd, Alpha, DistError, TokenDistribution, PROB_FLOOR};
use crate::source::{LmSource, SourceError};
use crate::{TokenId, EOS};

pub const DEFAULT_COIECD_LAMBDA: f64 = 0.25;
pub const DEFAULT_COIECD_ALPHA: f64 = 1.0;
pub const LONG_FORM_LAMBDA: f64 = 0.3;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("invalid hyperparameter: {0}")]
    BadHyperparameter(String),
    #[error("cannot parse strategy descriptor {descriptor:?}: {reason}")]
    BadDescriptor { descriptor: String, reason: String },
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    Greedy,
    Cad { alpha: f64 },
    AdaCad { warmup_lambda: f64 },
    ConfCd,
    Coiecd { lambda: f64, alpha: f64 },
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Greedy => "greedy",
            StrategyKind::Cad { .. } => "cad",
            StrategyKind::AdaCad { .. } => "adacad",
            StrategyKind::ConfCd => "confcd",
            StrategyKind::Coiecd { .. } => "coiecd",
        }
    }

    fn validate(&self) -> Result<(), StrategyError> {
        let bad = |msg: String| Err(StrategyError::BadHyperparameter(msg));
        match *self {
            StrategyKind::Cad { alpha } if !(alpha.is_finite() && alpha >= 0.0) => {
                bad(format!("cad alpha must be >= 0, got {alpha}"))
            }
            StrategyKind::AdaCad { warmup_lambda } if !(0.0..=1.0).contains(&warmup_lambda) => {
                bad(format!("warmup lambda must lie in [0, 1], got {warmup_lambda}"))
            }
            StrategyKind::Coiecd { lambda, alpha } => check_coiecd(lambda, alpha),
            _ => Ok(()),
        }
    }
}

fn check_coiecd(lambda: f64, alpha: f64) -> Result<(), StrategyError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(StrategyError::BadHyperparameter(format!(
            "coiecd lambda must lie in (0, 1), got {lambda}"
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(StrategyError::BadHyperparameter(format!(
            "coiecd alpha must be >= 0, got {alpha}"
        )));
    }
    Ok(())
}

/// A validated strategy together with its stopping rule.
///
/// The textual descriptor is `name[:param=value,...]`, e.g. `cad:alpha=0.5`,
/// `adacad:lambda=0.3,max_tokens=16` or `coiecd:lambda=0.25,alpha=1`.
/// `max_tokens` and `stop` are accepted by every kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeStrategy {
    kind: StrategyKind,
    max_tokens: usize,
    stop_token: TokenId,
}

impl DecodeStrategy {
    pub fn new(kind: StrategyKind, max_tokens: usize, stop_token: TokenId) -> Result<Self, StrategyError> {
        kind.validate()?;
        if max_tokens == 0 {
            return Err(StrategyError::BadHyperparameter("max_tokens must be at least 1".into()));
        }
        Ok(DecodeStrategy {
            kind,
            max_tokens,
            stop_token,
        })
    }

    pub fn greedy() -> Self {
        Self::new(StrategyKind::Greedy, 1, EOS).expect("valid")
    }

    pub fn cad(alpha: f64) -> Result<Self, StrategyError> {
        Self::new(StrategyKind::Cad { alpha }, 1, EOS)
    }

    pub fn adacad(warmup_lambda: f64) -> Result<Self, StrategyError> {
        Self::new(StrategyKind::AdaCad { warmup_lambda }, 1, EOS)
    }

    pub fn confcd() -> Self {
        Self::new(StrategyKind::ConfCd, 1, EOS).expect("valid")
    }

    pub fn coiecd(lambda: f64, alpha: f64) -> Result<Self, StrategyError> {
        Self::new(StrategyKind::Coiecd { lambda, alpha }, 1, EOS)
    }

    pub fn with_max_tokens(self, max_tokens: usize) -> Result<Self, StrategyError> {
        Self::new(self.kind, max_tokens, self.stop_token)
    }

    pub fn with_stop_token(self, stop_token: TokenId) -> Self {
        DecodeStrategy { stop_token, ..self }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn stop_token(&self) -> TokenId {
        self.stop_token
    }

    /// Descriptor with characters that are awkward in file names replaced.
    pub fn file_stem(&self) -> String {
        self.to_string()
            .chars()
            .map(|c| match c {
                ':' | ',' => '_',
                c => c,
            })
            .collect()
    }
}

impl fmt::Display for DecodeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut params: Vec<String> = match self.kind {
            StrategyKind::Greedy | StrategyKind::ConfCd => vec![],
            StrategyKind::Cad { alpha } => vec![format!("alpha={alpha}")],
            StrategyKind::AdaCad { warmup_lambda } => vec![format!("lambda={warmup_lambda}")],
            StrategyKind::Coiecd { lambda, alpha } => {
                vec![format!("lambda={lambda}"), format!("alpha={alpha}")]
            }
        };
        if self.max_tokens != 1 {
            params.push(format!("max_tokens={}", self.max_tokens));
        }
        if self.stop_token != EOS {
            params.push(format!("stop={}", self.stop_token));
        }
        f.write_str(self.kind.name())?;
        if !params.is_empty() {
            write!(f, ":{}", params.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for DecodeStrategy {
    type Err = StrategyError;

    fn from_str(descriptor: &str) -> Result<Self, Self::Err> {
        let fail = |reason: String| StrategyError::BadDescriptor {
            descriptor: descriptor.to_string(),
            reason,
        };
        let (name, rest) = match descriptor.trim().split_once(':') {
            Some((n, r)) => (n, r),
            None => (descriptor.trim(), ""),
        };
        let mut alpha = None;
        let mut lambda = None;
        let mut max_tokens = 1usize;
        let mut stop = EOS;
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| fail(format!("expected key=value, got {pair:?}")))?;
            let real = || {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| fail(format!("{key} is not a number: {value:?}")))
            };
            match key.trim() {
                "alpha" => alpha = Some(real()?),
                "lambda" | "warmup_lambda" => lambda = Some(real()?),
                "max_tokens" => {
                    max_tokens = value
                        .trim()
                        .parse()
                        .map_err(|_| fail(format!("max_tokens is not an integer: {value:?}")))?
                }
                "stop" | "stop_token" => {
                    stop = value
                        .trim()
                        .parse()
                        .map_err(|_| fail(format!("stop is not a token id: {value:?}")))?
                }
                other => return Err(fail(format!("unknown parameter {other:?}"))),
            }
        }
        let no_param = |p: Option<f64>, what: &str| match p {
            Some(_) => Err(fail(format!("{name} takes no {what}"))),
            None => Ok(()),
        };
        let kind = match name.to_ascii_lowercase().as_str() {
            "greedy" => {
                no_param(alpha, "alpha")?;
                no_param(lambda, "lambda")?;
                StrategyKind::Greedy
            }
            "cad" => {
                no_param(lambda, "lambda")?;
                StrategyKind::Cad {
                    alpha: alpha.unwrap_or(1.0),
                }
            }
            "adacad" => {
                no_param(alpha, "alpha")?;
                StrategyKind::AdaCad {
                    warmup_lambda: lambda.unwrap_or(0.0),
                }
            }
            "confcd" => {
                no_param(alpha, "alpha")?;
                no_param(lambda, "lambda")?;
                StrategyKind::ConfCd
            }
            "coiecd" => StrategyKind::Coiecd {
                lambda: lambda.unwrap_or(DEFAULT_COIECD_LAMBDA),
                alpha: alpha.unwrap_or(DEFAULT_COIECD_ALPHA),
            },
            other => return Err(fail(format!("unknown strategy {other:?}"))),
        };
        DecodeStrategy::new(kind, max_tokens, stop)
    }
}

impl Serialize for DecodeStrategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DecodeStrategy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a single decoding step saw and decided.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step_index: usize,
    pub p_ctx: TokenDistribution,
    pub p_noctx: TokenDistribution,
    pub p_final: TokenDistribution,
    pub alpha_used: f64,
    pub jsd_value: f64,
    pub chosen_token: TokenId,
    /// Conflict classification, recorded by the COIECD-style strategy only.
    pub conflict: Option<bool>,
}

/// `max(jsd(p_noctx, p_ctx), warmup_lambda)`.
pub fn alpha_adacad(
    p_ctx: &TokenDistribution,
    p_noctx: &TokenDistribution,
    warmup_lambda: f64,
) -> Result<Alpha, DistError> {
    let divergence = jsd(p_noctx, p_ctx)?;
    Alpha::new(divergence.max(warmup_lambda))
}

/// `max p_ctx` when the context is more confident than the prior,
/// `1 - max p_noctx` otherwise.
pub fn alpha_confcd(p_ctx: &TokenDistribution, p_noctx: &TokenDistribution) -> Result<Alpha, DistError> {
    if p_ctx.vocab_size() != p_noctx.vocab_size() {
        return Err(DistError::VocabMismatch {
            left: p_ctx.vocab_size(),
            right: p_noctx.vocab_size(),
        });
    }
    let c_r = p_ctx.max_prob();
    let c = p_noctx.max_prob();
    Alpha::new(if c_r > c { c_r } else { 1.0 - c })
}

/// Whether the context's preferred token is more surprising to the prior than
/// the prior's own entropy.
pub fn coiecd_conflict(p_ctx: &TokenDistribution, p_noctx: &TokenDistribution) -> Result<bool, DistError> {
    if p_ctx.vocab_size() != p_noctx.vocab_size() {
        return Err(DistError::VocabMismatch {
            left: p_ctx.vocab_size(),
            right: p_noctx.vocab_size(),
        });
    }
    let surprisal = -p_noctx.log_prob(p_ctx.argmax()) / std::f64::consts::LN_2;
    Ok(surprisal > p_noctx.entropy_bits())
}

pub fn step_coiecd(
    p_ctx: &TokenDistribution,
    p_noctx: &TokenDistribution,
    lambda: f64,
    alpha: f64,
) -> Result<(TokenDistribution, bool), StrategyError> {
    check_coiecd(lambda, alpha)?;
    if coiecd_conflict(p_ctx, p_noctx)? {
        let combined = contrastive_combine(p_ctx, p_noctx, Alpha::new(alpha)?)?;
        return Ok((combined, true));
    }
    let threshold = lambda * p_ctx.max_prob();
    let kept: Vec<f64> = p_ctx
        .probs()
        .iter()
        .map(|&p| if p >= threshold { p } else { PROB_FLOOR })
        .collect();
    Ok((TokenDistribution::from_weights(&kept)?, false))
}

pub fn decode_step(
    strategy: &DecodeStrategy,
    p_ctx: &TokenDistribution,
    p_noctx: &TokenDistribution,
    step_index: usize,
) -> Result<StepTrace, StrategyError> {
    let jsd_value = jsd(p_noctx, p_ctx)?;
    let mut conflict = None;
    let (p_final, alpha_used) = match strategy.kind {
        StrategyKind::Greedy => (p_ctx.clone(), 0.0),
        StrategyKind::Cad { alpha } => (contrastive_combine(p_ctx, p_noctx, Alpha::new(alpha)?)?, alpha),
        StrategyKind::AdaCad { warmup_lambda } => {
            let alpha = Alpha::new(jsd_value.max(warmup_lambda))?;
            (contrastive_combine(p_ctx, p_noctx, alpha)?, alpha.value())
        }
        StrategyKind::ConfCd => {
            let alpha = alpha_confcd(p_ctx, p_noctx)?;
            (contrastive_combine(p_ctx, p_noctx, alpha)?, alpha.value())
        }
        StrategyKind::Coiecd { lambda, alpha } => {
            let (p, conflicting) = step_coiecd(p_ctx, p_noctx, lambda, alpha)?;
            conflict = Some(conflicting);
            (p, if conflicting { alpha } else { 0.0 })
        }
    };
    Ok(StepTrace {
        step_index,
        chosen_token: p_final.argmax(),
        p_ctx: p_ctx.clone(),
        p_noctx: p_noctx.clone(),
        p_final,
        alpha_used,
        jsd_value,
        conflict,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Emitted tokens, excluding the stop token.
    pub tokens: Vec<TokenId>,
    pub traces: Vec<StepTrace>,
}

/// Decodes `instance` autoregressively. Each chosen token is appended to the
/// prefix seen by both conditionals; the without-context conditional sees the
/// query and prefix only.
pub fn decode_sequence(
    strategy: &DecodeStrategy,
    source: &dyn LmSource,
    instance: &ConflictInstance,
) -> Result<Decoded, StrategyError> {
    decode_prompt(strategy, source, &instance.context, &instance.query)
}

pub fn decode_prompt(
    strategy: &DecodeStrategy,
    source: &dyn LmSource,
    context: &[TokenId],
    query: &[TokenId],
) -> Result<Decoded, StrategyError> {
    if query.is_empty() {
        return Err(StrategyError::EmptyQuery);
    }
    let limit = match source.step_limit() {
        Some(n) => n.min(strategy.max_tokens),
        None => strategy.max_tokens,
    };
    let mut tokens = Vec::new();
    let mut traces = Vec::with_capacity(limit);
    for step in 0..limit {
        let p_ctx = source.next_distribution(Some(context), query, &tokens)?;
        let p_noctx = source.next_distribution(None, query, &tokens)?;
        let trace = decode_step(strategy, &p_ctx, &p_noctx, step)?;
        let chosen = trace.chosen_token;
        traces.push(trace);
        if chosen == strategy.stop_token {
            break;
        }
        tokens.push(chosen);
    }
    Ok(Decoded { tokens, traces })
}
