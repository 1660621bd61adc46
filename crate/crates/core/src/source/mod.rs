//! Next-token distribution providers.
//!
//! An [`LmSource`] answers the two conditionals the contrastive strategies
//! need: the distribution given context, query and generated prefix, and the
//! same without the context. Implementations are stateless with respect to
//! queries: identical arguments always yield identical distributions.

use std::time::Duration;

use thiserror::Error;

use crate::dist::{DistError, TokenDistribution};
use crate::TokenId;

pub mod ngram;
pub mod remote;
pub mod scripted;

pub use ngram::{NgramConfig, NgramModel};
pub use remote::RemoteLogitClient;
pub use scripted::{ScriptedScenario, ScriptedSource, ScriptedStep};

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("token id {0} is not in the vocabulary")]
    UnknownTokenId(TokenId),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("step {step} requested but the scenario has {steps} steps")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("protocol error ({reason}) on line {line:?}")]
    Protocol { reason: String, line: String },
    #[error("response carries {got} values but the vocabulary has {expected}")]
    VocabMismatch { expected: usize, got: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("remote error: {0}")]
    Remote(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Abstract next-token distribution provider.
///
/// `context` is `None` for the parametric (no-context) conditional.
/// Implementations must be safe to share across decoding workers.
pub trait LmSource: Send + Sync {
    fn vocab(&self) -> &[String];

    fn next_distribution(
        &self,
        context: Option<&[TokenId]>,
        query: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<TokenDistribution, SourceError>;

    /// Number of decoding steps the source can serve, if bounded.
    fn step_limit(&self) -> Option<usize> {
        None
    }

    fn vocab_size(&self) -> usize {
        self.vocab().len()
    }
}

pub(crate) fn check_ids(ids: &[TokenId], vocab_size: usize) -> Result<(), SourceError> {
    match ids.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&t) => Err(SourceError::UnknownTokenId(t)),
        None => Ok(()),
    }
}
