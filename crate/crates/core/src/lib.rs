//! Context-contrastive decoding over abstract next-token distribution sources.
//!
//! The crate is organised bottom-up:
//!
//! - [`dist`]: log-space probability distributions, KL / Jensen-Shannon
//!   divergence and the PMI-scaled contrastive combination.
//! - [`strategy`]: greedy, CAD, AdaCAD, ConfCD and a COIECD-style baseline,
//!   plus the autoregressive decoding loop that records per-step traces.
//! - [`source`]: the [`source::LmSource`] abstraction with scripted, n-gram
//!   and remote (newline-delimited JSON) implementations.
//! - [`bench`]: a synthetic knowledge-conflict benchmark (ORIGINAL / SWAP /
//!   SYNTH instances over a generated fact base).
//! - [`eval`]: exact match, top-k Spearman correlation, conflict sensitivity
//!   and run aggregation.

pub mod bench;
pub mod dist;
pub mod eval;
pub mod source;
pub mod strategy;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Index into a closed vocabulary.
pub type TokenId = u32;

/// Reserved beginning-of-sequence token.
pub const BOS: TokenId = 0;
/// Reserved end-of-sequence / stop token.
pub const EOS: TokenId = 1;

pub use dist::{Alpha, DistError, TokenDistribution};
pub use source::{LmSource, SourceError};
pub use strategy::{DecodeStrategy, StepTrace, StrategyKind};
