//! Add-k smoothed n-gram language model.
//!
//! Training pads every sequence with `order - 1` BOS tokens on the left and a
//! single EOS on the right, then counts every sliding window. A history that
//! was never observed, or a conditioning sequence shorter than `order - 1`,
//! falls back to the add-k smoothed unigram.
//!
//! The with-context conditional reads the context segment in addition to
//! conditioning on its tail. The context's own n-gram windows are added to the
//! corpus counts with weight `context_weight`, and the result is interpolated
//! with a unigram cache over the context tokens:
//!
//! ```text
//! p(y | c, h) = (1 - cache_weight) * P_adapt(y | h) + cache_weight * cache_c(y)
//! ```
//!
//! With both weights at zero the context only contributes through the history,
//! i.e. plain concatenation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_ids, LmSource, SourceError};
use crate::dist::TokenDistribution;
use crate::{TokenId, BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramConfig {
    pub order: usize,
    pub add_k: f64,
    pub context_weight: f64,
    pub cache_weight: f64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            order: 3,
            add_k: 0.1,
            context_weight: 30.0,
            cache_weight: 0.3,
        }
    }
}

impl NgramConfig {
    /// Pure n-gram reading of the context (concatenation only).
    pub fn plain(order: usize, add_k: f64) -> Self {
        NgramConfig {
            order,
            add_k,
            context_weight: 0.0,
            cache_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        if self.order == 0 {
            return Err(SourceError::BadConfig("order must be at least 1".into()));
        }
        if !(self.add_k.is_finite() && self.add_k > 0.0) {
            return Err(SourceError::BadConfig(format!(
                "add_k must be positive, got {}",
                self.add_k
            )));
        }
        if !(self.context_weight.is_finite() && self.context_weight >= 0.0) {
            return Err(SourceError::BadConfig(format!(
                "context_weight must be non-negative, got {}",
                self.context_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.cache_weight) {
            return Err(SourceError::BadConfig(format!(
                "cache_weight must lie in [0, 1], got {}",
                self.cache_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct CountTable {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

impl CountTable {
    fn add(&mut self, token: TokenId, count: u64) {
        self.total += count;
        *self.next.entry(token).or_insert(0) += count;
    }

    fn get(&self, token: TokenId) -> u64 {
        self.next.get(&token).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    config: NgramConfig,
    vocab: Vec<String>,
    histories: BTreeMap<Vec<TokenId>, CountTable>,
    unigram: CountTable,
}

/// Counts every window of `sequence` after BOS padding. `close` appends EOS.
fn count_windows(
    sequence: &[TokenId],
    order: usize,
    close: bool,
    histories: &mut BTreeMap<Vec<TokenId>, CountTable>,
    unigram: &mut CountTable,
) {
    let body = strip_sentinels(sequence);
    let mut padded = vec![BOS; order - 1];
    padded.extend_from_slice(body);
    if close {
        padded.push(EOS);
    }
    for i in (order - 1)..padded.len() {
        let target = padded[i];
        unigram.add(target, 1);
        if order > 1 {
            histories
                .entry(padded[i + 1 - order..i].to_vec())
                .or_default()
                .add(target, 1);
        }
    }
}

fn strip_sentinels(sequence: &[TokenId]) -> &[TokenId] {
    let mut body = sequence;
    if body.first() == Some(&BOS) {
        body = &body[1..];
    }
    if body.last() == Some(&EOS) {
        body = &body[..body.len() - 1];
    }
    body
}

/// Trains an n-gram model over `corpus`. Sequences may or may not carry their
/// own BOS/EOS sentinels; both forms count identically.
pub fn train_ngram(
    corpus: &[Vec<TokenId>],
    vocab: Vec<String>,
    config: NgramConfig,
) -> Result<NgramModel, SourceError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(SourceError::EmptyCorpus);
    }
    if vocab.len() < 2 {
        return Err(SourceError::BadConfig(format!(
            "vocabulary needs at least the two sentinels, got {} tokens",
            vocab.len()
        )));
    }
    let mut histories = BTreeMap::new();
    let mut unigram = CountTable::default();
    for sequence in corpus {
        check_ids(sequence, vocab.len())?;
        count_windows(sequence, config.order, true, &mut histories, &mut unigram);
    }
    Ok(NgramModel {
        config,
        vocab,
        histories,
        unigram,
    })
}

impl NgramModel {
    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    /// Replaces the context-reading weights, keeping the trained counts.
    pub fn with_context_reading(mut self, context_weight: f64, cache_weight: f64) -> Result<Self, SourceError> {
        let config = NgramConfig {
            context_weight,
            cache_weight,
            ..self.config
        };
        config.validate()?;
        self.config = config;
        Ok(self)
    }

    pub fn history_count(&self, history: &[TokenId]) -> u64 {
        self.histories.get(history).map_or(0, |t| t.total)
    }

    pub fn histories(&self) -> impl Iterator<Item = &[TokenId]> {
        self.histories.keys().map(Vec::as_slice)
    }

    /// Smoothed conditional over the corpus counts alone.
    pub fn conditional(&self, history: &[TokenId]) -> Result<TokenDistribution, SourceError> {
        check_ids(history, self.vocab.len())?;
        let table = self.lookup(history).unwrap_or(&self.unigram);
        Ok(self.smoothed(table, None, 0.0))
    }

    fn lookup(&self, history: &[TokenId]) -> Option<&CountTable> {
        let n = self.config.order - 1;
        if n == 0 || history.len() < n {
            return None;
        }
        self.histories.get(&history[history.len() - n..])
    }

    fn smoothed(&self, table: &CountTable, extra: Option<&CountTable>, weight: f64) -> TokenDistribution {
        let v = self.vocab.len();
        let k = self.config.add_k;
        let weights: Vec<f64> = (0..v as TokenId)
            .map(|t| {
                let extra_count = extra.map_or(0.0, |e| e.get(t) as f64);
                table.get(t) as f64 + weight * extra_count + k
            })
            .collect();
        TokenDistribution::from_weights(&weights).expect("add-k weights are positive")
    }

    fn with_context(&self, context: &[TokenId], history: &[TokenId]) -> TokenDistribution {
        let order = self.config.order;
        let w = self.config.context_weight;
        let beta = self.config.cache_weight;
        let mut ctx_histories = BTreeMap::new();
        let mut ctx_unigram = CountTable::default();
        if !context.is_empty() {
            count_windows(context, order, false, &mut ctx_histories, &mut ctx_unigram);
        }

        let empty = CountTable::default();
        let n = order - 1;
        let adapt = if n == 0 || history.len() < n {
            self.smoothed(&self.unigram, Some(&ctx_unigram), w)
        } else {
            let key = &history[history.len() - n..];
            let ctx_table = if w > 0.0 { ctx_histories.get(key) } else { None };
            match (self.histories.get(key), ctx_table) {
                (None, None) => self.smoothed(&self.unigram, Some(&ctx_unigram), w),
                (corpus, ctx) => self.smoothed(corpus.unwrap_or(&empty), ctx.or(Some(&empty)), w),
            }
        };

        let cache_tokens: Vec<TokenId> = context
            .iter()
            .copied()
            .filter(|&t| t != BOS && t != EOS)
            .collect();
        if beta == 0.0 || cache_tokens.is_empty() {
            return adapt;
        }
        let mut mixed: Vec<f64> = adapt.probs().iter().map(|p| (1.0 - beta) * p).collect();
        let share = beta / cache_tokens.len() as f64;
        for &t in &cache_tokens {
            mixed[t as usize] += share;
        }
        TokenDistribution::from_weights(&mixed).expect("mixture weights are positive")
    }

    pub fn save(&self, path: &Path) -> Result<(), SourceError> {
        let file = ModelFile {
            config: self.config,
            vocab: self.vocab.clone(),
            unigram: self.unigram.next.iter().map(|(&t, &c)| (t, c)).collect(),
            histories: self
                .histories
                .iter()
                .map(|(h, table)| HistoryEntry {
                    history: h.clone(),
                    next: table.next.iter().map(|(&t, &c)| (t, c)).collect(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| SourceError::BadConfig(format!("cannot serialize model: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SourceError> {
        let text = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| SourceError::BadConfig(format!("{}: {e}", path.display())))?;
        file.config.validate()?;
        let v = file.vocab.len();
        let table = |entries: Vec<(TokenId, u64)>| -> Result<CountTable, SourceError> {
            let mut table = CountTable::default();
            for (t, c) in entries {
                check_ids(&[t], v)?;
                if c == 0 {
                    return Err(SourceError::BadConfig("stored counts must be positive".into()));
                }
                table.add(t, c);
            }
            Ok(table)
        };
        let unigram = table(file.unigram)?;
        let mut histories = BTreeMap::new();
        for entry in file.histories {
            check_ids(&entry.history, v)?;
            if entry.history.len() + 1 != file.config.order {
                return Err(SourceError::BadConfig(format!(
                    "history {:?} does not match order {}",
                    entry.history, file.config.order
                )));
            }
            histories.insert(entry.history, table(entry.next)?);
        }
        Ok(NgramModel {
            config: file.config,
            vocab: file.vocab,
            histories,
            unigram,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: NgramConfig,
    vocab: Vec<String>,
    unigram: Vec<(TokenId, u64)>,
    histories: Vec<HistoryEntry>,
}

#[derive(Serialize, Deserialize)]
struct HistoryEntry {
    history: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

impl LmSource for NgramModel {
    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn next_distribution(
        &self,
        context: Option<&[TokenId]>,
        query: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<TokenDistribution, SourceError> {
        let v = self.vocab.len();
        check_ids(query, v)?;
        check_ids(prefix, v)?;
        let ctx = context.unwrap_or(&[]);
        check_ids(ctx, v)?;

        let mut sequence = Vec::with_capacity(ctx.len() + query.len() + prefix.len());
        sequence.extend_from_slice(ctx);
        sequence.extend_from_slice(query);
        sequence.extend_from_slice(prefix);

        let reads_context = self.config.context_weight > 0.0 || self.config.cache_weight > 0.0;
        match context {
            Some(c) if reads_context => Ok(self.with_context(c, &sequence)),
            _ => {
                let table = self.lookup(&sequence).unwrap_or(&self.unigram);
                Ok(self.smoothed(table, None, 0.0))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vec<String> {
        let mut v = vec!["<bos>".to_string(), "<eos>".to_string()];
        v.extend((2..n).map(|i| format!("w{i}")));
        v
    }

    #[test]
    fn bigram_count_ratio() {
        let corpus = vec![vec![2, 3]; 100];
        let model = train_ngram(&corpus, vocab(4), NgramConfig::plain(2, 0.1)).unwrap();
        let p = model.next_distribution(None, &[2], &[]).unwrap();
        let expected = (100.0 + 0.1) / (100.0 + 0.1 * 4.0);
        assert!((p.prob(3) - expected).abs() < 1e-12);
        assert!(p.prob(3) > 0.9);
    }

    #[test]
    fn history_seen_fifty_times() {
        let corpus = vec![vec![2, 3, 4]; 50];
        let v = 6;
        let model = train_ngram(&corpus, vocab(v), NgramConfig::plain(3, 0.1)).unwrap();
        assert_eq!(model.history_count(&[2, 3]), 50);
        let p = model.next_distribution(None, &[2, 3], &[]).unwrap();
        assert!((p.prob(4) - 50.1 / (50.0 + 0.1 * v as f64)).abs() < 1e-12);
    }

    #[test]
    fn short_history_backs_off_to_unigram() {
        let corpus = vec![vec![2, 3, 4], vec![2, 5]];
        let model = train_ngram(&corpus, vocab(6), NgramConfig::plain(3, 0.1)).unwrap();
        let p = model.next_distribution(None, &[], &[]).unwrap();
        // unigram targets: 2,3,4,EOS,2,5,EOS
        let denom = 7.0 + 0.1 * 6.0;
        assert!((p.prob(2) - 2.1 / denom).abs() < 1e-12);
        assert!((p.prob(EOS) - 2.1 / denom).abs() < 1e-12);
        assert!((p.prob(BOS) - 0.1 / denom).abs() < 1e-12);
    }

    #[test]
    fn unseen_history_backs_off_to_unigram() {
        let corpus = vec![vec![2, 3, 4]];
        let model = train_ngram(&corpus, vocab(6), NgramConfig::plain(3, 0.1)).unwrap();
        let unseen = model.next_distribution(None, &[5, 5], &[]).unwrap();
        let empty = model.next_distribution(None, &[], &[]).unwrap();
        assert_eq!(unseen, empty);
    }

    #[test]
    fn order_one_ignores_history() {
        let corpus = vec![vec![2, 3, 4], vec![3, 3]];
        let model = train_ngram(&corpus, vocab(5), NgramConfig::plain(1, 0.1)).unwrap();
        let a = model.next_distribution(None, &[2], &[]).unwrap();
        let b = model.next_distribution(Some(&[4, 4]), &[3, 2], &[2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn huge_add_k_is_nearly_uniform() {
        let corpus = vec![vec![2, 3]; 100];
        let model = train_ngram(&corpus, vocab(5), NgramConfig::plain(2, 1e6)).unwrap();
        let p = model.next_distribution(None, &[2], &[]).unwrap();
        assert!(p.probs().iter().all(|&x| (x - 0.2).abs() < 1e-3));
    }

    #[test]
    fn sentinels_in_corpus_are_optional() {
        let bare = train_ngram(&[vec![2, 3]], vocab(4), NgramConfig::plain(3, 0.1)).unwrap();
        let framed = train_ngram(&[vec![BOS, 2, 3, EOS]], vocab(4), NgramConfig::plain(3, 0.1)).unwrap();
        assert_eq!(bare, framed);
    }

    #[test]
    fn zero_weights_mean_plain_concatenation() {
        let corpus = vec![vec![2, 3, 4], vec![4, 2, 5]];
        let plain = train_ngram(&corpus, vocab(6), NgramConfig::plain(3, 0.1)).unwrap();
        let with = plain.next_distribution(Some(&[4]), &[2], &[]).unwrap();
        let concatenated = plain.next_distribution(None, &[4, 2], &[]).unwrap();
        assert_eq!(with, concatenated);
    }

    #[test]
    fn context_counts_shift_the_answer() {
        let mut corpus = vec![vec![2, 3, 4]; 20];
        corpus.push(vec![2, 3, 5]);
        let config = NgramConfig {
            order: 3,
            add_k: 0.1,
            context_weight: 30.0,
            cache_weight: 0.0,
        };
        let model = train_ngram(&corpus, vocab(6), config).unwrap();
        let without = model.next_distribution(None, &[2, 3], &[]).unwrap();
        let with = model.next_distribution(Some(&[2, 3, 5]), &[2, 3], &[]).unwrap();
        assert_eq!(without.argmax(), 4);
        assert_eq!(with.argmax(), 5);
        // history (2,3): corpus 20x4 + 1x5, context adds one (2,3)->5 window
        let denom = 21.0 + 30.0 + 0.6;
        assert!((with.prob(5) - 31.1 / denom).abs() < 1e-12);
    }

    #[test]
    fn cache_mixes_context_unigram() {
        let corpus = vec![vec![2, 3, 4]];
        let config = NgramConfig {
            order: 2,
            add_k: 0.1,
            context_weight: 0.0,
            cache_weight: 0.5,
        };
        let model = train_ngram(&corpus, vocab(6), config).unwrap();
        let plain = train_ngram(&corpus, vocab(6), NgramConfig::plain(2, 0.1)).unwrap();
        let base = plain.next_distribution(None, &[5], &[]).unwrap();
        let mixed = model.next_distribution(Some(&[5, 5]), &[5], &[]).unwrap();
        assert!((mixed.prob(5) - (0.5 * base.prob(5) + 0.5)).abs() < 1e-12);
        assert!((mixed.prob(2) - 0.5 * base.prob(2)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            train_ngram(&[], vocab(4), NgramConfig::default()),
            Err(SourceError::EmptyCorpus)
        ));
        assert!(matches!(
            train_ngram(&[vec![2, 9]], vocab(4), NgramConfig::default()),
            Err(SourceError::UnknownTokenId(9))
        ));
        assert!(matches!(
            train_ngram(&[vec![2]], vocab(4), NgramConfig::plain(0, 0.1)),
            Err(SourceError::BadConfig(_))
        ));
        assert!(matches!(
            train_ngram(&[vec![2]], vocab(4), NgramConfig::plain(2, 0.0)),
            Err(SourceError::BadConfig(_))
        ));
        let model = train_ngram(&[vec![2, 3]], vocab(4), NgramConfig::default()).unwrap();
        assert!(matches!(
            model.next_distribution(None, &[7], &[]),
            Err(SourceError::UnknownTokenId(7))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = vec![vec![2, 3, 4], vec![3, 2]];
        let model = train_ngram(&corpus, vocab(5), NgramConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        assert_eq!(NgramModel::load(&path).unwrap(), model);
    }
}
