//! Synthetic knowledge-conflict benchmark.
//!
//! A generated fact base `(subject, relation) -> object` is rendered into a
//! training corpus of `<bos> subject relation object <eos>` sentences. Each
//! benchmark instance pairs a one-sentence context `subject relation object .`
//! with the query `subject relation` and comes in three flavours:
//!
//! - `ORIGINAL`: the context states the fact as stored in the fact base.
//! - `SWAP`: the context states a different object of the same relation,
//!   so context and parametric knowledge disagree.
//! - `SYNTH`: the context states whatever the trained model already answers
//!   without context, so the two agree by construction.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::source::ngram::{train_ngram, NgramConfig, NgramModel};
use crate::source::{LmSource, SourceError};
use crate::{TokenId, BOS, EOS};

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const PERIOD_TOKEN: &str = ".";

pub const VOCAB_FILE: &str = "vocab.txt";
pub const CORPUS_FILE: &str = "corpus.txt";
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const CONFIG_FILE: &str = "bench.json";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("pool too small: {0}")]
    PoolTooSmall(String),
    #[error("SYNTH instances need a trained model")]
    ModelRequired,
    #[error("invalid benchmark config field `{field}`: {reason}")]
    BadConfig { field: String, reason: String },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bad_config(field: &str, reason: impl Into<String>) -> BenchError {
    BenchError::BadConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// SplitMix64 finalizer over `seed + stream * golden`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Closed vocabulary with reverse lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self, BenchError> {
        if tokens.len() < 2 || tokens[BOS as usize] != BOS_TOKEN || tokens[EOS as usize] != EOS_TOKEN {
            return Err(bad_config("vocab", "must start with <bos> and <eos>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(bad_config("vocab", format!("token {t:?} is empty or has whitespace")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(bad_config("vocab", format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<TokenId, BenchError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| BenchError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Whitespace tokenization over the closed vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, BenchError> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub vocab: Vocab,
    pub subjects: Vec<String>,
    pub relations: Vec<String>,
    pub objects: Vec<String>,
    pub facts: Vec<Fact>,
}

impl KnowledgeBase {
    /// Distinct objects used by `relation`, in vocabulary order.
    pub fn relation_objects(&self, relation: &str) -> Vec<&str> {
        let set: BTreeSet<&str> = self
            .facts
            .iter()
            .filter(|f| f.relation == relation)
            .map(|f| f.object.as_str())
            .collect();
        let mut objects: Vec<&str> = set.into_iter().collect();
        objects.sort_by_key(|o| self.vocab.id(o).unwrap_or(TokenId::MAX));
        objects
    }
}

/// Builds a fact base with one uniformly drawn object per (subject, relation).
pub fn generate_kb(
    n_subjects: usize,
    n_relations: usize,
    n_objects: usize,
    seed: u64,
) -> Result<KnowledgeBase, BenchError> {
    for (name, n) in [
        ("n_subjects", n_subjects),
        ("n_relations", n_relations),
        ("n_objects", n_objects),
    ] {
        if n == 0 {
            return Err(BenchError::PoolTooSmall(format!("{name} is 0")));
        }
    }
    let subjects: Vec<String> = (0..n_subjects).map(|i| format!("subj{i}")).collect();
    let relations: Vec<String> = (0..n_relations).map(|i| format!("rel{i}")).collect();
    let objects: Vec<String> = (0..n_objects).map(|i| format!("obj{i}")).collect();

    let mut tokens = vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string(), PERIOD_TOKEN.to_string()];
    tokens.extend(subjects.iter().cloned());
    tokens.extend(relations.iter().cloned());
    tokens.extend(objects.iter().cloned());
    let vocab = Vocab::new(tokens)?;
    if vocab.len() > crate::dist::MAX_VOCAB {
        return Err(bad_config("vocab", format!("{} tokens exceed the maximum", vocab.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts = Vec::with_capacity(n_subjects * n_relations);
    for s in &subjects {
        for r in &relations {
            facts.push(Fact {
                subject: s.clone(),
                relation: r.clone(),
                object: objects[rng.gen_range(0..n_objects)].clone(),
            });
        }
    }
    Ok(KnowledgeBase {
        vocab,
        subjects,
        relations,
        objects,
        facts,
    })
}

fn render_fact(kb: &KnowledgeBase, fact: &Fact) -> Result<Vec<TokenId>, BenchError> {
    Ok(vec![
        BOS,
        kb.vocab.id(&fact.subject)?,
        kb.vocab.id(&fact.relation)?,
        kb.vocab.id(&fact.object)?,
        EOS,
    ])
}

/// Renders every fact `repetitions` times and shuffles deterministically.
pub fn emit_corpus(kb: &KnowledgeBase, repetitions: usize, seed: u64) -> Result<Vec<Vec<TokenId>>, BenchError> {
    emit_corpus_skewed(kb, repetitions, 0.0, seed)
}

/// Like [`emit_corpus`], but fact `f` appears
/// `max(1, round(repetitions * exp(-skew * u_f)))` times with `u_f ~ U[0, 1)`,
/// giving a spread of memorization strengths. `skew = 0` repeats every fact
/// exactly `repetitions` times.
pub fn emit_corpus_skewed(
    kb: &KnowledgeBase,
    repetitions: usize,
    skew: f64,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>, BenchError> {
    if repetitions == 0 {
        return Err(bad_config("repetitions", "must be at least 1"));
    }
    if !(skew.is_finite() && skew >= 0.0) {
        return Err(bad_config("popularity_skew", format!("must be non-negative, got {skew}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::new();
    for fact in &kb.facts {
        let u: f64 = rng.gen();
        let reps = ((repetitions as f64) * (-skew * u).exp()).round().max(1.0) as usize;
        let sentence = render_fact(kb, fact)?;
        corpus.extend(std::iter::repeat_n(sentence, reps));
    }
    corpus.shuffle(&mut rng);
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Original,
    Swap,
    Synth,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Original, Label::Swap, Label::Synth];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Original => "ORIGINAL",
            Label::Swap => "SWAP",
            Label::Synth => "SYNTH",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ORIGINAL" => Ok(Label::Original),
            "SWAP" => Ok(Label::Swap),
            "SYNTH" => Ok(Label::Synth),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictInstance {
    pub id: String,
    pub label: Label,
    pub context: Vec<TokenId>,
    pub query: Vec<TokenId>,
    pub gold: TokenId,
    pub parametric: TokenId,
}

/// Builds one benchmark instance from `fact`.
///
/// `model` is only consulted for `SYNTH`, where the context object becomes
/// the model's no-context answer to the query.
pub fn make_instance(
    id: &str,
    fact: &Fact,
    label: Label,
    kb: &KnowledgeBase,
    model: Option<&dyn LmSource>,
    seed: u64,
) -> Result<ConflictInstance, BenchError> {
    let v = &kb.vocab;
    let subject = v.id(&fact.subject)?;
    let relation = v.id(&fact.relation)?;
    let stored = v.id(&fact.object)?;
    let period = v.id(PERIOD_TOKEN)?;
    let query = vec![subject, relation];

    let (asserted, parametric) = match label {
        Label::Original => (stored, stored),
        Label::Swap => {
            let mut candidates: Vec<&str> = kb
                .relation_objects(&fact.relation)
                .into_iter()
                .filter(|o| *o != fact.object)
                .collect();
            if candidates.is_empty() {
                candidates = kb
                    .objects
                    .iter()
                    .map(String::as_str)
                    .filter(|o| *o != fact.object)
                    .collect();
            }
            if candidates.is_empty() {
                return Err(BenchError::PoolTooSmall(format!(
                    "no object other than {} to swap in",
                    fact.object
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pick = candidates[rng.gen_range(0..candidates.len())];
            (v.id(pick)?, stored)
        }
        Label::Synth => {
            let model = model.ok_or(BenchError::ModelRequired)?;
            let answer = model.next_distribution(None, &query, &[])?.argmax();
            (answer, answer)
        }
    };
    Ok(ConflictInstance {
        id: id.to_string(),
        label,
        context: vec![subject, relation, asserted, period],
        query,
        gold: asserted,
        parametric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mix {
    pub original: f64,
    pub swap: f64,
    pub synth: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            original: 0.0,
            swap: 0.5,
            synth: 0.5,
        }
    }
}

impl Mix {
    fn weights(&self) -> [f64; 3] {
        [self.original, self.swap, self.synth]
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let w = self.weights();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(bad_config("mix", "ratios must be non-negative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(bad_config("mix", format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Instance count per label (ORIGINAL, SWAP, SYNTH), summing to `n`.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let mut counts = [0usize; 3];
        let counts_vec = largest_remainder(n, &self.weights());
        counts.copy_from_slice(&counts_vec);
        counts
    }
}

/// Hamilton apportionment of `n` items over `weights` (summing to 1). Ties in
/// the fractional part go to the lower index.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_subjects: usize,
    pub n_relations: usize,
    pub n_objects: usize,
    pub n_instances: usize,
    pub mix: Mix,
    pub repetitions: usize,
    pub popularity_skew: f64,
    pub model: NgramConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_subjects: 100,
            n_relations: 2,
            n_objects: 20,
            n_instances: 200,
            mix: Mix::default(),
            repetitions: 100,
            popularity_skew: 2.3,
            model: NgramConfig::default(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        for (field, n) in [
            ("n_subjects", self.n_subjects),
            ("n_relations", self.n_relations),
            ("n_objects", self.n_objects),
        ] {
            if n < 2 {
                return Err(bad_config(field, format!("must be at least 2, got {n}")));
            }
        }
        if self.n_instances == 0 {
            return Err(bad_config("n_instances", "must be at least 1"));
        }
        let facts = self.n_subjects * self.n_relations;
        if self.n_instances > facts {
            return Err(bad_config(
                "n_instances",
                format!("{} requested but the fact base has only {facts} facts", self.n_instances),
            ));
        }
        self.mix.validate()?;
        if self.repetitions == 0 {
            return Err(bad_config("repetitions", "must be at least 1"));
        }
        if !(self.popularity_skew.is_finite() && self.popularity_skew >= 0.0) {
            return Err(bad_config("popularity_skew", "must be non-negative"));
        }
        self.model
            .validate()
            .map_err(|e| bad_config("model", e.to_string()))?;
        Ok(())
    }
}

/// A generated benchmark: vocabulary, training corpus and instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub config: BenchConfig,
    pub vocab: Vocab,
    pub corpus: Vec<Vec<TokenId>>,
    pub instances: Vec<ConflictInstance>,
}

impl Suite {
    pub fn train_model(&self, config: NgramConfig) -> Result<NgramModel, SourceError> {
        train_ngram(&self.corpus, self.vocab.tokens().to_vec(), config)
    }

    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(dir)?;
        let mut vocab = String::new();
        for t in self.vocab.tokens() {
            vocab.push_str(t);
            vocab.push('\n');
        }
        fs::write(dir.join(VOCAB_FILE), vocab)?;

        let mut corpus = String::new();
        for line in &self.corpus {
            corpus.push_str(&self.vocab.decode(line));
            corpus.push('\n');
        }
        fs::write(dir.join(CORPUS_FILE), corpus)?;

        let mut out = fs::File::create(dir.join(INSTANCES_FILE))?;
        for inst in &self.instances {
            let line = serde_json::to_string(inst).expect("instance serializes");
            writeln!(out, "{line}")?;
        }

        let config = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(dir.join(CONFIG_FILE), config + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let config_path = dir.join(CONFIG_FILE);
        let config: BenchConfig = serde_json::from_str(&fs::read_to_string(&config_path)?).map_err(|e| {
            BenchError::Parse {
                path: config_path.display().to_string(),
                line: e.line(),
                reason: e.to_string(),
            }
        })?;
        let vocab = Vocab::new(
            fs::read_to_string(dir.join(VOCAB_FILE))?
                .lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )?;
        let corpus = fs::read_to_string(dir.join(CORPUS_FILE))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| vocab.encode(l))
            .collect::<Result<Vec<_>, _>>()?;
        let instances = load_instances(&dir.join(INSTANCES_FILE), vocab.len())?;
        Ok(Suite {
            config,
            vocab,
            corpus,
            instances,
        })
    }
}

pub fn load_instances(path: &Path, vocab_size: usize) -> Result<Vec<ConflictInstance>, BenchError> {
    let text = fs::read_to_string(path)?;
    let mut instances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| BenchError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        let inst: ConflictInstance = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let ids = inst.context.iter().chain(&inst.query).chain([&inst.gold, &inst.parametric]);
        if let Some(bad) = ids.copied().find(|&t| t as usize >= vocab_size) {
            return Err(parse_err(format!("token id {bad} is outside the vocabulary")));
        }
        instances.push(inst);
    }
    Ok(instances)
}

/// Generates a suite in memory. Deterministic in `config`.
pub fn generate_suite(config: &BenchConfig) -> Result<Suite, BenchError> {
    config.validate()?;
    let seed = config.seed;
    let kb = generate_kb(
        config.n_subjects,
        config.n_relations,
        config.n_objects,
        derive_seed(seed, 0),
    )?;
    let corpus = emit_corpus_skewed(&kb, config.repetitions, config.popularity_skew, derive_seed(seed, 1))?;

    let counts = config.mix.counts(config.n_instances);
    let model = if counts[2] > 0 {
        Some(train_ngram(&corpus, kb.vocab.tokens().to_vec(), config.model)?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut facts: Vec<&Fact> = kb.facts.iter().collect();
    facts.shuffle(&mut rng);
    let mut labels: Vec<Label> = Label::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&l, n)| std::iter::repeat_n(l, n))
        .collect();
    labels.shuffle(&mut rng);

    let width = config.n_instances.to_string().len().max(4);
    let instances = facts
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (fact, label))| {
            let id = format!("i{i:0width$}");
            make_instance(
                &id,
                fact,
                label,
                &kb,
                model.as_ref().map(|m| m as &dyn LmSource),
                derive_seed(seed, 1_000 + i as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Suite {
        config: config.clone(),
        vocab: kb.vocab,
        corpus,
        instances,
    })
}

/// Generates a suite and persists it under `dir`.
pub fn build_suite(config: &BenchConfig, dir: &Path) -> Result<Suite, BenchError> {
    let suite = generate_suite(config)?;
    suite.write(dir)?;
    log::debug!(
        "wrote {} instances and {} corpus lines to {}",
        suite.instances.len(),
        suite.corpus.len(),
        dir.display()
    );
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kb_is_deterministic() {
        let a = generate_kb(2, 1, 3, 7).unwrap();
        let b = generate_kb(2, 1, 3, 7).unwrap();
        assert_eq!(a.facts.len(), 2);
        assert_eq!(a, b);
    }

    #[test]
    fn kb_pairs_are_unique() {
        let kb = generate_kb(10, 3, 5, 1).unwrap();
        let pairs: BTreeSet<(&str, &str)> = kb
            .facts
            .iter()
            .map(|f| (f.subject.as_str(), f.relation.as_str()))
            .collect();
        assert_eq!(pairs.len(), kb.facts.len());
    }

    #[test]
    fn single_fact_corpus() {
        let mut kb = generate_kb(1, 1, 2, 3).unwrap();
        kb.facts.truncate(1);
        let corpus = emit_corpus(&kb, 100, 9).unwrap();
        assert_eq!(corpus.len(), 100);
        assert!(corpus.iter().all(|s| s == &corpus[0]));
        assert_eq!(corpus[0].first(), Some(&BOS));
        assert_eq!(corpus[0].last(), Some(&EOS));
    }

    #[test]
    fn corpus_shuffle_is_seeded() {
        let kb = generate_kb(5, 2, 4, 3).unwrap();
        assert_eq!(emit_corpus(&kb, 3, 11).unwrap(), emit_corpus(&kb, 3, 11).unwrap());
        assert_ne!(emit_corpus(&kb, 3, 11).unwrap(), emit_corpus(&kb, 3, 12).unwrap());
    }

    #[test]
    fn swap_needs_two_objects() {
        let kb = generate_kb(2, 1, 1, 0).unwrap();
        let err = make_instance("x", &kb.facts[0], Label::Swap, &kb, None, 0).unwrap_err();
        assert!(matches!(err, BenchError::PoolTooSmall(_)));
    }

    #[test]
    fn synth_needs_model() {
        let kb = generate_kb(2, 1, 2, 0).unwrap();
        let err = make_instance("x", &kb.facts[0], Label::Synth, &kb, None, 0).unwrap_err();
        assert!(matches!(err, BenchError::ModelRequired));
    }

    #[test]
    fn original_and_forced_swap() {
        let mut kb = generate_kb(2, 1, 2, 0).unwrap();
        kb.facts[0].object = "obj0".into();
        kb.facts[1].object = "obj1".into();
        let o = kb.vocab.id("obj0").unwrap();
        let o2 = kb.vocab.id("obj1").unwrap();
        let orig = make_instance("a", &kb.facts[0], Label::Original, &kb, None, 0).unwrap();
        assert_eq!((orig.gold, orig.parametric), (o, o));
        assert_eq!(orig.context[2], o);
        let swap = make_instance("b", &kb.facts[0], Label::Swap, &kb, None, 5).unwrap();
        assert_eq!((swap.gold, swap.parametric), (o2, o));
        assert_eq!(swap.context[2], o2);
        assert_eq!(swap.query, orig.query);
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(largest_remainder(100, &[0.0, 0.5, 0.5]), vec![0, 50, 50]);
        assert_eq!(largest_remainder(10, &[1.0 / 3.0; 3]), vec![4, 3, 3]);
        assert_eq!(largest_remainder(7, &[0.2, 0.3, 0.5]), vec![1, 2, 4]);
    }

    #[test]
    fn mix_must_sum_to_one() {
        let config = BenchConfig {
            mix: Mix {
                original: 0.0,
                swap: 0.5,
                synth: 0.4,
            },
            ..BenchConfig::default()
        };
        match config.validate() {
            Err(BenchError::BadConfig { field, .. }) => assert_eq!(field, "mix"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vocab_encoding() {
        let kb = generate_kb(2, 1, 2, 0).unwrap();
        let ids = kb.vocab.encode("subj0 rel0 obj1 .").unwrap();
        assert_eq!(kb.vocab.decode(&ids), "subj0 rel0 obj1 .");
        assert!(matches!(kb.vocab.encode("subj0 nope"), Err(BenchError::UnknownToken(_))));
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
    }
}
