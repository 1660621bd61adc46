//! Run configuration (JSON, versioned by `schema_version`).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use conflict_decode_core::bench::BenchConfig;
use conflict_decode_core::source::ngram::NgramConfig;
use conflict_decode_core::source::remote::Endpoint;
use conflict_decode_core::strategy::DecodeStrategy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchSpec {
    /// Generate a suite from these parameters.
    Generate(BenchConfig),
    /// Load a previously generated suite directory.
    Suite(PathBuf),
    /// A bare instances file, typically paired with a scripted model.
    Instances(PathBuf),
}

/// Optional overrides of the suite's n-gram parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgramSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_weight: Option<f64>,
    /// Corpus repetitions per fact when the suite is generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
}

impl NgramSpec {
    pub fn apply(&self, base: NgramConfig) -> NgramConfig {
        NgramConfig {
            order: self.order.unwrap_or(base.order),
            add_k: self.add_k.unwrap_or(base.add_k),
            context_weight: self.context_weight.unwrap_or(base.context_weight),
            cache_weight: self.cache_weight.unwrap_or(base.cache_weight),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSpec {
    /// `host:port` or `stdio`.
    pub endpoint: String,
    /// Program and arguments to launch for a `stdio` endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    30.0
}

impl RemoteSpec {
    pub fn endpoint(&self) -> Result<Endpoint, CliError> {
        Endpoint::parse(&self.endpoint, self.command.as_deref()).map_err(|e| CliError::BadConfig(format!("model.remote: {e}")))
    }

    pub fn timeout(&self) -> Result<Duration, CliError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(CliError::BadConfig(format!(
                "model.remote.timeout_secs must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(Duration::from_secs_f64(self.timeout_secs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Train an n-gram model on the suite corpus.
    Ngram(NgramSpec),
    /// Load a model written by `train`.
    NgramFile(PathBuf),
    /// A scenario file used for every instance, or a directory of
    /// `<instance id>.json` scenarios.
    Scripted(PathBuf),
    Remote(RemoteSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub bench: BenchSpec,
    pub model: ModelSpec,
    pub strategies: Vec<DecodeStrategy>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    1
}

fn default_top_k() -> usize {
    conflict_decode_core::eval::DEFAULT_TOP_K
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub strategies: Vec<DecodeStrategy>,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.fold_model_into_bench();
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.bench {
            BenchSpec::Suite(p) | BenchSpec::Instances(p) => fix(p),
            BenchSpec::Generate(_) => {}
        }
        match &mut self.model {
            ModelSpec::NgramFile(p) | ModelSpec::Scripted(p) => fix(p),
            ModelSpec::Ngram(_) | ModelSpec::Remote(_) => {}
        }
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(workers) = overrides.workers {
            self.workers = workers;
        }
        if let Some(out) = &overrides.out {
            self.output_dir = out.clone();
        }
        if !overrides.strategies.is_empty() {
            self.strategies = overrides.strategies.clone();
        }
        if let BenchSpec::Generate(bench) = &mut self.bench {
            bench.seed = self.seed;
        }
        self.fold_model_into_bench();
    }

    /// A generated suite is built with the same n-gram settings the run uses.
    fn fold_model_into_bench(&mut self) {
        if let (BenchSpec::Generate(bench), ModelSpec::Ngram(spec)) = (&mut self.bench, &self.model) {
            bench.model = spec.apply(bench.model);
            if let Some(r) = spec.repetitions {
                bench.repetitions = r;
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::BadConfig(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if self.strategies.is_empty() {
            return Err(CliError::BadConfig("strategies: at least one strategy is required".into()));
        }
        let mut stems: Vec<String> = self.strategies.iter().map(DecodeStrategy::file_stem).collect();
        stems.sort();
        if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::BadConfig(format!("strategies: {} is listed twice", w[0])));
        }
        if self.workers == 0 {
            return Err(CliError::BadConfig("workers: must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(CliError::BadConfig("top_k: must be at least 1".into()));
        }
        if let BenchSpec::Generate(bench) = &self.bench {
            bench.validate().map_err(|e| CliError::BadConfig(format!("bench: {e}")))?;
        }
        if let (ModelSpec::Ngram(NgramSpec { repetitions: Some(_), .. }), false) =
            (&self.model, matches!(self.bench, BenchSpec::Generate(_)))
        {
            return Err(CliError::BadConfig(
                "model.ngram.repetitions: only applies when the bench is generated".into(),
            ));
        }
        if let ModelSpec::Remote(remote) = &self.model {
            remote.endpoint()?;
            remote.timeout()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `workers` and
    /// `output_dir`, which do not affect results.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("workers");
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn minimal_config() {
        let c = parse(
            r#"{"schema_version":1,"bench":{"generate":{"n_instances":10}},
                "model":{"ngram":{}},"strategies":["greedy","adacad"]}"#,
        );
        c.validate().unwrap();
        assert_eq!(c.workers, 1);
        assert_eq!(c.top_k, 20);
        assert_eq!(c.strategies.len(), 2);
    }

    #[test]
    fn rejects_bad_values() {
        let base = r#"{"schema_version":1,"bench":{"suite":"s"},"model":{"ngram":{}},"strategies":["greedy"]}"#;
        let mut c = parse(base);
        c.schema_version = 2;
        assert!(matches!(c.validate(), Err(CliError::BadConfig(_))));
        let mut c = parse(base);
        c.strategies.clear();
        assert!(matches!(c.validate(), Err(CliError::BadConfig(_))));
        let mut c = parse(base);
        c.strategies.push(DecodeStrategy::greedy());
        assert!(matches!(c.validate(), Err(CliError::BadConfig(_))));
        let mut c = parse(base);
        c.model = ModelSpec::Remote(RemoteSpec {
            endpoint: "nowhere".into(),
            command: None,
            timeout_secs: 30.0,
        });
        assert!(matches!(c.validate(), Err(CliError::BadConfig(_))));
        assert!(serde_json::from_str::<RunConfig>(&base.replace("greedy", "beam")).is_err());
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let mut a = parse(r#"{"schema_version":1,"bench":{"suite":"s"},"model":{"ngram":{}},"strategies":["greedy"]}"#);
        let h = a.hash();
        a.workers = 4;
        a.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), h);
        a.seed = 9;
        assert_ne!(a.hash(), h);
        assert_eq!(h.len(), 64);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = parse(
            r#"{"schema_version":1,"bench":{"generate":{}},"model":{"ngram":{}},"strategies":["greedy"],"seed":3}"#,
        );
        c.apply(&Overrides {
            seed: Some(42),
            workers: Some(4),
            out: Some("o".into()),
            strategies: vec!["cad".parse().unwrap()],
        });
        assert_eq!(c.seed, 42);
        assert_eq!(c.workers, 4);
        assert_eq!(c.strategies[0].to_string(), "cad:alpha=1");
        match &c.bench {
            BenchSpec::Generate(b) => assert_eq!(b.seed, 42),
            _ => unreachable!(),
        }
    }

    #[test]
    fn ngram_settings_reach_the_generated_suite() {
        let mut c = parse(
            r#"{"schema_version":1,"bench":{"generate":{}},
                "model":{"ngram":{"order":2,"repetitions":7}},"strategies":["greedy"]}"#,
        );
        c.apply(&Overrides::default());
        c.validate().unwrap();
        match &c.bench {
            BenchSpec::Generate(b) => {
                assert_eq!(b.model.order, 2);
                assert_eq!(b.repetitions, 7);
            }
            _ => unreachable!(),
        }
        let mut c = parse(
            r#"{"schema_version":1,"bench":{"suite":"s"},
                "model":{"ngram":{"repetitions":7}},"strategies":["greedy"]}"#,
        );
        c.apply(&Overrides::default());
        assert!(matches!(c.validate(), Err(CliError::BadConfig(_))));
    }
}
