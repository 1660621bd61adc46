//! The `gen`, `train`, `run` and `report` subcommands.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use conflict_decode_core::bench::{build_suite, load_instances, ConflictInstance, Suite, CONFIG_FILE, CORPUS_FILE, INSTANCES_FILE, VOCAB_FILE};
use conflict_decode_core::eval::{aggregate_records, to_csv, InstanceRecord, ResultLine, RunSummary};
use conflict_decode_core::source::ngram::NgramModel;
use conflict_decode_core::source::remote::{Endpoint, RemoteLogitClient};
use conflict_decode_core::source::{LmSource, ScriptedSource, SourceError};
use conflict_decode_core::strategy::{decode_sequence, DecodeStrategy, StrategyError};
use log::{info, warn};

use crate::config::{BenchSpec, ModelSpec, RunConfig};
use crate::manifest::Manifest;
use crate::CliError;

pub const SUITE_DIR: &str = "suite";
pub const RESULTS_DIR: &str = "results";
pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.csv";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn suite_artifacts() -> Vec<String> {
    [VOCAB_FILE, CORPUS_FILE, INSTANCES_FILE, CONFIG_FILE]
        .iter()
        .map(|f| format!("{SUITE_DIR}/{f}"))
        .collect()
}

/// Resolves the benchmark, generating it under `output_dir/suite` if needed.
fn resolve_suite(config: &RunConfig, manifest: &mut Manifest) -> Result<Option<Suite>, CliError> {
    match &config.bench {
        BenchSpec::Generate(bench) => {
            let dir = config.output_dir.join(SUITE_DIR);
            let suite = build_suite(bench, &dir)?;
            manifest.artifacts.suite = suite_artifacts();
            info!("suite with {} instances written to {}", suite.instances.len(), dir.display());
            Ok(Some(suite))
        }
        BenchSpec::Suite(dir) => Ok(Some(Suite::load(dir)?)),
        BenchSpec::Instances(_) => Ok(None),
    }
}

fn require_suite(suite: Option<Suite>, what: &str) -> Result<Suite, CliError> {
    suite.ok_or_else(|| CliError::BadConfig(format!("{what} needs a generated or saved suite, not a bare instances file")))
}

pub fn cmd_gen(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    if !matches!(config.bench, BenchSpec::Generate(_)) {
        return Err(CliError::BadConfig("bench: gen needs a `generate` section".into()));
    }
    let mut manifest = Manifest::open(&config.output_dir, config);
    resolve_suite(config, &mut manifest)?;
    manifest.write(&config.output_dir)
}

pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let ModelSpec::Ngram(spec) = &config.model else {
        return Err(CliError::BadConfig("model: train needs an `ngram` model".into()));
    };
    let mut manifest = Manifest::open(&config.output_dir, config);
    let suite = require_suite(resolve_suite(config, &mut manifest)?, "train")?;
    let model = suite
        .train_model(spec.apply(suite.config.model))
        .map_err(|e| CliError::BadConfig(format!("model.ngram: {e}")))?;
    let path = config.output_dir.join(MODEL_FILE);
    model.save(&path).map_err(|e| io_err(&path, e))?;
    manifest.artifacts.model = Some(MODEL_FILE.to_string());
    manifest.write(&config.output_dir)
}

/// Where each worker gets its distributions from.
enum Provider {
    Shared(Box<dyn LmSource>),
    PerInstance(HashMap<String, ScriptedSource>),
    Remote { endpoint: Endpoint, timeout: Duration },
}

enum WorkerSource<'a> {
    Borrowed(&'a dyn LmSource),
    PerInstance(&'a HashMap<String, ScriptedSource>),
    Owned(RemoteLogitClient),
}

impl WorkerSource<'_> {
    fn for_instance(&self, id: &str) -> Result<&dyn LmSource, SourceError> {
        match self {
            WorkerSource::Borrowed(s) => Ok(*s),
            WorkerSource::Owned(c) => Ok(c),
            WorkerSource::PerInstance(map) => map
                .get(id)
                .map(|s| s as &dyn LmSource)
                .ok_or_else(|| SourceError::InvalidScenario(format!("no scenario for instance {id}"))),
        }
    }
}

impl Provider {
    fn worker(&self, index: usize) -> Result<WorkerSource<'_>, SourceError> {
        match self {
            Provider::Shared(s) => Ok(WorkerSource::Borrowed(s.as_ref())),
            Provider::PerInstance(map) => Ok(WorkerSource::PerInstance(map)),
            Provider::Remote { endpoint, timeout } => Ok(WorkerSource::Owned(RemoteLogitClient::connect(
                endpoint,
                &format!("worker-{index}"),
                *timeout,
            )?)),
        }
    }
}

fn build_provider(
    config: &RunConfig,
    suite: Option<&Suite>,
    instances: &[ConflictInstance],
    manifest: &mut Manifest,
) -> Result<(Provider, usize), CliError> {
    match &config.model {
        ModelSpec::Ngram(spec) => {
            let suite = suite.ok_or_else(|| {
                CliError::BadConfig("model.ngram needs a suite with a training corpus".into())
            })?;
            let model = suite
                .train_model(spec.apply(suite.config.model))
                .map_err(|e| CliError::BadConfig(format!("model.ngram: {e}")))?;
            let v = model.vocab_size();
            Ok((Provider::Shared(Box::new(model)), v))
        }
        ModelSpec::NgramFile(path) => {
            let model = NgramModel::load(path).map_err(|e| match e {
                SourceError::Io(io) => io_err(path, io),
                other => CliError::BadConfig(format!("{}: {other}", path.display())),
            })?;
            let v = model.vocab_size();
            Ok((Provider::Shared(Box::new(model)), v))
        }
        ModelSpec::Scripted(path) => {
            let load = |p: &Path| {
                ScriptedSource::load(p).map_err(|e| match e {
                    SourceError::Io(io) => io_err(p, io),
                    other => CliError::BadConfig(other.to_string()),
                })
            };
            if path.is_dir() {
                let mut map = HashMap::new();
                let mut v = None;
                for inst in instances {
                    let source = load(&path.join(format!("{}.json", inst.id)))?;
                    let n = source.vocab_size();
                    if *v.get_or_insert(n) != n {
                        return Err(CliError::BadConfig(format!(
                            "scenario for {} has {n} tokens, others have {}",
                            inst.id,
                            v.unwrap_or(0)
                        )));
                    }
                    map.insert(inst.id.clone(), source);
                }
                Ok((Provider::PerInstance(map), v.unwrap_or(0)))
            } else {
                let source = load(path)?;
                let v = source.vocab_size();
                Ok((Provider::Shared(Box::new(source)), v))
            }
        }
        ModelSpec::Remote(remote) => {
            let endpoint = remote.endpoint()?;
            let timeout = remote.timeout()?;
            // one probe connection so an unreachable model fails before any output
            let probe = RemoteLogitClient::connect(&endpoint, "probe", timeout).map_err(|e| {
                let msg = format!("model.remote {}: {e}", remote.endpoint);
                manifest.fail(&msg);
                CliError::Source(msg)
            })?;
            let v = probe.vocab_size();
            Ok((Provider::Remote { endpoint, timeout }, v))
        }
    }
}

struct StrategyOutcome {
    records: Vec<InstanceRecord>,
    failure: Option<(usize, CliError)>,
}

fn decode_error(id: &str, e: StrategyError) -> CliError {
    match e {
        StrategyError::Source(_) | StrategyError::Dist(_) => CliError::Source(format!("instance {id}: {e}")),
        other => CliError::BadConfig(format!("instance {id}: {other}")),
    }
}

fn run_strategy(
    strategy: &DecodeStrategy,
    instances: &[ConflictInstance],
    provider: &Provider,
    workers: usize,
    top_k: usize,
) -> StrategyOutcome {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = workers.min(instances.len()).max(1);
    let batches: Vec<Vec<(usize, Result<InstanceRecord, CliError>)>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (next, stop) = (&next, &stop);
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let handle = match provider.worker(w) {
                        Ok(h) => h,
                        Err(e) => {
                            stop.store(true, Ordering::SeqCst);
                            out.push((usize::MAX, Err(CliError::Source(e.to_string()))));
                            return out;
                        }
                    };
                    while !stop.load(Ordering::SeqCst) {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(inst) = instances.get(i) else { break };
                        let result = handle
                            .for_instance(&inst.id)
                            .map_err(StrategyError::from)
                            .and_then(|src| decode_sequence(strategy, src, inst))
                            .map_err(|e| decode_error(&inst.id, e))
                            .and_then(|decoded| {
                                InstanceRecord::from_decoded(inst, &decoded, top_k)
                                    .map_err(|e| CliError::Source(format!("instance {}: {e}", inst.id)))
                            });
                        if result.is_err() {
                            stop.store(true, Ordering::SeqCst);
                        }
                        out.push((i, result));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut records = Vec::new();
    let mut failure: Option<(usize, CliError)> = None;
    for (i, result) in batches.into_iter().flatten() {
        match result {
            Ok(r) => records.push(r),
            Err(e) => {
                if failure.as_ref().is_none_or(|(j, _)| i < *j) {
                    failure = Some((i, e));
                }
            }
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    StrategyOutcome { records, failure }
}

fn write_results(path: &Path, records: &[InstanceRecord], tail: &ResultLine) -> Result<(), CliError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&ResultLine::Instance(r.clone())).expect("record serializes"));
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(tail).expect("summary serializes"));
    out.push('\n');
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn cmd_run(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let out_dir = &config.output_dir;
    let mut manifest = Manifest::open(out_dir, config);
    manifest.artifacts.results.clear();

    let suite = resolve_suite(config, &mut manifest)?;
    let instances = match (&config.bench, &suite) {
        (_, Some(s)) => s.instances.clone(),
        (BenchSpec::Instances(path), None) => load_instances(path, u32::MAX as usize)?,
        _ => unreachable!("suite resolved for every other bench kind"),
    };
    if instances.is_empty() {
        return Err(CliError::BadConfig("bench: no instances to decode".into()));
    }

    let (provider, vocab_size) = match build_provider(config, suite.as_ref(), &instances, &mut manifest) {
        Ok(p) => p,
        Err(e) => {
            if matches!(e, CliError::Source(_)) {
                manifest.write(out_dir)?;
            }
            return Err(e);
        }
    };
    for inst in &instances {
        let ids = inst.context.iter().chain(&inst.query).chain([&inst.gold, &inst.parametric]);
        if let Some(bad) = ids.copied().find(|&t| t as usize >= vocab_size) {
            return Err(CliError::BadConfig(format!(
                "instance {} uses token {bad} outside the model's {vocab_size}-token vocabulary",
                inst.id
            )));
        }
    }

    let results_dir = out_dir.join(RESULTS_DIR);
    fs::create_dir_all(&results_dir).map_err(|e| io_err(&results_dir, e))?;
    for strategy in &config.strategies {
        let name = strategy.to_string();
        let file = format!("{RESULTS_DIR}/{}.jsonl", strategy.file_stem());
        let path = out_dir.join(&file);
        info!("decoding {} instances with {name}", instances.len());
        let outcome = run_strategy(strategy, &instances, &provider, config.workers, config.top_k);

        if let Some((_, err)) = outcome.failure {
            let tail = ResultLine::Truncated {
                strategy: name.clone(),
                completed: outcome.records.len(),
                reason: err.to_string(),
            };
            write_results(&path, &outcome.records, &tail)?;
            manifest.artifacts.results.push(file);
            manifest.fail(&format!("{name}: {err}"));
            manifest.write(out_dir)?;
            return Err(err);
        }
        let summary = aggregate_records(&name, &outcome.records)
            .map_err(|e| CliError::BadConfig(format!("{name}: {e}")))?;
        write_results(&path, &outcome.records, &ResultLine::Summary(summary))?;
        manifest.artifacts.results.push(file);
    }
    manifest.write(out_dir)
}

/// A parsed results file.
#[derive(Debug, Clone)]
pub struct ResultsFile {
    pub strategy: String,
    pub records: Vec<InstanceRecord>,
    pub truncated: bool,
}

pub fn read_results(path: &Path) -> Result<ResultsFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let malformed = |line: usize, msg: &str| CliError::MalformedResults(format!("{}:{line}: {msg}", path.display()));
    let mut records = Vec::new();
    let mut tail: Option<(usize, String, bool)> = None;
    let mut last_line = 0;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        last_line = n;
        if let Some((at, _, _)) = &tail {
            return Err(malformed(n, &format!("content after the closing line {at}")));
        }
        match serde_json::from_str::<ResultLine>(line) {
            Ok(ResultLine::Instance(r)) => records.push(r),
            Ok(ResultLine::Summary(s)) => tail = Some((n, s.strategy, false)),
            Ok(ResultLine::Truncated { strategy, .. }) => tail = Some((n, strategy, true)),
            Err(e) => return Err(malformed(n, &e.to_string())),
        }
    }
    if last_line == 0 {
        return Err(malformed(1, "empty results file"));
    }
    let (_, strategy, truncated) = tail.ok_or_else(|| malformed(last_line, "missing trailing summary line"))?;
    Ok(ResultsFile {
        strategy,
        records,
        truncated,
    })
}

/// Aligned text table of `summaries`, sorted by strategy name.
pub fn render_table(summaries: &[RunSummary]) -> String {
    let mut sorted: Vec<&RunSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.strategy.cmp(&b.strategy));
    let width = sorted.iter().map(|s| s.strategy.len()).max().unwrap_or(8).max(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<11}  {:>5}  {:>8}  {:>9}  {:>8}",
        "strategy", "split", "n", "accuracy", "alpha_max", "rho"
    );
    for s in sorted {
        let rows = s.labels.iter().map(|(l, st)| (l.as_str(), st)).chain([("ALL", &s.overall)]);
        for (label, st) in rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:<11}  {:>5}  {:>8.4}  {:>9.4}  {:>8.4}",
                s.strategy, label, st.n, st.accuracy, st.mean_alpha_max, st.mean_rho
            );
        }
        let sens = s.sensitivity.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:<width$}  {:<11}  {:>5}  {:>8}  {:>9}  {:>8}",
            s.strategy, "sensitivity", "", "", "", sens
        );
    }
    out
}

/// Summarizes results files into a table (returned) and `out_dir/report.csv`.
pub fn cmd_report(paths: &[PathBuf], out_dir: &Path) -> Result<String, CliError> {
    if paths.is_empty() {
        return Err(CliError::BadConfig("report needs at least one results file".into()));
    }
    let mut summaries = Vec::new();
    for path in paths {
        let file = read_results(path)?;
        if file.truncated {
            warn!("{} is truncated; reporting {} completed records", path.display(), file.records.len());
        }
        if file.records.is_empty() {
            return Err(CliError::MalformedResults(format!("{}: no instance records", path.display())));
        }
        let summary = aggregate_records(&file.strategy, &file.records)
            .map_err(|e| CliError::MalformedResults(format!("{}: {e}", path.display())))?;
        summaries.push(summary);
    }
    let mut names: Vec<&str> = summaries.iter().map(|s| s.strategy.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::BadConfig(format!("strategy {} appears in more than one results file", w[0])));
    }

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let csv_path = out_dir.join(REPORT_FILE);
    fs::write(&csv_path, to_csv(&summaries)).map_err(|e| io_err(&csv_path, e))?;
    if let Some(mut manifest) = Manifest::read(out_dir) {
        manifest.artifacts.report = Some(REPORT_FILE.to_string());
        manifest.write(out_dir)?;
    }
    Ok(render_table(&summaries))
}

/// Results files listed by the manifest in `dir`.
pub fn manifest_results(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let manifest = Manifest::read(dir)
        .ok_or_else(|| CliError::BadConfig(format!("no readable manifest in {}", dir.display())))?;
    Ok(manifest.artifacts.results.iter().map(|f| dir.join(f)).collect())
}
