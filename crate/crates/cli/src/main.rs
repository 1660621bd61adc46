use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conflict_decode_cli::commands::manifest_results;
use conflict_decode_cli::{cmd_gen, cmd_report, cmd_run, cmd_train, CliError, Overrides, RunConfig};
use conflict_decode_core::strategy::DecodeStrategy;

#[derive(Parser)]
#[command(name = "conflict-decode", version, about = "Knowledge-conflict decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Strategy descriptor such as `adacad:lambda=0.3`; repeatable.
    #[arg(long = "strategy")]
    strategies: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark suite.
    Gen(Common),
    /// Train the n-gram model on the suite corpus.
    Train(Common),
    /// Decode every instance with every strategy.
    Run(Common),
    /// Summarize results files into a table and report.csv.
    Report {
        #[command(flatten)]
        common: Common,
        /// Results files; defaults to those listed in the output manifest.
        results: Vec<PathBuf>,
    },
}

impl Common {
    fn overrides(&self) -> Result<Overrides, CliError> {
        let strategies = self
            .strategies
            .iter()
            .map(|s| s.parse::<DecodeStrategy>().map_err(|e| CliError::BadConfig(format!("--strategy {s}: {e}"))))
            .collect::<Result<_, _>>()?;
        Ok(Overrides {
            seed: self.seed,
            workers: self.workers,
            out: self.out.clone(),
            strategies,
        })
    }

    fn load(&self) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::BadConfig("--config is required".into()))?;
        let mut config = RunConfig::load(path)?;
        config.apply(&self.overrides()?);
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(c) => cmd_gen(&c.load()?),
        Command::Train(c) => cmd_train(&c.load()?),
        Command::Run(c) => cmd_run(&c.load()?),
        Command::Report { common, results } => {
            let out = match (&common.out, &common.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => common.load()?.output_dir,
                (None, None) => PathBuf::from("."),
            };
            let results = if results.is_empty() { manifest_results(&out)? } else { results };
            let table = cmd_report(&results, &out)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONFLICT_DECODE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
