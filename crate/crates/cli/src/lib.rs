//! `dp`: one binary over the whole curation lifecycle.
//!
//! Subcommands map onto the dp-core modules: `run`/`resume`/`baseline`
//! drive the engine, `compile` and `review` the table compiler, `eval`
//! the evaluator, `report` the cost ledger, and `bootstrap` the task
//! generator. Human-readable output goes to stdout; machine artifacts
//! only ever to files.
//!
//! Exit codes are part of the interface and stay stable:
//! 0 success, 1 usage or config error, 2 run completed with failed
//! entities, 3 provider or auth error, 4 bootstrap exhausted.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use dp_core::bootstrap::BootstrapError;
use dp_core::compile::CompileError;
use dp_core::engine::checkpoint::CheckpointError;
use dp_core::engine::RunError;
use dp_core::eval::EvalError;
use dp_core::ledger::LedgerError;
use dp_core::provider::live::{LiveConfig, LiveProvider};
use dp_core::provider::replay::{RecordingProvider, ReplayProvider};
use dp_core::provider::{Provider, ProviderError};
use dp_core::task::TaskError;

pub mod commands;
pub mod review;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILED_ENTITIES: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_BOOTSTRAP_EXHAUSTED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Provider(_) => EXIT_PROVIDER,
            CliError::Bootstrap(BootstrapError::Provider(_)) => EXIT_PROVIDER,
            CliError::Bootstrap(BootstrapError::Exhausted { .. }) => {
                EXIT_BOOTSTRAP_EXHAUSTED
            }
            _ => EXIT_USAGE,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "dp",
    version,
    about = "Schema-driven online data curation: run tasks, compile and review \
             tables, evaluate against ground truth, and bootstrap new tasks."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    /// Call the real API (needs DP_API_KEY; DP_API_BASE_URL optional).
    Live,
    /// Serve recorded fixtures; never touches the network.
    Replay,
    /// Call the real API and record every reply as a fixture.
    Record,
}

#[derive(Debug, Args)]
pub struct ProviderFlags {
    /// Which provider backend to use.
    #[arg(long, value_enum, default_value = "live")]
    pub provider: ProviderKind,
    /// Fixture directory for the replay and record providers.
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
}

impl ProviderFlags {
    pub fn build(&self) -> Result<Arc<dyn Provider>, CliError> {
        let fixtures = |kind: &str| {
            self.fixtures.clone().ok_or_else(|| {
                CliError::Usage(format!("--provider {kind} requires --fixtures DIR"))
            })
        };
        Ok(match self.provider {
            ProviderKind::Replay => Arc::new(ReplayProvider::new(fixtures("replay")?)),
            ProviderKind::Live => {
                Arc::new(LiveProvider::new(LiveConfig::from_env()?))
            }
            ProviderKind::Record => {
                let live = Arc::new(LiveProvider::new(LiveConfig::from_env()?));
                Arc::new(RecordingProvider::new(live, fixtures("record")?))
            }
        })
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task descriptor YAML.
    #[arg(long, value_name = "FILE")]
    pub task: PathBuf,
    /// Entity CSV matching the task's key and placeholder columns.
    #[arg(long, value_name = "FILE")]
    pub entities: PathBuf,
    /// Run directory; fresh, or an interrupted run to finish.
    #[arg(long, value_name = "DIR")]
    pub run_dir: PathBuf,
    /// Disable search and answer from model knowledge only.
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    pub provider: ProviderFlags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Curate every entity and compile the table.
    Run(RunArgs),
    /// Finish an interrupted run using its stored config.
    Resume {
        /// Run directory holding manifest.json.
        #[arg(long, value_name = "DIR")]
        run_dir: PathBuf,
        #[command(flatten)]
        provider: ProviderFlags,
    },
    /// Rebuild curated.csv and curated.jsonl from a finished run.
    Compile {
        /// Run directory holding manifest.json and results/.
        #[arg(long, value_name = "DIR")]
        run_dir: PathBuf,
    },
    /// Score a curated table against ground truth under both regimes.
    Eval {
        /// Curated table CSV, as written by run or compile.
        #[arg(long, value_name = "FILE")]
        curated: PathBuf,
        /// Ground truth CSV: entity_id column plus one column per attribute.
        #[arg(long, value_name = "FILE")]
        truth: PathBuf,
        /// Task YAML for typed matching and baseline detection; a sibling
        /// run manifest fills in when omitted.
        #[arg(long, value_name = "FILE")]
        task: Option<PathBuf>,
        /// Alias CSV with header variant,canonical for string matching.
        #[arg(long, value_name = "FILE")]
        aliases: Option<PathBuf>,
        /// Two-sided miscoverage for the confidence intervals.
        #[arg(long, value_name = "F", default_value_t = 0.05)]
        alpha: f64,
    },
    /// Price a run's telemetry and compare against human labor.
    Report {
        /// Run directory holding telemetry.jsonl.
        #[arg(long, value_name = "DIR")]
        run_dir: PathBuf,
        /// Hourly wage for the human baseline, in dollars.
        #[arg(long, value_name = "DOLLARS", default_value = "20")]
        wage: String,
        /// Records one person labels per hour.
        #[arg(long, value_name = "N", default_value_t = 30)]
        records_per_hour: u32,
    },
    /// Walk unresolved cells and record human overrides.
    Review {
        /// Run directory with a compiled curated.csv.
        #[arg(long, value_name = "DIR")]
        run_dir: PathBuf,
        /// Read answers from this file instead of the terminal.
        #[arg(long, value_name = "FILE")]
        from_file: Option<PathBuf>,
    },
    /// Draft task files from a natural-language request.
    Bootstrap {
        /// What to curate, in plain language.
        #[arg(value_name = "REQUEST", required_unless_present = "request_file")]
        request: Option<String>,
        /// Read the request from a file instead.
        #[arg(long, value_name = "FILE", conflicts_with = "request")]
        request_file: Option<PathBuf>,
        /// Conventions document that guides drafting.
        #[arg(long, value_name = "FILE", default_value = "CONSTITUTION.md")]
        playbook: PathBuf,
        /// Existing entity CSV; omit to have the entity list discovered.
        #[arg(long, value_name = "FILE")]
        entities: Option<PathBuf>,
        /// Directory that receives tasks/<task_name>/.
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
        /// Model used for drafting.
        #[arg(long, value_name = "ID", default_value = "gpt-5")]
        model: String,
        #[command(flatten)]
        provider: ProviderFlags,
    },
    /// Shorthand for run --baseline.
    Baseline(RunArgs),
}

/// Run one parsed invocation. The returned code is the process exit
/// status for successful dispatch; errors carry their own codes.
pub fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(args) => commands::cmd_run(&args, args.baseline),
        Command::Baseline(args) => commands::cmd_run(&args, true),
        Command::Resume { run_dir, provider } => commands::cmd_resume(&run_dir, &provider),
        Command::Compile { run_dir } => commands::cmd_compile(&run_dir),
        Command::Eval { curated, truth, task, aliases, alpha } => {
            commands::cmd_eval(&curated, &truth, task.as_deref(), aliases.as_deref(), alpha)
        }
        Command::Report { run_dir, wage, records_per_hour } => {
            commands::cmd_report(&run_dir, &wage, records_per_hour)
        }
        Command::Review { run_dir, from_file } => {
            review::cmd_review(&run_dir, from_file.as_deref())
        }
        Command::Bootstrap {
            request,
            request_file,
            playbook,
            entities,
            out,
            model,
            provider,
        } => {
            let request = match (request, request_file) {
                (Some(text), None) => text,
                (None, Some(path)) => read_file(&path)?,
                _ => unreachable!("clap enforces exactly one request source"),
            };
            commands::cmd_bootstrap(
                &request,
                &playbook,
                entities.as_deref(),
                &out,
                &model,
                &provider,
            )
        }
    }
}

pub(crate) fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime builds")
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_flag_is_documented() {
        fn check(cmd: &clap::Command) {
            for arg in cmd.get_arguments() {
                assert!(
                    arg.get_help().is_some(),
                    "undocumented flag --{} on `{}`",
                    arg.get_id(),
                    cmd.get_name(),
                );
            }
            for sub in cmd.get_subcommands() {
                assert!(
                    sub.get_about().is_some(),
                    "undocumented subcommand `{}`",
                    sub.get_name(),
                );
                check(sub);
            }
        }
        check(&Cli::command());
    }

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(
            CliError::Provider(ProviderError::AuthFailure("no key".into())).exit_code(),
            3
        );
        assert_eq!(
            CliError::Bootstrap(BootstrapError::Exhausted { validation_log: vec![] })
                .exit_code(),
            4
        );
        assert_eq!(
            CliError::Bootstrap(BootstrapError::Provider(ProviderError::AuthFailure(
                "no key".into()
            )))
            .exit_code(),
            3
        );
        assert_eq!(
            CliError::Bootstrap(BootstrapError::EmptyEntityDiscovery).exit_code(),
            1
        );
    }

    #[test]
    fn replay_without_fixtures_is_a_usage_error() {
        let flags = ProviderFlags { provider: ProviderKind::Replay, fixtures: None };
        let err = match flags.build() {
            Err(err) => err,
            Ok(_) => panic!("provider built without a fixtures dir"),
        };
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("--fixtures"));
    }
}
