use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdlab_cli::commands::{self, RunOptions};
use fdlab_cli::config::{default_toml, ExperimentConfig};
use fdlab_cli::{CliError, ExitStatus};
use fdlab_core::harness::VerificationConfig;
use fdlab_core::report::{summary_table, ResultId};

#[derive(Parser)]
#[command(
    name = "fdlab",
    version,
    about = "Fine-tuning vs linear probing flow experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Worker threads (default: one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding `master_seed` in the config.
    #[arg(long, env = "FDLAB_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method on a battery of instances.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Repeat `run` over the values in the config's [sweep] block.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run verification suites and print their verdicts.
    Verify {
        /// Suite id, comma-separated ids, or `all`.
        #[arg(long, value_delimiter = ',', required = true)]
        suite: Vec<String>,
        /// Take suite settings and integrator from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the default config with comments.
    PrintDefaults,
}

fn parse_suites(names: &[String]) -> Result<Vec<ResultId>, CliError> {
    if names.iter().any(|s| s.eq_ignore_ascii_case("all")) {
        return Ok(ResultId::ALL.to_vec());
    }
    names
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|e: fdlab_core::Error| CliError::Config(e.to_string()))
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<ExitStatus, CliError> {
    match cli.command {
        Command::Run { config, common } => {
            let cfg = ExperimentConfig::load(&config, common.seed)?;
            commands::run(
                &cfg,
                &RunOptions {
                    jobs: common.jobs,
                    out: common.out,
                },
            )
        }
        Command::Sweep { config, common } => {
            let cfg = ExperimentConfig::load(&config, common.seed)?;
            commands::sweep(
                &cfg,
                &RunOptions {
                    jobs: common.jobs,
                    out: common.out,
                },
            )
        }
        Command::Verify {
            suite,
            config,
            common,
        } => {
            let ids = parse_suites(&suite)?;
            let (vcfg, integrator) = match config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(&path, common.seed)?;
                    (cfg.verify, cfg.integrator)
                }
                None => {
                    let vcfg = VerificationConfig {
                        seed: common.seed.unwrap_or(0),
                        ..VerificationConfig::default()
                    };
                    vcfg.validate()
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    (vcfg, Default::default())
                }
            };
            let (status, reports) =
                commands::verify(&ids, &vcfg, &integrator, common.out.as_deref(), common.jobs)?;
            print!("{}", summary_table(&reports));
            Ok(status)
        }
        Command::PrintDefaults => {
            print!("{}", default_toml());
            Ok(ExitStatus::Success)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("fdlab: {e}");
            ExitCode::from(e.exit_status().code())
        }
    }
}
