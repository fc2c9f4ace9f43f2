use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use zakai_lab::config::ExperimentConfig;
use zakai_lab::error::Result;
use zakai_lab::gradient::Target;
use zakai_lab::runner::{exit_code, load_config, results_root, run, Command, Oracle, RunOptions, VerifyKind};

/// Numerical experiments on the unnormalised filter and its perturbation series.
#[derive(Parser)]
#[command(name = "zakai", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON configuration, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled model preset: linear-gaussian, cubic-sensor or bm-1d.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate signal and observation paths.
    Simulate,
    /// Estimate the filter at the starting point.
    Filter {
        #[arg(long, value_enum)]
        oracle: Option<OracleArg>,
    },
    /// Truncated perturbation series level by level.
    Expand {
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Pathwise terms of levels 1 to 3.
    Robust {
        #[arg(long)]
        level: Option<usize>,
    },
    /// Iterated integrals of a Brownian observation path.
    Signature {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Small-time gradient exponents.
    Gradient {
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
    },
    /// Identity and inequality checks.
    Verify {
        #[arg(value_enum)]
        check: CheckArg,
        /// Word length or extension level.
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Kalman,
    Particle,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Heat,
    Rho,
    Pi,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckArg {
    Chen,
    Neoclassical,
    Remainder,
    Duality,
    Massbound,
    Extension,
}

fn resolve(cli: &Cli) -> Result<(Command, ExperimentConfig)> {
    let mut config = load_config(cli.common.config.as_deref(), cli.common.preset.as_deref())?;
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Filter { oracle } => Command::Filter {
            oracle: oracle.map(|o| match o {
                OracleArg::Kalman => Oracle::Kalman,
                OracleArg::Particle => Oracle::Particle,
            }),
        },
        Cmd::Expand { levels } => {
            if let Some(l) = levels {
                config.knobs.levels = l;
            }
            Command::Expand
        }
        Cmd::Robust { level } => {
            if let Some(l) = level {
                config.knobs.levels = l;
            }
            Command::Robust
        }
        Cmd::Signature { k } => {
            if let Some(k) = k {
                config.knobs.depth = k;
            }
            Command::Signature
        }
        Cmd::Gradient { target } => {
            if let Some(t) = target {
                config.knobs.target = match t {
                    TargetArg::Heat => Target::Heat,
                    TargetArg::Rho => Target::Rho,
                    TargetArg::Pi => Target::Pi,
                };
            }
            Command::Gradient
        }
        Cmd::Verify { check, k } => {
            if let Some(k) = k {
                config.knobs.depth = k;
            }
            let kind = match check {
                CheckArg::Chen => VerifyKind::Chen,
                CheckArg::Neoclassical => VerifyKind::Neoclassical,
                CheckArg::Remainder => VerifyKind::Remainder,
                CheckArg::Duality => VerifyKind::Duality,
                CheckArg::Massbound => VerifyKind::Massbound,
                CheckArg::Extension => VerifyKind::Extension,
            };
            Command::Verify { kind }
        }
    };
    Ok((command, config))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let options = RunOptions { results_root: results_root(), threads: cli.common.threads };
    let result = resolve(&cli).and_then(|(command, config)| run(&command, &config, &options));
    match &result {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
            eprintln!("results: {}", outcome.dir.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
