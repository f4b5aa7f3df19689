//! Command-line driver: run configuration, flat-file outputs and the
//! `fracforms` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod measure;
pub mod oracle;
pub mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub use commands::{CommandOutput, Context};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fracforms", version, about = "Energy forms, vector analysis and monotone solvers on fractals")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set pde.p=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Graph level `m`.
    #[arg(long, global = true)]
    pub level: Option<usize>,
    /// `sg` or `interval`.
    #[arg(long, global = true)]
    pub fractal: Option<String>,
    /// Output directory, relative to `$FRACFORMS_OUTPUT_ROOT` if set.
    #[arg(long, global = true)]
    pub output: Option<String>,
    /// Seed for stochastic commands; required by `spde`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the level graph as JSON.
    Build,
    /// Lowest eigenpairs of the measure-weighted Laplacian.
    Spectrum,
    /// Cell masses of the configured measure.
    Measure,
    /// Kusuoka matrices and their eigenvalue statistics over levels.
    Kusuoka,
    /// p-energy of a fixed function over levels.
    Penergy,
    /// Solve the quasilinear Dirichlet or zero-mean problem.
    Solve,
    /// Simulate the stochastic evolution.
    Spde,
    /// Run the invariant suite; exits 4 on any failure.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Spectrum => "spectrum",
            Command::Measure => "measure",
            Command::Kusuoka => "kusuoka",
            Command::Penergy => "penergy",
            Command::Solve => "solve",
            Command::Spde => "spde",
            Command::Verify => "verify",
        }
    }
}

/// Merges the config file, `--set` overrides and dedicated flags.
pub fn resolve_config(args: &GlobalArgs) -> CliResult<RunConfig> {
    let mut overrides = args
        .overrides
        .iter()
        .map(|s| config::parse_override(s))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(l) = args.level {
        overrides.push(("level".into(), Value::from(l)));
    }
    if let Some(f) = &args.fractal {
        overrides.push(("fractal".into(), Value::from(f.clone())));
    }
    if let Some(o) = &args.output {
        overrides.push(("output_dir".into(), Value::from(o.clone())));
    }
    if let Some(s) = args.seed {
        overrides.push(("seed".into(), Value::from(s)));
    }
    RunConfig::load(args.config.as_deref(), &overrides)
}

/// Runs one subcommand. Verify failures are reported after the report is
/// written.
pub fn run(cli: &Cli) -> CliResult<CommandOutput> {
    let cfg = resolve_config(&cli.global)?;
    if cli.command == Command::Spde && cli.global.seed.is_none() {
        return Err(CliError::Config("`spde` needs an explicit --seed".into()));
    }
    let ctx = Context::new(cfg)?;
    match cli.command {
        Command::Build => commands::cmd_build(&ctx),
        Command::Spectrum => commands::cmd_spectrum(&ctx),
        Command::Measure => commands::cmd_measure(&ctx),
        Command::Kusuoka => commands::cmd_kusuoka(&ctx),
        Command::Penergy => commands::cmd_penergy(&ctx),
        Command::Solve => commands::cmd_solve(&ctx),
        Command::Spde => commands::cmd_spde(&ctx, ctx.cfg.seed),
        Command::Verify => {
            let (mut out, report) = commands::cmd_verify(&ctx)?;
            let lines: Vec<String> = report
                .checks
                .iter()
                .map(|c| {
                    format!(
                        "{} {} {:e} (tol {:e})",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.value,
                        c.tolerance
                    )
                })
                .collect();
            out.summary = format!("{}\n{}", lines.join("\n"), out.summary);
            if !report.passed() {
                println!("{}", out.summary);
                return Err(CliError::Invariant(report.failures().join(", ")));
            }
            Ok(out)
        }
    }
}
