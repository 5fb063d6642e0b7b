//! Command-line front end.
//!
//! Exit codes: 0 when the run passes (bounded, certified or conclusive
//! witness; every assertion of an example battery holds), 2 when the result is
//! inconclusive or an assertion fails, 1 on errors.

mod commands;
pub mod specfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::builtins::{self, Problem};
use crate::density::DensityFamilyPlan;
use crate::error::{OplimError, Result};
use crate::measure::{default_workers, MonteCarlo, ProductMeasure, DEFAULT_SAMPLES, DEFAULT_SEED, WORKERS_ENV};
use crate::report::{ConfigEcho, Format, Report};
use crate::symbol::SymbolSpec;

pub use commands::{analyze, build_densities, convergence, norm, verify_example, EXAMPLE_IDS};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_INCONCLUSIVE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "oplim", version, about = "Composition operators on infinite product measures via finite truncations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Symbol-spec JSON file (schema oplim-symbol/1).
    #[arg(long, global = true, conflicts_with = "builtin")]
    pub spec: Option<PathBuf>,
    /// Registered example symbol.
    #[arg(long, global = true)]
    pub builtin: Option<String>,
    /// Largest truncation index examined; each command has its own default.
    #[arg(long, global = true)]
    pub n_max: Option<usize>,
    #[arg(long, global = true, default_value_t = DEFAULT_SAMPLES)]
    pub samples: u64,
    /// Accepts decimal or 0x-prefixed hex.
    #[arg(long, global = true, default_value = "0xC0FFEE", value_parser = parse_seed)]
    pub seed: u64,
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Criterion {
    /// Boundedness (contraction and determinant conditions, or sup bounds).
    #[default]
    Bounded,
    /// Dense definiteness via second moments.
    Dense,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evidence table and certificate for a symbol.
    Analyze {
        #[arg(long, value_enum, default_value_t = Criterion::Bounded)]
        criterion: Criterion,
    },
    /// Runs the full check battery of a named example.
    VerifyExample {
        /// One of: reciprocal, cyclic, identity, example-5.2, diagonal, exp-inv-square, triangular, hump, appendix-build.
        id: String,
    },
    /// Strong-operator convergence table on cylinder indicators.
    Convergence {
        /// Number of leading coordinates the test cylinders depend on.
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Builds the step/hump density family and validates every condition.
    BuildDensities {
        /// Build plain step densities without humps.
        #[arg(long)]
        no_humps: bool,
        /// Also write the plan as a symbol-spec file.
        #[arg(long)]
        emit_spec: Option<PathBuf>,
    },
    /// Spectral norm brackets and determinants of the truncations.
    Norm,
}

fn parse_seed(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    }
    .map_err(|e| format!("invalid seed `{s}`: {e}"))
}

/// Settings shared by all commands after defaults are resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: &'static str,
    pub n_max: Option<usize>,
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
    pub timestamp: bool,
}

impl RunConfig {
    pub fn new(command: &'static str) -> Self {
        RunConfig {
            command,
            n_max: None,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            workers: default_workers(),
            timestamp: false,
        }
    }

    pub fn mc(&self) -> MonteCarlo {
        MonteCarlo::new(self.samples, self.seed).with_workers(self.workers)
    }

    pub fn echo(&self, target: &str, n_max: usize) -> ConfigEcho {
        ConfigEcho {
            command: self.command.to_string(),
            target: target.to_string(),
            n_max,
            samples: self.samples,
            seed: self.seed,
            workers: self.workers,
        }
    }
}

/// The symbol under analysis with its reference measure.
#[derive(Debug, Clone)]
pub struct Target {
    pub id: String,
    pub description: String,
    pub symbol: SymbolSpec,
    pub measure: ProductMeasure,
    pub plan: Option<DensityFamilyPlan>,
}

impl From<Problem> for Target {
    fn from(p: Problem) -> Self {
        Target { id: p.id.to_string(), description: p.description.to_string(), symbol: p.symbol, measure: p.measure, plan: p.plan }
    }
}

impl Target {
    pub fn builtin(id: &str) -> Result<Self> {
        builtins::lookup(id).map(Target::from)
    }

    pub fn resolve(common: &Common) -> Result<Self> {
        match (&common.spec, &common.builtin) {
            (Some(path), _) => {
                let l = specfile::load_path(path)?;
                Ok(Target { id: path.display().to_string(), description: l.description, symbol: l.symbol, measure: l.measure, plan: None })
            }
            (None, Some(id)) => Target::builtin(id),
            (None, None) => Err(OplimError::invalid("one of --spec or --builtin is required")),
        }
    }
}

/// A finished report with its exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub exit: u8,
}

impl Outcome {
    pub fn new(report: Report) -> Self {
        let exit = if report.pass { EXIT_PASS } else { EXIT_INCONCLUSIVE };
        Outcome { report, exit }
    }
}

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    let c = &cli.common;
    let name = match cli.command {
        Command::Analyze { .. } => "analyze",
        Command::VerifyExample { .. } => "verify-example",
        Command::Convergence { .. } => "convergence",
        Command::BuildDensities { .. } => "build-densities",
        Command::Norm => "norm",
    };
    let cfg = RunConfig {
        command: name,
        n_max: c.n_max,
        samples: c.samples,
        seed: c.seed,
        workers: c.workers.filter(|&w| w > 0).unwrap_or_else(default_workers),
        timestamp: !c.no_timestamp,
    };
    if cfg.n_max == Some(0) {
        return Err(OplimError::invalid("--n-max must be >= 1"));
    }
    match &cli.command {
        Command::Analyze { criterion } => analyze(&Target::resolve(c)?, *criterion, &cfg),
        Command::VerifyExample { id } => verify_example(id, &cfg),
        Command::Convergence { k } => convergence(&Target::resolve(c)?, *k, &cfg),
        Command::BuildDensities { no_humps, emit_spec } => {
            let hump = match c.builtin.as_deref() {
                None | Some("hump") => !no_humps,
                Some("triangular") => false,
                Some(other) => {
                    return Err(OplimError::invalid(format!("build-densities takes --builtin hump or triangular, got {other}")))
                }
            };
            build_densities(hump, emit_spec.as_deref(), &cfg)
        }
        Command::Norm => norm(&Target::resolve(c)?, &cfg),
    }
}

/// Parses arguments, runs, writes the report and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS });
        }
    };
    let result = dispatch(&cli).and_then(|o| {
        o.report.write(cli.common.format, cli.common.out.as_deref())?;
        Ok(o.exit)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
