//! lamcloak: design, laminate, verify and sweep layered near-cloaks.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{EpsChoice, FloatList, UsageError};

#[derive(Parser, Debug)]
#[command(name = "lamcloak", version, about = "Layered near-cloak design and verification")]
pub struct Cli {
    /// Flat TOML file with default values for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides $LAMCLOAK_OUT and the config file)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// More log output on stderr (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Find layer conductivities whose leading polarization tensors vanish
    Design(DesignArgs),
    /// Build the cloak field and its three-material laminate
    Laminate(LaminateArgs),
    /// Per-mode DtN report for a laminate, a cloak or its virtual medium
    Verify(VerifyArgs),
    /// Convergence sweep in rho or in epsilon with a log-log slope fit
    Sweep(SweepArgs),
    /// Shielded laminate with an arbitrary core, checked over several cores
    Shield(ShieldArgs),
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[arg(long)]
    pub dim: Option<u32>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Number of tensors to cancel (defaults to the layer count)
    #[arg(long)]
    pub order: Option<usize>,
    /// Hole radius used to report the feasible alpha interval
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Where the coating comes from.
#[derive(Args, Debug, Default)]
pub struct SourceArgs {
    #[arg(long)]
    pub dim: Option<u32>,
    /// Coating order; without --profile a profile with this many layers is designed
    #[arg(long)]
    pub order: Option<usize>,
    /// Profile JSON written by `design`
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// No coating (insulating unit ball)
    #[arg(long)]
    pub uncoated: bool,
    /// Seed for optimizer restarts when designing on the fly
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Material selection shared by the commands that build laminates.
#[derive(Args, Debug, Default)]
pub struct MaterialArgs {
    /// Lamination scale: number, a/b, or auto
    #[arg(long)]
    pub eps: Option<EpsChoice>,
    /// Low conductivity (auto when absent)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma separated high conductivities (auto when absent)
    #[arg(long)]
    pub gamma: Option<FloatList>,
    /// Multiplier on the recommended epsilon
    #[arg(long)]
    pub safety: Option<f64>,
    /// Split cells at the field's piece boundaries
    #[arg(long)]
    pub split: bool,
    #[arg(long)]
    pub max_materials: Option<usize>,
    /// Stacking order of the three materials in a cell, e.g. 2,0,1
    #[arg(long, value_parser = config::parse_shell_order)]
    pub shell_order: Option<[usize; 3]>,
}

#[derive(Args, Debug)]
pub struct LaminateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub materials: MaterialArgs,
    /// Target hole radius
    #[arg(long)]
    pub rho: Option<f64>,
    /// Enlarge the hole so the coating reaches the rho level
    #[arg(long)]
    pub enhanced: bool,
    /// Samples in the eigenvalue curve CSV
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Cloak,
    Virtual,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Laminate JSON written by `laminate` or `shield`
    #[arg(long)]
    pub laminate: Option<PathBuf>,
    /// Also compare against the anisotropic cloak built from the source flags
    #[arg(long)]
    pub reference: bool,
    /// What to verify when no laminate is given
    #[arg(long, value_enum, default_value_t = Target::Cloak)]
    pub target: Target,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub enhanced: bool,
    /// Core conductivity under a shield
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub k_max: Option<u32>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Rho,
    Eps,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Medium {
    Virtual,
    Laminate,
    Shielded,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub kind: SweepKind,
    #[arg(long, value_enum, default_value_t = Medium::Virtual)]
    pub medium: Medium,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub materials: MaterialArgs,
    #[arg(long)]
    pub rho_min: Option<f64>,
    #[arg(long)]
    pub rho_max: Option<f64>,
    /// Number of radii
    #[arg(long)]
    pub points: Option<usize>,
    /// Fixed radius of an epsilon sweep
    #[arg(long)]
    pub rho: Option<f64>,
    /// Epsilon sweep runs over 2^-min .. 2^-max
    #[arg(long)]
    pub eps_min_exp: Option<i32>,
    #[arg(long)]
    pub eps_max_exp: Option<i32>,
    #[arg(long)]
    pub enhanced: bool,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub k_max: Option<u32>,
}

#[derive(Args, Debug)]
pub struct ShieldArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub materials: MaterialArgs,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Comma separated core conductivities
    #[arg(long)]
    pub betas: Option<FloatList>,
    #[arg(long)]
    pub k_max: Option<u32>,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("LAMCLOAK_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
