//! Command-line front end: analytic oracle tables, event simulation,
//! coincidence analysis and delay scans.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data-format error,
//! 3 insufficient statistics.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

pub use commands::{cmd_analyze, cmd_dip, cmd_oracle, cmd_simulate};
pub use config::RunConfigFile;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] hom_core::Error),

    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: hom_core::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use hom_core::Error as E;
        let core = match self {
            CliError::Config(_) | CliError::Output { .. } => return 1,
            CliError::Core(e) | CliError::Input { source: e, .. } => e,
        };
        match core {
            E::Format { .. } | E::Unsorted { .. } | E::Json(_) => 2,
            E::InsufficientStatistics(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn input(path: &Path) -> impl FnOnce(hom_core::Error) -> CliError + '_ {
        move |source| CliError::Input {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn output(path: &Path) -> impl FnOnce(hom_core::Error) -> CliError + '_ {
        move |e| match e {
            hom_core::Error::Io(source) => CliError::Output {
                path: path.to_path_buf(),
                source,
            },
            other => CliError::Core(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hom", version, about = "Two-photon interference simulator and coincidence analyzer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate coincidence densities and the dip from the closed forms.
    Oracle(OracleArgs),
    /// Generate a timestamped event file and its JSON sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Histogram two event files and report raw and corrected visibility.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Events recorded with parallel polarizations.
        #[arg(long)]
        par: PathBuf,
        /// Events recorded with orthogonal polarizations.
        #[arg(long)]
        perp: PathBuf,
    },
    /// Simulate and analyze both polarizations at every delay in `delta_t_list`.
    Dip {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 26.18)]
    pub tau_s: f64,
    #[arg(long, default_value_t = 13.61)]
    pub tau_f: f64,
    /// Polarization overlap of the "parallel" curve.
    #[arg(long, default_value_t = 1.0)]
    pub xi: f64,
    /// Detuning of the single-atom photon, MHz.
    #[arg(long, default_value_t = 0.0)]
    pub detuning: f64,
    #[arg(long, default_value_t = -40.0, allow_hyphen_values = true)]
    pub dt_min: f64,
    #[arg(long, default_value_t = 40.0, allow_hyphen_values = true)]
    pub dt_max: f64,
    #[arg(long, default_value_t = 5.0)]
    pub dt_step: f64,
    /// Density table covers `|Δt_ab| ≤ x_range`.
    #[arg(long, default_value_t = 200.0)]
    pub x_range: f64,
    #[arg(long, default_value_t = 1.0)]
    pub x_step: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Oracle(args) => {
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let s = cmd_oracle(&args, &out)?;
            println!("visibility (closed form) = {:.4}", s.visibility_closed_form);
            println!("wrote {} density rows and {} dip rows to {}", s.density_rows, s.dip_rows, out.display());
        }
        Command::Simulate { common } => {
            let cfg = RunConfigFile::load(&common.config)?;
            let out = cfg.output_dir(common.out.as_deref());
            let s = cmd_simulate(&cfg, common.seed, &out)?;
            println!("wrote {} records to {} (config {})", s.n_records, s.events.display(), s.config_hash);
        }
        Command::Analyze { common, par, perp } => {
            let cfg = RunConfigFile::load(&common.config)?;
            let out = cfg.output_dir(common.out.as_deref());
            let r = cmd_analyze(&cfg, &par, &perp, &out)?;
            println!("raw V = {:.4} ± {:.4} (|Δt_ab| ≤ {} ns)", r.raw.v, r.raw.sigma_v, r.raw.t_c);
            println!(
                "corrected V = {:.4} ± {:.4} (|Δt_ab| ≤ {} ns)",
                r.corrected.v, r.corrected.sigma_v, r.corrected.t_c
            );
        }
        Command::Dip { common } => {
            let cfg = RunConfigFile::load(&common.config)?;
            let out = cfg.output_dir(common.out.as_deref());
            let r = cmd_dip(&cfg, common.seed, &out)?;
            for p in &r.points {
                println!("ΔT = {:+6.1} ns: ratio = {:.4} ± {:.4} (model {:.4})", p.delta_t, p.ratio, p.sigma, p.model);
            }
        }
    }
    Ok(())
}
