use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use pqg::config::{parse_config, RunConfig};
use pqg::dynamics::Variant;
use pqg::experiments::{self, Check, RELAXATION_T_END};
use pqg::thermo::ThermoParams;
use pqg::Error;

#[derive(Parser)]
#[command(name = "pqg", version, about = "Precipitating quasi-geostrophic laboratory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides dynamics.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides dynamics.variant.
    #[arg(long, global = true)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the model and write frames, diagnostics.csv and summary.json.
    Run {
        /// Overrides dynamics.t_end [s].
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Relax a supersaturated cell towards saturation adjustment for n = 1..n_max.
    RelaxationStudy {
        #[arg(long, default_value_t = 6)]
        n_max: u32,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = RELAXATION_T_END)]
        t_end: f64,
    },
    /// Manufactured-solution checks of the linear inversion.
    InversionVerify {
        /// Horizontal points per side.
        #[arg(long, default_value_t = 64)]
        nx: usize,
        /// Vertical resolutions, coarse to fine.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        nz: Vec<usize>,
    },
    /// Derived quantities, regime prefactors and the saturation curve.
    CcTables {
        /// Overrides regime.epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn load(common: &Common) -> pqg::Result<Option<RunConfig>> {
    common.config.as_deref().map(parse_config).transpose()
}

fn report(checks: &[Check], out: &Path) {
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: measured {:.6e} (target {:.6e}, tolerance {:.3e})", c.name, c.measured, c.target, c.tolerance);
    }
    println!("summary written to {}", out.join("summary.json").display());
}

fn execute(cli: Cli) -> pqg::Result<()> {
    let common = &cli.common;
    let out = &common.out;
    match cli.command {
        Command::Run { t_end } => {
            let mut cfg = load(common)?.ok_or_else(|| Error::Config {
                key: "--config".into(),
                message: "`run` needs a configuration file".into(),
            })?;
            if let Some(seed) = common.seed {
                cfg.dynamics.seed = seed;
            }
            if let Some(variant) = common.variant {
                cfg.dynamics.variant = variant;
            }
            if let Some(t) = t_end {
                cfg.dynamics.t_end = t;
            }
            cfg.validate()?;
            let summary = experiments::run(&cfg, out)?;
            report(&summary.checks, out);
        }
        Command::RelaxationStudy { n_max, epsilon, t_end } => {
            let ns: Vec<u32> = (1..=n_max).collect();
            let summary = experiments::relaxation_study(&ns, epsilon, t_end)?;
            experiments::write_relaxation(&summary, out)?;
            report(&summary.checks, out);
        }
        Command::InversionVerify { nx, nz } => {
            let tp = load(common)?.map(|c| c.thermo).unwrap_or_default();
            let summary = experiments::inversion_verify(nx, &nz, &tp)?;
            experiments::write_inversion(&summary, out)?;
            report(&summary.checks, out);
        }
        Command::CcTables { epsilon } => {
            let cfg = load(common)?;
            let tp = cfg.as_ref().map(|c| c.thermo).unwrap_or_else(ThermoParams::default);
            let eps = epsilon.or(cfg.map(|c| c.regime.epsilon)).unwrap_or(0.1);
            let summary = experiments::cc_tables(&tp, eps)?;
            experiments::write_cc_tables(&summary, out)?;
            report(&summary.checks, out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(match e {
                e if e.is_config() => 2,
                Error::Io(_) => 1,
                _ => 3,
            })
        }
    }
}
