//! `hmrsim`: run layers, fault campaigns and sweeps on the accelerator model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, ConfigError, ModeSel};

/// Exit codes.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_ACCEPTANCE: u8 = 3;
pub const EXIT_UNCORRECTABLE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "hmrsim", version, about = "Cycle-level simulator of a hybrid-modular-redundancy NPU")]
pub struct Cli {
    /// JSON configuration; defaults apply to anything left out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Input and campaign seed. Falls back to the config, then SAFE_NN_SEED.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Campaign worker threads; 0 uses every core.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Directory for reports and tensors.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write a per-cycle event trace of `run`.
    #[arg(long, global = true, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Print the full default configuration and exit.
    #[arg(long)]
    dump_defaults: bool,
    /// Print the ECC parity-check matrices and exit.
    #[arg(long)]
    dump_hmatrix: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum ModeArg {
    Baseline,
    Performance,
    Redundancy,
    All,
}

impl From<ModeArg> for ModeSel {
    fn from(m: ModeArg) -> ModeSel {
        match m {
            ModeArg::Baseline => ModeSel::Baseline,
            ModeArg::Performance => ModeSel::Performance,
            ModeArg::Redundancy => ModeSel::Redundancy,
            ModeArg::All => ModeSel::All,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one layer and write outputs and the cycle report.
    Run,
    /// Random fault-injection campaign.
    Campaign,
    /// Single-fault overhead and fault-rate degradation sweeps as CSV.
    Sweep,
    /// Built-in consistency checks.
    Selftest {
        /// Also inject a fault at a site outside the redundancy scheme and
        /// exit 4 when it corrupts the result.
        #[arg(long)]
        spof_demo: bool,
    },
}

/// Settings after merging flags, the config file and the environment.
pub struct Settings {
    pub cfg: Config,
    pub seed: u64,
    pub jobs: usize,
    pub trace: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> anyhow::Result<Settings> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(m) = cli.mode {
        cfg.mode = m.into();
    }
    if let Some(d) = &cli.out {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    let seed = match (cli.seed, cfg.seed) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => match std::env::var("SAFE_NN_SEED") {
            Ok(v) => v.trim().parse().map_err(|_| config::config_error(format!("SAFE_NN_SEED={v} is not a u64")))?,
            Err(_) => 0,
        },
    };
    Ok(Settings { cfg, seed, jobs: cli.jobs.unwrap_or(0), trace: cli.trace.clone() })
}

fn dispatch(cli: &Cli) -> anyhow::Result<u8> {
    if cli.dump_defaults {
        commands::dump_defaults();
        return Ok(0);
    }
    if cli.dump_hmatrix {
        commands::dump_hmatrix();
        return Ok(0);
    }
    let Some(command) = &cli.command else {
        return Err(config::config_error("no subcommand given; see --help"));
    };
    let s = resolve(cli)?;
    match command {
        Command::Run => commands::run(&s),
        Command::Campaign => commands::campaign(&s),
        Command::Sweep => commands::sweep(&s),
        Command::Selftest { spof_demo } => commands::selftest(&s, *spof_demo),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_config = e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<hmrsim::Error>(), Some(hmrsim::Error::Config(_) | hmrsim::Error::Format(_)));
            ExitCode::from(if is_config { EXIT_CONFIG } else { 1 })
        }
    }
}
