mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::Config;

/// Liouvillian and oscillating-mode gaps of dissipative lattice bosons.
#[derive(Parser)]
#[command(name = "omgap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    model: Option<u8>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for grids; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config key, `section.key=value` or `param=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Mean-field gaps and spectral types over a parameter grid.
    PhaseDiagram,
    /// Exact or mean-field spectrum with its gap report.
    Spectrum,
    /// Density-modulation relaxation and damped-cosine fit.
    Relax,
    /// Gross-Pitaevskii dispersion on the chain momenta.
    GpDispersion,
    /// Kernel-density edge detection of an exact spectrum.
    EdgeDetect,
    /// Finite-size scaling of the mean-field Liouvillian gap.
    GapScaling,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = Config::load(cli.config.as_deref(), &cli.sets, cli.model)?;
    let out = &cli.out;
    Ok(match cli.command {
        Command::PhaseDiagram => format!("wrote {}", commands::phase_diagram(&cfg, out)?.display()),
        Command::Spectrum => format!("wrote {} eigenvalues", commands::spectrum(&cfg, out)?),
        Command::Relax => {
            let fit = commands::relax(&cfg, out)?;
            format!("Gamma = {:.6}, Omega = {:.6}", fit.decay, fit.frequency)
        }
        Command::GpDispersion => format!("wrote {} momenta", commands::gp_dispersion(&cfg, out)?),
        Command::EdgeDetect => match commands::edge(&cfg, out)? {
            Some(g) => format!("OM gap estimate {g:.6}"),
            None => "no edge lines found".into(),
        },
        Command::GapScaling => format!("gap exponent {:.4}", commands::gap_scaling(&cfg, out)?),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(e)) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(3)
        }
        Err(CliError::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(1)
        }
    }
}
