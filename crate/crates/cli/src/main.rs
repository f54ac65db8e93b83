use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vorwave_cli::{parse_config, run_command, CliError, Command};

#[derive(Parser)]
#[command(
    name = "vorwave",
    version,
    about = "Small-amplitude N-modal steady water waves with vorticity"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` overrides with dotted keys, e.g. `solver.t=[1e-3,1e-3]`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Choose b with exactly N negative eigenvalues.
    SelectB(Common),
    /// Dispersion eigenvalues and eigenfunctions of the linear stream.
    Spectrum(Common),
    /// Analytic and finite-difference Jacobians of the eigenvalue map.
    IspJacobian(Common),
    /// Vorticity basis with identity Jacobian.
    BuildBasis(Common),
    /// Nearest commensurate eigenvalues and the perturbation realizing them.
    TuneMu(Common),
    /// Linear N-modal wave and its residual.
    LinearWave(Common),
    /// Nonlinear N-modal wave for amplitudes solver.t.
    Solve(Common),
    /// Amplitude scaling study along scan.direction.
    Scan(Common),
}

fn run(sub: Sub) -> Result<(), CliError> {
    let (cmd, common) = match sub {
        Sub::SelectB(c) => (Command::SelectB, c),
        Sub::Spectrum(c) => (Command::Spectrum, c),
        Sub::IspJacobian(c) => (Command::IspJacobian, c),
        Sub::BuildBasis(c) => (Command::BuildBasis, c),
        Sub::TuneMu(c) => (Command::TuneMu, c),
        Sub::LinearWave(c) => (Command::LinearWave, c),
        Sub::Solve(c) => (Command::Solve, c),
        Sub::Scan(c) => (Command::Scan, c),
    };
    let text =
        std::fs::read_to_string(&common.config).map_err(|e| CliError::io(&common.config, e))?;
    let cfg = parse_config(&text, &common.overrides)?;
    let out = common.out.unwrap_or_else(|| PathBuf::from(&cfg.out));
    let (report, outcome) = run_command(cmd, &cfg, &out);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    outcome?;
    println!(
        "{}: {} files in {} ({:.2} s)",
        cmd.name(),
        report.outputs.len(),
        out.display(),
        report.wall_time_s
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
