use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use degel_cli::commands::{self, CmdContext};
use degel_cli::config::load_config;
use degel_cli::{CliError, Mode};

/// Workbench for uniformly degenerate elliptic Dirichlet problems on the
/// half-cube: characteristic exponents, manufactured solutions, barrier
/// certificates, graded-mesh solves, and boundary-regularity measurements.
///
/// Coefficient expressions use variables x1[, x2], t with `^` binding
/// tightest and right-associative: `2^3^2` = 512 and `-t^2` = -(t^2).
///
/// Thread count follows RAYON_NUM_THREADS.
#[derive(Parser)]
#[command(name = "degel", version, about)]
struct Cli {
    /// Problem configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for reports and fields.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override the solve mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Suppress progress output (files are still written).
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Continuation,
    Both,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Direct => Mode::Direct,
            ModeArg::Continuation => Mode::Continuation,
            ModeArg::Both => Mode::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check boundary conditions and report characteristic roots.
    Indicial,
    /// Emit exact solution and right-hand side for a manufactured case.
    Manufacture,
    /// Solve the configured problem.
    Solve,
    /// Run the configured analysis operations.
    Analyze,
    /// Construct and verify a decay barrier.
    Barrier,
    /// Run the whole verification pipeline with PASS/FAIL stages.
    FullVerify,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let config = load_config(&config_path)?;
    let ctx = CmdContext::new(
        config,
        cli.out,
        cli.seed,
        cli.mode.map(Mode::from),
        cli.quiet,
    )?;
    match cli.command {
        Command::Indicial => commands::cmd_indicial(&ctx),
        Command::Manufacture => commands::cmd_manufacture(&ctx),
        Command::Solve => commands::cmd_solve(&ctx),
        Command::Analyze => commands::cmd_analyze(&ctx),
        Command::Barrier => commands::cmd_barrier(&ctx),
        Command::FullVerify => commands::cmd_full_verify(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
