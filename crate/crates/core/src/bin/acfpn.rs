use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acfpn::cli::{cmd_dump_attention, cmd_forward, cmd_gradcheck, cmd_report, RunConfig};
use acfpn::Precision;

#[derive(Parser)]
#[command(name = "acfpn", version, about = "Context and attention feature pyramid toolkit")]
struct Cli {
    /// Key-value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// f32 or f64.
    #[arg(long, global = true)]
    precision: Option<Precision>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pyramid on the configured input and summarise each level.
    Forward,
    /// Compare analytic and finite-difference gradients for every op.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Parameter, MAC and receptive-field accounting.
    Report,
    /// Write attention maps as graymaps.
    DumpAttention,
}

fn run(cli: Cli) -> acfpn::Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if cli.precision.is_some() {
        cfg.precision = cli.precision;
    }
    let stdout = &mut std::io::stdout().lock();
    match cli.command {
        Command::Forward => cmd_forward(&cfg, stdout).map(|_| true),
        Command::Gradcheck { inject_fault } => Ok(cmd_gradcheck(&cfg, inject_fault.as_deref(), stdout)?.passed()),
        Command::Report => cmd_report(&cfg, stdout).map(|_| true),
        Command::DumpAttention => cmd_dump_attention(&cfg, stdout).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
