use std::path::PathBuf;
use std::process::ExitCode;

use beamtrack_cli::{cmd_optimize, cmd_simulate, cmd_sweep, configure_threads, parse_sweep_param, Failure};
use clap::{Parser, Subcommand};

/// Beam tracking simulator and training-beam optimizer.
#[derive(Parser)]
#[command(name = "beamtrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design training beams for one prior.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// point:<i>, propagated:<i>, uniform or file:<path>
        #[arg(long)]
        prior: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Monte-Carlo tracking experiment.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep beta or snr over the list given in the config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// beta or snr
        #[arg(long)]
        param: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Optimize { config, prior, out } => {
            cmd_optimize(&config, &prior, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Simulate { config, out } => {
            for p in cmd_simulate(&config, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Sweep { config, param, out } => {
            let param = parse_sweep_param(&param)?;
            for p in cmd_sweep(&config, param, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("beamtrack: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
