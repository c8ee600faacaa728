use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use choquard::cli::{cmd_groundstate, cmd_semiclassical, cmd_verify, Exit, Overrides};
use choquard::solvers::SeedProfile;
use choquard::verify::Fault;

#[derive(Parser)]
#[command(name = "choquard", version, about = "Ground states and semiclassical spikes of the Choquard equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding `output_dir` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ground state of the limit problem.
    Groundstate {
        #[arg(long)]
        config: PathBuf,
        /// gaussian, instanton or file:PATH.
        #[arg(long)]
        seed_profile: Option<SeedProfile>,
    },
    /// ε sweep of the penalized problem.
    Semiclassical {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed_profile: Option<SeedProfile>,
    },
    /// Self-test battery.
    Verify {
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    KernelSign,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { Exit::Config } else { Exit::Ok };
            return ExitCode::from(code.code() as u8);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(Exit::Config.code() as u8);
        }
        choquard::par::set_threads(n);
    }
    let exit = match cli.command {
        Command::Groundstate { config, seed_profile } => {
            cmd_groundstate(&config, &Overrides { out: cli.out, seed_profile })
        }
        Command::Semiclassical { config, seed_profile } => {
            cmd_semiclassical(&config, &Overrides { out: cli.out, seed_profile })
        }
        Command::Verify { inject_fault } => {
            let fault = inject_fault.map(|FaultArg::KernelSign| Fault::KernelSign);
            cmd_verify(cli.out.as_deref(), fault)
        }
    };
    ExitCode::from(exit.code() as u8)
}
