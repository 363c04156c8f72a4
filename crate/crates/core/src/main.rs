use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qoverlap::disorder::Mode;
use qoverlap::runner::{exit_code, run, Overrides};
use qoverlap::verifier::list_builtin_identities;

#[derive(Parser)]
#[command(name = "qoverlap", version, about = "Batch checks of overlap identities in disordered quantum spin systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the checks of a config file (or a bundled config name).
    Run {
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        /// mc, gh or trapezoid
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the builtin identities.
    List,
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::List => {
            print!("{}", list_builtin_identities());
            ExitCode::SUCCESS
        }
        Cmd::Run { config, seed, samples, mode, out } => {
            let result = run(&config, &Overrides { seed, samples, mode, out });
            match &result {
                Ok(o) if o.gating_failures.is_empty() => eprintln!("{} reports, all exact checks passed", o.reports),
                Ok(o) => {
                    eprintln!("{} reports, {} exact checks failed:", o.reports, o.gating_failures.len());
                    for f in &o.gating_failures {
                        eprintln!("  {f}");
                    }
                }
                Err(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&result) as u8)
        }
    }
}
