use clap::Parser;
use gasflow_cli::{run, Command};

/// Steady-state gas network flow solver.
#[derive(Parser)]
#[command(name = "gasflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
