use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use llmprop_cli::{run, Command, Config};

/// Crystal property prediction experiments.
#[derive(Debug, Parser)]
#[command(name = "llmprop", version)]
struct Args {
    /// prepare, train, evaluate, predict, zero-shot, transfer, ablate or sweep
    #[arg(value_parser = parse_command)]
    command: Command,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_command(s: &str) -> Result<Command, String> {
    Command::parse(s).ok_or_else(|| {
        let names: Vec<_> = Command::ALL.iter().map(|c| c.name()).collect();
        format!("unknown command {s:?}; expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = Config::resolve(args.config.as_deref(), &args.set).and_then(|cfg| run(args.command, &cfg, &args.out));
    match result {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("llmprop {}: {e}", args.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
