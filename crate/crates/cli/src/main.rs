use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use nocnn_cli::{execute, exit, CliError, Command, Invocation, EXIT_CODE_HELP};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Check the network structure only
    Validate,
    /// Run the compressive-sensing experiment (cascade vs Lasso vs ART)
    Train,
    /// Run the approximation study
    Approx,
    /// Run the loss ablation over alpha
    Ablate,
    /// Re-render a per-image report CSV as a summary
    Report,
}

#[derive(Debug, Parser)]
#[command(name = "nocnn", version, about = "Non-overlapping CNN experiments", after_help = EXIT_CODE_HELP)]
struct Args {
    command: Cmd,
    /// Report CSV (for `report`)
    input: Option<PathBuf>,
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Validate => Command::Validate,
        Cmd::Train => Command::Train,
        Cmd::Approx => Command::Approx,
        Cmd::Ablate => Command::Ablate,
        Cmd::Report => Command::Report,
    };
    let document = match (&args.config, command) {
        (Some(path), _) => match std::fs::read_to_string(path) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(exit::IO_FORMAT);
            }
        },
        (None, Command::Report) => String::new(),
        (None, _) => {
            eprintln!("error: {} needs --config PATH", command.name());
            return ExitCode::from(exit::USAGE);
        }
    };
    if command == Command::Report && args.input.is_none() {
        eprintln!("error: report needs an input CSV");
        return ExitCode::from(exit::USAGE);
    }
    let inv = Invocation {
        command,
        document: &document,
        seed_override: args.seed,
        input: args.input.as_deref(),
    };
    let outcome = execute(&inv).and_then(|o| {
        if let Some(dir) = &args.out {
            for path in o.artifacts.commit(dir)? {
                eprintln!("wrote {}", path.display());
            }
        }
        Ok(o)
    });
    match outcome {
        Ok(o) => {
            print!("{}", o.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.render());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code()
}
