mod commands;
mod run;

use aliasfree::error::Error;
use clap::{Parser, Subcommand};
use run::{output_root, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Anti-aliased 1-D CNN toolkit for auditory-model emulation and closed-loop hearing-aid training.
#[derive(Parser)]
#[command(name = "aliasfree", version)]
struct Cli {
    /// Key-value config file with one section per command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for run outputs.
    #[arg(long, global = true, env = "ALIASFREE_OUT")]
    out: Option<PathBuf>,
    /// Override one config value, `key=value` or `section.key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tone and speech-like corpus as WAV files.
    GenCorpus,
    /// Train an emulator, a hearing-aid model or a speech enhancer.
    Train,
    /// Run tone, step, aliasing and imaging probes on a system.
    Probe,
    /// Population-response NRMSE and optional physiology curves.
    Metrics,
    /// Real-time factor of a model on fixed frames.
    Bench,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownProfile(_) | Error::InvalidSpec(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let o = Overrides { config: cli.config.as_deref(), seed: cli.seed, set: &cli.set };
    let root = output_root(cli.out.as_deref());
    let res = match cli.command {
        Command::GenCorpus => commands::gen_corpus(&o, &root),
        Command::Train => commands::train(&o, &root),
        Command::Probe => commands::probe(&o, &root),
        Command::Metrics => commands::metrics(&o, &root),
        Command::Bench => commands::bench(&o, &root),
    };
    match res {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
