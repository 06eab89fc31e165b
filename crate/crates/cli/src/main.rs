mod cli;
mod commands;
mod config;
mod failure;
mod manifest;

use clap::error::ErrorKind;
use clap::Parser;

use crate::cli::{Cli, Command};
use crate::config::FileConfig;
use crate::failure::{CmdResult, Failure};

fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let quiet = cli.quiet || cfg.quiet.unwrap_or(false);
    env_logger::Builder::new()
        .filter_level(if quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Info
        })
        .parse_env("SFTPICK_LOG")
        .format_timestamp(None)
        .init();

    if let Some(n) = cli.threads.or(cfg.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }

    match cli.command {
        Command::Embed(a) => commands::cmd_embed(a, &cfg),
        Command::Score(a) => commands::cmd_score(a, &cfg),
        Command::Select(a) => commands::cmd_select(a, &cfg),
        Command::Stats(a) => commands::cmd_stats(a, &cfg),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(f) = run(cli) {
        eprintln!("sftpick: {f}");
        std::process::exit(f.exit_code());
    }
}
