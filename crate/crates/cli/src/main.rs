//! `petl` command-line interface.

mod commands;
mod config;
mod error;

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};

use commands::{Command, COMMANDS};
use config::{parse_config, Settings};
use error::CliError;

fn cli() -> clap::Command {
    let mut app = clap::Command::new("petl")
        .about("Part-based ensemble transfer learning for facial expression recognition")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for c in COMMANDS {
        let mut sub = clap::Command::new(c.name).about(c.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("Settings file of `key = value` lines"),
        );
        for k in c.keys {
            let mut arg = Arg::new(k.name).long(k.flag).help(k.help);
            arg = if k.multi {
                arg.num_args(1..).action(ArgAction::Append)
            } else {
                arg.num_args(1)
            };
            sub = sub.arg(arg);
        }
        app = app.subcommand(sub);
    }
    app
}

fn settings_for(command: &Command, matches: &ArgMatches) -> Result<Settings, CliError> {
    let file = match matches.get_one::<String>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Some((path.as_str(), parse_config(&text, path)?))
        }
        None => None,
    };
    let mut flags = BTreeMap::new();
    for k in command.keys {
        if let Some(values) = matches.get_many::<String>(k.name) {
            let joined: Vec<&str> = values.map(String::as_str).collect();
            flags.insert(k.name.to_string(), joined.join(","));
        }
    }
    Settings::resolve(command.keys, file.map(|(p, f)| (p, f)), flags)
}

fn run(args: Vec<String>) -> Result<(), CliError> {
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return match code {
                0 => Ok(()),
                _ => Err(CliError::Usage(String::new())),
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let command = COMMANDS.iter().find(|c| c.name == name).expect("registered subcommand");
    let mut settings = settings_for(command, sub)?;
    (command.run)(&mut settings)
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
