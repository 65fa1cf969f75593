//! `pfa`: phylogenetic factor analysis from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Arg, ArgAction, ArgMatches, Command as App};

use config::{keys_for, Command, Config};

fn flag(name: &str) -> String {
    name.replace('_', "-")
}

fn subcommand(name: &'static str, about: &'static str, command: Command) -> App {
    let mut app = App::new(name).about(about);
    let config_flag = if command == Command::Simulate { "spec" } else { "config" };
    app = app.arg(
        Arg::new("config")
            .long(config_flag)
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("INI configuration; flags override its values"),
    );
    if matches!(command, Command::Fit | Command::SelectK) {
        app = app.arg(
            Arg::new("column")
                .long("column")
                .value_name("NAME=TYPE")
                .action(ArgAction::Append)
                .help("declare a column type: continuous, binary or ordinal(m)"),
        );
    }
    for key in keys_for(command) {
        let mut help = key.help.to_string();
        if !key.default.is_empty() {
            help.push_str(&format!(" [default: {}]", key.default));
        }
        app = app.arg(Arg::new(key.name).long(flag(key.name)).value_name("VALUE").help(help));
    }
    app
}

fn cli() -> App {
    App::new("pfa")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Bayesian phylogenetic factor analysis")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand("fit", "sample the posterior for a fixed number of factors", Command::Fit))
        .subcommand(subcommand("select-k", "compare numbers of factors by path sampling", Command::SelectK))
        .subcommand(subcommand("simulate", "generate a synthetic dataset", Command::Simulate))
        .subcommand(subcommand("summarize", "summarize an existing trace", Command::Summarize))
}

fn resolve(command: Command, m: &ArgMatches) -> Result<Config> {
    let mut cfg = Config::new(command);
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.load_file(path)?;
    }
    if let Ok(Some(columns)) = m.try_get_many::<String>("column") {
        for spec in columns {
            let (name, kind) = spec
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--column expects NAME=TYPE, got '{spec}'"))?;
            cfg.set_column(name, kind);
        }
    }
    for key in keys_for(command) {
        if let Some(v) = m.get_one::<String>(key.name) {
            cfg.set(key.name, v)?;
        }
    }
    Ok(cfg)
}

fn run(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand is required");
    let command = match name {
        "fit" => Command::Fit,
        "select-k" => Command::SelectK,
        "simulate" => Command::Simulate,
        _ => Command::Summarize,
    };
    let cfg = resolve(command, sub)?;
    match command {
        Command::Fit => commands::fit(&cfg),
        Command::SelectK => commands::select_k(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Summarize => commands::summarize_trace(&cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<phylofactor::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
