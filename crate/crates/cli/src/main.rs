mod args;
mod commands;
mod files;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

/// Why a run failed: bad input (exit 1) or a failure while running (exit 2).
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Invalid(e.into())
}

pub fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Appends `--key=value` for every config-file entry whose flag is not on
/// the command line. `true` becomes a bare switch and `false` is dropped.
fn overlay_config(argv: Vec<OsString>) -> Result<Vec<OsString>, anyhow::Error> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| anyhow::anyhow!("{path}: {e}"))?;
    let pairs = graphwords::training::config::parse_kv(&text).map_err(|e| anyhow::anyhow!("{path}: {e}"))?;
    let mut out = argv;
    for (key, value) in pairs {
        let flag = format!("--{}", key.replace('_', "-"));
        let given = strs.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match value.as_str() {
            "true" => out.push(flag.into()),
            "false" => {}
            _ => out.push(format!("{flag}={value}").into()),
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let argv = match overlay_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    eprintln!("# resolved configuration\n{:#?}", cli.command);
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
