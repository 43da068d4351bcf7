use clap::Parser;
use desdb::backend::Connections;
use desdb::repl;
use desdb::Session;
use std::io::{BufReader, Write};
use std::process::ExitCode;

/// Deductive database with persistent predicates on SQL backends.
#[derive(Parser)]
#[command(name = "desdb", version)]
struct Args {
    /// Connection registry file: one `name kind location dialect` per line.
    #[arg(long)]
    db: Option<String>,
    /// Run commands from a file instead of stdin.
    #[arg(long)]
    script: Option<String>,
    /// Suppress command echo.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let connections = match &args.db {
        Some(path) => match Connections::from_registry_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("Error: {}", e);
                return ExitCode::FAILURE;
            }
        },
        None => Connections::new("", Vec::new()),
    };
    let mut session = Session::new(connections);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = match &args.script {
        Some(path) => match std::fs::File::open(path) {
            Ok(f) => repl::run(&mut session, BufReader::new(f), &mut out, args.quiet),
            Err(e) => {
                eprintln!("Error: cannot open script '{}': {}", path, e);
                return ExitCode::FAILURE;
            }
        },
        None => {
            let stdin = std::io::stdin();
            repl::run(&mut session, stdin.lock(), &mut out, args.quiet)
        }
    };
    let _ = out.flush();
    match code {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("Error: {}", e);
            ExitCode::FAILURE
        }
    }
}
