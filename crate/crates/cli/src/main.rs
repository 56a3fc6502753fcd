use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use rare_cli::args::Cli;
use rare_cli::error::EXIT_CONFIG;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let body = serde_json::json!({
                "error": { "kind": "usage", "exit_code": EXIT_CONFIG, "message": e.to_string(), "violations": [] }
            });
            eprintln!("{body}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match rare_cli::run(&cli) {
        Ok(stdout) => {
            // a closed pipe (`rare ... | head`) is not an error
            let _ = std::io::stdout().lock().write_all(stdout.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
