use std::process::ExitCode;

use clap::Parser;
use dcan_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stderr = std::io::stderr();
    let result = cli.config().and_then(|cfg| run(cli.command, &cfg, &mut stderr.lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
