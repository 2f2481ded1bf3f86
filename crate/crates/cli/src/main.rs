use clap::Parser;
use spps_cli::{error_json, exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let result = cli.resolve().and_then(|m| run(&m));
    if let Err(err) = result {
        eprintln!("{}", error_json(&err));
        std::process::exit(exit_code(&err));
    }
}
