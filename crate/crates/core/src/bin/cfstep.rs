use clap::Parser;

use cfstep::cli::{error_exit_code, execute, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(error_exit_code(&err));
        }
    }
}
