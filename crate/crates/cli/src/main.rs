use clap::Parser;
use lidaraug_cli::{exit_code, run, Cli};

fn main() {
    let result = run(Cli::parse());
    match &result {
        Ok(outcome) => {
            for m in &outcome.messages {
                println!("{m}");
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
        }
        Err(e) => eprintln!("error: {e:#}"),
    }
    std::process::exit(exit_code(&result));
}
