mod cli;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let parsed = cli::Cli::parse();
    match cli::run(parsed) {
        Ok(text) => {
            let text = text.trim_end();
            if !text.is_empty() {
                // A closed pipe downstream is not a failure.
                let _ = writeln!(std::io::stdout(), "{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut cause = String::new();
            for part in e.chain().map(|c| c.to_string()) {
                if !cause.contains(&part) {
                    if !cause.is_empty() {
                        cause.push_str(": ");
                    }
                    cause.push_str(&part);
                }
            }
            let cause = cause.replace('\n', " ");
            eprintln!("error: {cause}");
            ExitCode::FAILURE
        }
    }
}
