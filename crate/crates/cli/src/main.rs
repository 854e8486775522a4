use std::process::ExitCode;

use clap::Parser;
use qlasso_cli::config::SEED_ENV;
use qlasso_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match run(&cli, env_seed.as_deref()) {
        Ok(outcome) => {
            for line in &outcome.stdout {
                println!("{line}");
            }
            eprintln!(
                "wrote {} files to {}",
                outcome.manifest.files.len() + 1,
                outcome.manifest.out_dir.display()
            );
            if outcome.failed_checks.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: failed checks: {}", outcome.failed_checks.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
