use std::process::ExitCode;

use clap::Parser;
use hpsf::run::{execute, Args, RunConfig};

fn main() -> ExitCode {
    let args = Args::parse();
    match RunConfig::resolve(&args).and_then(|cfg| execute(&cfg)) {
        Ok(summary) => {
            for f in &summary.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hpsf: {e}");
            ExitCode::FAILURE
        }
    }
}
