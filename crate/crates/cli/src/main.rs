use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use rhythm_miner_cli::app::{self, Cli};
use rhythm_miner_cli::exit_code;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<i32> {
    let (cfg, seed) = app::load_config(cli)?;
    if let Some(n) = app::jobs(cli, &cfg)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting worker pool")?;
    }
    let out = app::run(cli, cfg, seed)?;
    let json = out.report.to_json();
    if let Some(path) = &cli.report {
        std::fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    if cli.json {
        print!("{json}");
    } else {
        print!("{}", out.report.summary());
    }
    if out.code != 0 {
        eprintln!("error: no discriminating formula found");
    }
    Ok(out.code)
}
