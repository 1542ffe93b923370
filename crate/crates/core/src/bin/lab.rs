use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use henon_lab::lab::{error_payload, parse_precision, run, Command, ExperimentConfig};
use henon_lab::LabError;

/// Renormalization laboratory for dissipative Henon-like maps.
#[derive(Parser, Debug)]
#[command(name = "lab", version)]
struct Cli {
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `standard` or `compensated`.
    #[arg(long)]
    precision: Option<String>,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, LabError> {
    let mut cfg = ExperimentConfig::from_file(cli.command, &cli.config)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &cli.precision {
        cfg.precision = parse_precision(p)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| run(&cfg).map(|m| (cfg, m)));
    match result {
        Ok((cfg, manifest)) => {
            for a in &manifest.assertions {
                println!("{:<5} {} ({})", if a.pass { "pass" } else { "FAIL" }, a.name, a.detail);
            }
            println!("manifest: {}", cfg.output_dir.join("manifest.json").display());
            ExitCode::from(manifest.exit_code() as u8)
        }
        Err(e) => {
            let payload = error_payload(&e);
            println!("{payload}");
            if let Some(out) = &cli.out {
                let _ = std::fs::create_dir_all(out);
                let _ = std::fs::write(out.join("error.json"), payload.to_string());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
