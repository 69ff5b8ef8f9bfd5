use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rgbsde_cli::{list_presets, load_config, resolve_output_dir, run_experiment, validate, ValidationOutcome};

#[derive(Parser)]
#[command(name = "rgbsde", version, about = "Reflected generalized BSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in presets.
    ListPresets,
    /// Parse a config (file or preset name) and run the assumption probes.
    Validate {
        config: String,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run an experiment and write its artifacts and manifest.
    Run {
        config: String,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $RGBSDE_OUTPUT_ROOT/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

const VALIDATION_FAILURE: u8 = 1;
const RUNTIME_FAILURE: u8 = 2;

fn print_report(outcome: &ValidationOutcome) {
    for s in &outcome.structural {
        println!("FAIL  config: {s}");
    }
    for c in &outcome.checks {
        println!("{}  {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.assumption, c.detail);
    }
    for (name, why) in &outcome.skipped {
        println!("n/a   {name}: {why}");
    }
}

/// Validation errors map to exit code 1.
fn check(config: &str, overrides: &[String]) -> Result<rgbsde_cli::Loaded, u8> {
    let loaded = load_config(config, overrides).map_err(|e| {
        eprintln!("error: {e:#}");
        VALIDATION_FAILURE
    })?;
    let outcome = validate(&loaded.config).map_err(|e| {
        eprintln!("error: {e:#}");
        VALIDATION_FAILURE
    })?;
    print_report(&outcome);
    if let Some(first) = outcome.first_failure() {
        eprintln!("validation failed: {first}");
        return Err(VALIDATION_FAILURE);
    }
    Ok(loaded)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListPresets => {
            for (name, description) in list_presets() {
                println!("{name:<24} {description}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config, overrides } => match check(&config, &overrides) {
            Ok(_) => {
                println!("valid");
                ExitCode::SUCCESS
            }
            Err(code) => ExitCode::from(code),
        },
        Command::Run {
            config,
            seed,
            out,
            overrides,
        } => {
            let mut loaded = match check(&config, &overrides) {
                Ok(l) => l,
                Err(code) => return ExitCode::from(code),
            };
            if let Some(s) = seed {
                loaded.config.seeds = vec![s];
            }
            let dir = resolve_output_dir(&loaded, out.as_deref());
            match run_experiment(&loaded.config, &dir) {
                Ok(m) => {
                    for (seed, s) in m.seeds.iter().zip(&m.summaries) {
                        println!("seed {seed}: {s}");
                    }
                    println!("wrote {} files and manifest.json to {}", m.files.len(), dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(RUNTIME_FAILURE)
                }
            }
        }
    }
}
