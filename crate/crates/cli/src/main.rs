use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjks_cli::config::{parse_config_with, Engine, Overrides};
use hjks_cli::run::{exit_code, run, EXIT_CONFIG, EXIT_IO};

#[derive(Parser)]
#[command(
    name = "hjks",
    version,
    about = "KS-invariant experiments for classical and quantum Hamiltonian systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Riccati KS estimate along a continuous-time orbit.
    Continuous(Common),
    /// KS estimate for a kicked system.
    Kicked(Common),
    /// Split-operator kicked rotor with MB orbits, hybrid and entropy rates.
    RotorQuantum(Common),
    /// Benettin Lyapunov spectrum for a continuous or kicked system.
    Oracle(Common),
    /// Named presets checked against their expected values.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Presets to run (overrides `bench.presets`).
        presets: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every sampler in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress and summary output.
    #[arg(long)]
    quiet: bool,
    /// Override one configuration key, e.g. `--set kicked.steps=1000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (engine, common, presets) = match cli.command {
        Command::Continuous(c) => (Engine::Continuous, c, vec![]),
        Command::Kicked(c) => (Engine::Kicked, c, vec![]),
        Command::RotorQuantum(c) => (Engine::RotorQuantum, c, vec![]),
        Command::Oracle(c) => (Engine::Oracle, c, vec![]),
        Command::Bench { common, presets } => (Engine::Bench, common, presets),
    };
    let text = match &common.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
        None => String::new(),
    };
    let mut set = common.set.clone();
    if !presets.is_empty() {
        let list: Vec<String> = presets.iter().map(|p| format!("{p:?}")).collect();
        set.push(format!("bench.presets=[{}]", list.join(", ")));
    }
    let overrides = Overrides {
        engine: Some(engine),
        seed: common.seed,
        out: common.out.clone(),
        set,
    };
    let config = match parse_config_with(&text, &overrides) {
        Ok(c) => c,
        Err(errors) => {
            let source = common
                .config
                .as_ref()
                .map_or("configuration".to_string(), |p| p.display().to_string());
            eprintln!("error: invalid {source}:");
            for e in &errors.0 {
                eprintln!("  {e}");
            }
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run(&config, common.quiet) {
        Ok(manifest) => {
            if !common.quiet {
                for (name, e) in &manifest.estimates {
                    match (e.value, e.error) {
                        (Some(v), Some(err)) => println!("{name} = {v:.6e} ± {err:.1e}"),
                        (Some(v), None) => println!("{name} = {v:.6e}"),
                        _ => println!("{name} = n/a"),
                    }
                }
                if let Some(d) = &manifest.diagnostic {
                    eprintln!("diagnostic: {d}");
                }
                println!(
                    "manifest: {}",
                    config.out.join(hjks_cli::manifest::MANIFEST_FILE).display()
                );
            }
            ExitCode::from(exit_code(&manifest) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_IO as u8)
        }
    }
}
