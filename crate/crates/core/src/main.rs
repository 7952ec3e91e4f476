use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graphmfg::config::ScenarioConfig;
use graphmfg::dynamics::Quadrature;
use graphmfg::runner::{run_scenario, run_sweep, sweep_csv, sweep_table, Overrides};
use graphmfg::training::Optimizer;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Potential mean-field games on graphs, solved by initial-value optimization.
#[derive(Parser)]
#[command(name = "graphmfg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides training.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides output.dir (for sweeps: parent of per-run directories).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Validate and print the resolved scenario without training.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Time quadrature of the running cost: left or alg1.
    #[arg(long, global = true)]
    quadrature: Option<Quadrature>,
    /// adam or gd.
    #[arg(long, global = true)]
    optimizer: Option<Optimizer>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scenario and write its outputs.
    Run { config: PathBuf },
    /// Run every config matching a glob and print a summary table.
    Sweep { pattern: String },
    /// Parse the config and build the graph and densities.
    Validate { config: PathBuf },
}

fn load(path: &Path, overrides: &Overrides) -> graphmfg::Result<ScenarioConfig> {
    let mut c = ScenarioConfig::load(path)?;
    overrides.apply(&mut c);
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        quadrature: cli.quadrature,
        optimizer: cli.optimizer,
    };
    let result = match &cli.command {
        Command::Validate { config } => load(config, &overrides).and_then(|c| {
            let sc = c.build()?;
            print!("{}", c.describe(Some(&sc.graph)));
            println!("ok");
            Ok(())
        }),
        Command::Run { config } => load(config, &overrides).and_then(|c| {
            if cli.dry_run {
                let sc = c.build()?;
                print!("{}", c.describe(Some(&sc.graph)));
                return Ok(());
            }
            let m = run_scenario(&c)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            println!("outputs written to {}", c.output.dir.display());
            Ok(())
        }),
        Command::Sweep { pattern } => {
            if cli.dry_run {
                glob::glob(pattern)
                    .map_err(|e| graphmfg::Error::Parse(e.to_string()))
                    .and_then(|paths| {
                        let mut any = false;
                        for p in paths.flatten() {
                            any = true;
                            let c = load(&p, &overrides)?;
                            let sc = c.build()?;
                            print!("{}", c.describe(Some(&sc.graph)));
                            println!();
                        }
                        if any {
                            Ok(())
                        } else {
                            Err(graphmfg::Error::Parse(format!("no config matches `{pattern}`")))
                        }
                    })
            } else {
                run_sweep(pattern, &overrides).and_then(|rows| {
                    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out/sweep"));
                    std::fs::create_dir_all(&dir)?;
                    let table = sweep_table(&rows);
                    std::fs::write(dir.join("summary.csv"), sweep_csv(&rows))?;
                    std::fs::write(dir.join("summary.txt"), &table)?;
                    print!("{table}");
                    Ok(())
                })
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
