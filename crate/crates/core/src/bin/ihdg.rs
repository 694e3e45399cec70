use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ihdg::bench::{self, RunRecord};
use ihdg::config::ExperimentConfig;

/// Iterative HDG experiments. Worker count: IHDG_THREADS.
#[derive(Parser)]
#[command(name = "ihdg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write iterations.csv, residuals.csv, convergence.csv
    Run {
        config: PathBuf,
        /// Output directory (overrides the `output` key)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment once per value of one parameter
    Sweep {
        config: PathBuf,
        /// cells, p, kappa, nu, dt or flux
        #[arg(long)]
        axis: String,
        /// Comma-separated values; cell counts may use `x`, e.g. 4x4,8x8
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the iteration with a direct solve of the coupled system
    Oracle { config: PathBuf },
    /// Print the theory verdict without solving
    Predict { config: PathBuf },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> ihdg::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(o) = out {
        cfg.output = o;
    }
    Ok(cfg)
}

fn summary(r: &RunRecord) {
    let c = &r.config;
    println!(
        "{} nel={} p={} flux={} iterations={} outcome={} predicted={} time={:.2}s{}",
        c.experiment,
        r.n_elements,
        c.p,
        c.flux,
        r.iterations,
        r.outcome.as_str(),
        r.prediction.verdict.as_str(),
        r.wall_time.as_secs_f64(),
        r.l2_error.map(|e| format!(" l2_error={e:.4e}")).unwrap_or_default()
    );
}

fn main_inner(cli: Cli) -> ihdg::Result<()> {
    ihdg::solver::init_threads();
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config, out)?;
            println!("# {}", bench::predict(&cfg)?.summary);
            summary(&bench::run(&cfg)?);
        }
        Command::Sweep { config, axis, values, out } => {
            let cfg = load(&config, out)?;
            for r in bench::sweep(&cfg, &axis, &values)? {
                summary(&r);
            }
        }
        Command::Oracle { config } => {
            let cfg = load(&config, None)?;
            let r = bench::oracle_check(&cfg)?;
            println!(
                "unknowns={} iterations={} outcome={} max_difference={:.3e} residuals=({:.3e}, {:.3e})",
                r.unknowns,
                r.iterations,
                r.outcome.as_str(),
                r.max_difference,
                r.residuals.0,
                r.residuals.1
            );
        }
        Command::Predict { config } => {
            let cfg = load(&config, None)?;
            let p = bench::predict(&cfg)?;
            println!("{}: {}", p.verdict.as_str(), p.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
