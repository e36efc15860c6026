use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use billiard_evt_cli::commands::{self, load_geometry, parse_vector};
use billiard_evt_cli::{pipeline, selftest, threads_from_env, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "billiard-evt", version, about = "Extreme value statistics at periodic orbits of the Lorentz gas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump a trajectory from an invariant-measure start as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        burn_in: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Period-2 line-of-centers orbit along a lattice vector, as JSON.
    FindOrbit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        vector: [i64; 2],
        #[arg(long, default_value_t = 0)]
        scatterer: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extremal index of a stored orbit, every variant.
    Theta {
        #[arg(long)]
        orbit: PathBuf,
    },
    /// Full experiment: orbit, trajectory, statistics, summary and checks.
    Evt {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Point-process histogram for another window length.
    Repp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        t_window: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Pólya-Aeppli pmf table with sampler frequencies.
    PolyaAeppli {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        k_max: u64,
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fit report file; stderr when omitted.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Line-of-centers family table for a list of lattice vectors.
    InfiniteHorizonScan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vectors_file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick suite of exact cases.
    Selftest,
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn json(value: &impl serde::Serialize) -> anyhow::Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn experiment(config: &Path, out_dir: Option<PathBuf>) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let c = ExperimentConfig::load(config)?;
    let dir = out_dir.unwrap_or_else(|| c.output_dir.clone());
    Ok((c, dir))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut log = |line: &str| eprintln!("{line}");
    match cli.command {
        Command::Simulate { config, steps, seed, burn_in, out } => {
            let csv = commands::simulate(&load_geometry(&config)?, steps, seed, burn_in)?;
            emit(out.as_deref(), &csv)?;
        }
        Command::FindOrbit { config, vector, scatterer, out } => {
            let d = commands::find_orbit(&load_geometry(&config)?, scatterer, vector)?;
            emit(out.as_deref(), &json(&d)?)?;
        }
        Command::Theta { orbit } => emit(None, &json(&commands::theta(&orbit)?)?)?,
        Command::Evt { config, out_dir } => {
            let (c, dir) = experiment(&config, out_dir)?;
            let report = pipeline::run(&c, &dir, &mut log)?;
            for check in &report.summary.checks {
                println!("{}", check.line());
            }
            println!("outputs in {}", report.out_dir.display());
            return Ok(report.summary.all_passed);
        }
        Command::Repp { config, t_window, out_dir } => {
            let (c, dir) = experiment(&config, out_dir)?;
            let repp = pipeline::repp_window(&c, &dir, t_window, &mut log)?;
            emit(None, &json(&repp)?)?;
        }
        Command::PolyaAeppli { theta, t, k_max, draws, seed, fit } => {
            let out = commands::polya_aeppli(theta, t, k_max, draws, seed)?;
            emit(None, &out.csv)?;
            if let Some(report) = out.fit {
                match fit {
                    Some(p) => std::fs::write(&p, json(&report)?).with_context(|| format!("writing {}", p.display()))?,
                    None => std::io::stderr().write_all(&json(&report)?)?,
                }
            }
        }
        Command::InfiniteHorizonScan { config, vectors_file, out } => {
            let vectors = commands::load_vectors(&vectors_file)?;
            emit(out.as_deref(), &commands::infinite_horizon_scan(&load_geometry(&config)?, &vectors)?)?;
        }
        Command::Selftest => {
            let started = std::time::Instant::now();
            let checks = selftest::run();
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} cases, {failed} failed, {:.2} s", checks.len(), started.elapsed().as_secs_f64());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
