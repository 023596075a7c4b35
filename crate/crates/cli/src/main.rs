use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anthracnose_filter::compare::{run_compare, run_method};
use anthracnose_filter::config::{load_config, RunMethod, ScenarioConfig};
use anthracnose_filter::io::{write_run_csv, write_truth_csv};
use anthracnose_filter::predict::filter_then_predict;
use anthracnose_filter::{posterior_stats, simulate_scenario, Error};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  invalid input: bad arguments, config keys or values, unreadable or unwritable files
  2  numerical failure: the filter collapsed or an explicit step went unstable";

/// Simulate the lumped anthracnose model and estimate its hidden inhibition
/// rate from noisy volume and rot observations.
#[derive(Debug, Parser)]
#[command(name = "anthracnose", version, after_help = EXIT_CODES)]
struct Cli {
    /// Flat-key TOML config; omitted keys keep the reference values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "ANTHRACNOSE_OUT", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ContinuousMethod {
    Zakai,
    Ks,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the hidden state and the observations; writes truth.csv.
    Simulate,
    /// Run the continuous-time grid filter; writes run_<method>.csv.
    Filter {
        #[arg(long, value_enum, default_value = "zakai")]
        method: ContinuousMethod,
    },
    /// Filter up to tau, then predict the law of theta at tau + horizon;
    /// writes prediction.csv.
    Predict {
        /// Last observation time used, rounded to the dt grid.
        #[arg(long)]
        tau: Option<f64>,
        /// How far past tau to predict.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Filter from observations sampled every dtau; writes run_discrete.csv.
    Discrete {
        /// Spacing of the observation times, a multiple of dt.
        #[arg(long)]
        dtau: Option<f64>,
        /// Implicitness of the transition scheme, in [0, 1].
        #[arg(long)]
        vartheta: Option<f64>,
    },
    /// Run the bootstrap particle filter; writes run_oracle.csv.
    Oracle {
        /// Number of particles.
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Run every configured method on every scenario cell; writes one CSV
    /// per (cell, method) and summary.csv.
    Compare,
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_numerical() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn load(cli: &Cli) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    Ok(cfg)
}

fn single_run(cfg: &ScenarioConfig, method: RunMethod, out: &Path) -> Result<(), Error> {
    cfg.validate()?;
    if method == RunMethod::Discrete {
        cfg.dtau_steps()?;
    }
    let scenario = simulate_scenario(&cfg.sim, &cfg.params)?;
    let run = run_method(method, &scenario, cfg)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("run_{method}.csv"));
    write_run_csv(&path, &scenario.truth, &scenario.obs, &run, cfg.sim.record_stride)?;
    let (mae, max) = run.errors(&scenario.truth.theta);
    println!("{method}: mae {mae:.5}, max error {max:.5} -> {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = load(cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate => {
            cfg.validate()?;
            let s = simulate_scenario(&cfg.sim, &cfg.params)?;
            std::fs::create_dir_all(out)?;
            let path = out.join("truth.csv");
            write_truth_csv(&path, &s.truth, &s.obs, cfg.sim.record_stride)?;
            println!(
                "simulated {} steps, clamped fraction {:.2e} -> {}",
                s.truth.n_steps(),
                s.truth.clamped_fraction(),
                path.display()
            );
        }
        Command::Filter { method } => {
            let m = match method {
                ContinuousMethod::Zakai => RunMethod::Zakai,
                ContinuousMethod::Ks => RunMethod::Ks,
            };
            single_run(&cfg, m, out)?;
        }
        Command::Predict { tau, horizon } => {
            if let Some(t) = tau {
                cfg.tau = *t;
            }
            if let Some(h) = horizon {
                cfg.horizon = *h;
            }
            cfg.validate()?;
            let s = simulate_scenario(&cfg.sim, &cfg.params)?;
            let grid = cfg.filter.grid()?;
            let prior = cfg.prior.density(&grid);
            let pi = filter_then_predict(&s.obs, &cfg.params, &cfg.filter, &prior, cfg.tau, cfg.horizon)?;
            std::fs::create_dir_all(out)?;
            let path = out.join("prediction.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["x", "density"])?;
            for (x, d) in grid.nodes.iter().zip(&pi.values) {
                w.write_record([x.to_string(), d.to_string()])?;
            }
            w.flush()?;
            let (m, v) = posterior_stats(&pi, &grid);
            println!(
                "predicted theta at t = {}: mean {m:.5}, variance {v:.3e} -> {}",
                cfg.tau + cfg.horizon,
                path.display()
            );
        }
        Command::Discrete { dtau, vartheta } => {
            if let Some(d) = dtau {
                cfg.dtau = *d;
            }
            if let Some(v) = vartheta {
                cfg.discrete.vartheta = *v;
            }
            single_run(&cfg, RunMethod::Discrete, out)?;
        }
        Command::Oracle { particles } => {
            if let Some(n) = particles {
                cfg.particles = *n;
            }
            single_run(&cfg, RunMethod::Oracle, out)?;
        }
        Command::Compare => {
            let summary = run_compare(&cfg, out)?;
            for r in &summary.rows {
                let vs = r.mae_vs_oracle.map(|x| format!(", vs oracle {x:.5}")).unwrap_or_default();
                println!(
                    "cell {} (theta0 {}, v0 {}, rho0 {}) {}: mae {:.5}{vs}",
                    r.cell.index, r.cell.theta0, r.cell.v0, r.cell.rho0, r.method, r.mae
                );
            }
            println!("summary -> {}", summary.summary_csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
