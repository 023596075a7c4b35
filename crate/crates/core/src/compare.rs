//! Scenario matrix runs: one simulated path per cell, every requested
//! method on that same path.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{RunMethod, ScenarioConfig};
use crate::discrete::{every_kth, run_discrete};
use crate::error::{Error, Result};
use crate::io::{write_run_csv, RunOutput};
use crate::particle::{pf_run, PfSettings};
use crate::sim::{simulate_scenario, Scenario, SimConfig};
use crate::zakai::{run_filter, FilterSettings, Method};

/// SplitMix64 finalizer; mixes `(seed, cell)` into a per-cell seed.
pub fn cell_seed(master: u64, cell: usize) -> u64 {
    let mut z = master ^ (cell as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one method on a simulated scenario.
pub fn run_method(method: RunMethod, scenario: &Scenario, cfg: &ScenarioConfig) -> Result<RunOutput> {
    let grid = cfg.filter.grid()?;
    let prior = cfg.prior.density(&grid);
    match method {
        RunMethod::Zakai | RunMethod::Ks => {
            let settings = FilterSettings {
                method: if method == RunMethod::Ks { Method::Ks } else { Method::Zakai },
                keep_densities: false,
                ..cfg.filter.clone()
            };
            let tr = run_filter(&scenario.obs, &cfg.params, &settings, &prior)?;
            let lz = if method == RunMethod::Ks { tr.log_zeta_closed } else { tr.log_zeta };
            Ok(RunOutput::dense(tr.mean, tr.var, lz))
        }
        RunMethod::Discrete => {
            let k = cfg.dtau_steps()?;
            let idx = every_kth(scenario.obs.n_steps(), k);
            let tr = run_discrete(&scenario.obs, &cfg.params, &cfg.filter, &cfg.discrete, &idx, &prior.values)?;
            Ok(RunOutput {
                indices: idx,
                mean: tr.mean,
                var: tr.var,
                log_zeta: tr.log_zeta,
            })
        }
        RunMethod::Oracle => {
            let settings = PfSettings {
                n_particles: cfg.particles,
                seed: scenario_seed_for_particles(cfg.sim.seed),
                init: cfg.prior.particles(),
                xbar_mode: cfg.filter.xbar_mode,
                vartheta: cfg.sim.vartheta,
                resample_threshold: 0.5,
            };
            let tr = pf_run(&scenario.obs, &cfg.params, &settings)?;
            Ok(RunOutput::dense(tr.mean, tr.var, tr.log_zeta))
        }
    }
}

/// The particle filter draws from its own seed so that it never shares
/// random numbers with the simulated path.
fn scenario_seed_for_particles(seed: u64) -> u64 {
    cell_seed(seed, usize::MAX >> 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub theta0: f64,
    pub v0: f64,
    pub rho0: f64,
    pub seed: u64,
}

pub fn cells(cfg: &ScenarioConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &theta0 in &cfg.theta0_list {
        for &v0 in &cfg.v0_list {
            for &rho0 in &cfg.rho0_list {
                let index = out.len();
                out.push(Cell {
                    index,
                    theta0,
                    v0,
                    rho0,
                    seed: cell_seed(cfg.sim.seed, index),
                });
            }
        }
    }
    out
}

impl Cell {
    pub fn sim_config(&self, base: &SimConfig) -> SimConfig {
        SimConfig {
            theta0: self.theta0,
            v0: self.v0,
            rho0: self.rho0,
            seed: self.seed,
            ..base.clone()
        }
    }

    pub fn file_stem(&self) -> String {
        format!("cell{:02}_theta{}_v{}_rho{}", self.index, self.theta0, self.v0, self.rho0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: Cell,
    pub method: RunMethod,
    pub mae: f64,
    pub max_err: f64,
    /// Mean absolute gap to the particle filter's posterior mean, when the
    /// particle filter was among the methods.
    pub mae_vs_oracle: Option<f64>,
    pub csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub rows: Vec<SummaryRow>,
    pub summary_csv: PathBuf,
}

fn mae_between(a: &RunOutput, b: &RunOutput) -> Option<f64> {
    // compare on the indices both outputs share, excluding t = 0
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut j = 0;
    for (i, &ia) in a.indices.iter().enumerate() {
        while j < b.indices.len() && b.indices[j] < ia {
            j += 1;
        }
        if ia > 0 && j < b.indices.len() && b.indices[j] == ia {
            sum += (a.mean[i] - b.mean[j]).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Simulates every cell of the scenario matrix, runs each method on it and
/// writes one CSV per (cell, method) plus `summary.csv` into `out_dir`.
pub fn run_compare(cfg: &ScenarioConfig, out_dir: &Path) -> Result<CompareSummary> {
    cfg.validate()?;
    if cfg.methods.is_empty() {
        return Err(Error::config("methods", "list must not be empty"));
    }
    if cfg.methods.contains(&RunMethod::Discrete) {
        cfg.dtau_steps()?;
    }
    std::fs::create_dir_all(out_dir)?;
    let cells = cells(cfg);

    let per_cell: Vec<Result<Vec<SummaryRow>>> = cells
        .par_iter()
        .map(|cell| {
            let sim = cell.sim_config(&cfg.sim);
            let scenario = simulate_scenario(&sim, &cfg.params)?;
            let cell_cfg = ScenarioConfig {
                sim: sim.clone(),
                ..cfg.clone()
            };
            let mut outputs = Vec::new();
            for &m in &cfg.methods {
                let out = run_method(m, &scenario, &cell_cfg)?;
                let csv = out_dir.join(format!("{}_{}.csv", cell.file_stem(), m));
                write_run_csv(&csv, &scenario.truth, &scenario.obs, &out, cfg.sim.record_stride)?;
                outputs.push((m, out, csv));
            }
            let oracle = outputs.iter().find(|(m, _, _)| *m == RunMethod::Oracle).map(|o| o.1.clone());
            Ok(outputs
                .into_iter()
                .map(|(method, out, csv)| {
                    let (mae, max_err) = out.errors(&scenario.truth.theta);
                    let mae_vs_oracle = match (&oracle, method) {
                        (Some(o), m) if m != RunMethod::Oracle => mae_between(&out, o),
                        _ => None,
                    };
                    SummaryRow {
                        cell: *cell,
                        method,
                        mae,
                        max_err,
                        mae_vs_oracle,
                        csv,
                    }
                })
                .collect())
        })
        .collect();

    let mut rows = Vec::new();
    for r in per_cell {
        rows.extend(r?);
    }
    let summary_csv = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_csv)?;
    w.write_record(["cell", "theta0", "v0", "rho0", "seed", "method", "mae", "max_err", "mae_vs_oracle", "file"])?;
    for r in &rows {
        w.write_record([
            r.cell.index.to_string(),
            r.cell.theta0.to_string(),
            r.cell.v0.to_string(),
            r.cell.rho0.to_string(),
            r.cell.seed.to_string(),
            r.method.to_string(),
            r.mae.to_string(),
            r.max_err.to_string(),
            r.mae_vs_oracle.map(|x| x.to_string()).unwrap_or_default(),
            r.csv.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(CompareSummary { rows, summary_csv })
}
