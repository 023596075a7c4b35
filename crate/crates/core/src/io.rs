//! CSV persistence of runs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::{ObsPath, TruthPath};

pub const RUN_HEADER: [&str; 10] = [
    "time",
    "theta_true",
    "v_true",
    "rho_true",
    "X",
    "Y",
    "post_mean",
    "post_var",
    "rel_abs_err",
    "zeta",
];

pub const TRUTH_HEADER: [&str; 8] = ["time", "theta", "v", "rho", "Xbar", "Ybar", "X", "Y"];

/// Filter output at a subset of simulator time indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Indices into the truth/observation time grid, increasing from 0.
    pub indices: Vec<usize>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `ln ζ` at each index. The normalizer itself overflows `f64` on
    /// ordinary runs, so the `zeta` column stores its logarithm.
    pub log_zeta: Vec<f64>,
}

impl RunOutput {
    /// Output recorded at every simulator step.
    pub fn dense(mean: Vec<f64>, var: Vec<f64>, log_zeta: Vec<f64>) -> Self {
        RunOutput {
            indices: (0..mean.len()).collect(),
            mean,
            var,
            log_zeta,
        }
    }

    /// Mean absolute and maximum error of the posterior mean against `theta`.
    pub fn errors(&self, theta: &[f64]) -> (f64, f64) {
        let errs: Vec<f64> = self
            .indices
            .iter()
            .zip(&self.mean)
            .skip(1)
            .map(|(&i, m)| (m - theta[i]).abs())
            .collect();
        let n = errs.len().max(1) as f64;
        (errs.iter().sum::<f64>() / n, errs.iter().cloned().fold(0.0, f64::max))
    }
}

pub fn rel_abs_err(mean: f64, truth: f64) -> f64 {
    (mean - truth).abs() / truth.max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub time: f64,
    pub theta_true: f64,
    pub v_true: f64,
    pub rho_true: f64,
    pub x: f64,
    pub y: f64,
    pub post_mean: f64,
    pub post_var: f64,
    pub rel_abs_err: f64,
    pub zeta: f64,
}

/// Rows of a run, one per recorded step after the initial time.
pub fn run_rows(truth: &TruthPath, obs: &ObsPath, out: &RunOutput, stride: usize) -> Result<Vec<RunRow>> {
    let lens = [out.indices.len(), out.mean.len(), out.var.len(), out.log_zeta.len()];
    if lens.iter().any(|&l| l != lens[0]) {
        return Err(Error::Mismatch(format!("filter output columns have lengths {lens:?}")));
    }
    if truth.times.len() != obs.times.len() {
        return Err(Error::Mismatch("truth and observation grids differ".into()));
    }
    let stride = stride.max(1);
    let mut rows = Vec::new();
    for (j, &i) in out.indices.iter().enumerate() {
        if i == 0 || i % stride != 0 {
            continue;
        }
        if i >= truth.times.len() {
            return Err(Error::Mismatch(format!("output index {i} beyond the time grid")));
        }
        rows.push(RunRow {
            time: truth.times[i],
            theta_true: truth.theta[i],
            v_true: truth.v[i],
            rho_true: truth.rho[i],
            x: obs.x[i],
            y: obs.y[i],
            post_mean: out.mean[j],
            post_var: out.var[j],
            rel_abs_err: rel_abs_err(out.mean[j], truth.theta[i]),
            zeta: out.log_zeta[j],
        });
    }
    Ok(rows)
}

pub fn write_run_csv(path: &Path, truth: &TruthPath, obs: &ObsPath, out: &RunOutput, stride: usize) -> Result<()> {
    let rows = run_rows(truth, obs, out, stride)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_HEADER)?;
    for r in &rows {
        w.write_record(
            [
                r.time,
                r.theta_true,
                r.v_true,
                r.rho_true,
                r.x,
                r.y,
                r.post_mean,
                r.post_var,
                r.rel_abs_err,
                r.zeta,
            ]
            .iter()
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RUN_HEADER {
        return Err(Error::Mismatch(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut v = [0.0; 10];
        for (k, field) in rec.iter().enumerate().take(10) {
            v[k] = field
                .parse()
                .map_err(|_| Error::Mismatch(format!("column {} holds `{field}`", RUN_HEADER[k])))?;
        }
        rows.push(RunRow {
            time: v[0],
            theta_true: v[1],
            v_true: v[2],
            rho_true: v[3],
            x: v[4],
            y: v[5],
            post_mean: v[6],
            post_var: v[7],
            rel_abs_err: v[8],
            zeta: v[9],
        });
    }
    Ok(rows)
}

/// Truth and observation paths, every `stride`-th step including `t = 0`.
pub fn write_truth_csv(path: &Path, truth: &TruthPath, obs: &ObsPath, stride: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRUTH_HEADER)?;
    for i in (0..truth.times.len()).step_by(stride.max(1)) {
        w.write_record(
            [
                truth.times[i],
                truth.theta[i],
                truth.v[i],
                truth.rho[i],
                obs.xbar[i],
                obs.ybar[i],
                obs.x[i],
                obs.y[i],
            ]
            .iter()
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}
