//! Prediction of the conditional law past the last observation.
//!
//! Beyond `τ` the filter equations lose their observation terms, so the law
//! evolves under the Fokker–Planck operator alone.

use crate::error::{Error, Result};
use crate::grid::{fp_step, normalize, posterior_stats, Grid, GridDensity, Stencil};
use crate::params::ModelParams;
use crate::sim::ObsPath;
use crate::zakai::{filter_state_at, FilterRunState, FilterSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    pub tau: f64,
    pub horizon: f64,
    pub base: FilterRunState,
}

/// Step lengths covering `horizon`, the last one shortened to land exactly.
fn step_sizes(horizon: f64, dt: f64) -> Vec<f64> {
    let full = (horizon / dt * (1.0 + 1e-12)).floor() as usize;
    let mut steps = vec![dt; full];
    let rest = horizon - full as f64 * dt;
    if rest > 1e-12 * dt {
        steps.push(rest);
    }
    steps
}

/// Normalized density at `τ + horizon`.
pub fn predict(
    req: &PredictionRequest,
    grid: &Grid,
    dt: f64,
    params: &ModelParams,
    stencil: Stencil,
) -> Result<GridDensity> {
    if !(req.horizon >= 0.0 && req.horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be >= 0"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be > 0"));
    }
    let mut values = req.base.density.values.clone();
    let mut t = req.tau;
    for h in step_sizes(req.horizon, dt) {
        fp_step(&mut values, grid, t, h, params, stencil);
        t += h;
    }
    let mass = grid.integrate(&values);
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::FilterCollapse { t });
    }
    Ok(normalize(&GridDensity::unnormalized(values), grid)?.0)
}

/// Filters the observations on `[0, τ]`, then predicts `horizon` ahead.
/// Increments after `τ` are never read.
pub fn filter_then_predict(
    obs: &ObsPath,
    params: &ModelParams,
    settings: &FilterSettings,
    prior: &GridDensity,
    tau: f64,
    horizon: f64,
) -> Result<GridDensity> {
    let steps = (tau / obs.dt).round() as usize;
    if steps > obs.n_steps() {
        return Err(Error::invalid("tau", "beyond the end of the observations"));
    }
    let (base, _) = filter_state_at(obs, params, settings, prior, steps)?;
    let grid = settings.grid()?;
    let req = PredictionRequest {
        tau: base.t,
        horizon,
        base,
    };
    predict(&req, &grid, obs.dt, params, settings.stencil)
}

/// Posterior means of the observation-blind filter: the prior pushed
/// forward by the Fokker–Planck operator, recorded every `dt`.
pub fn blind_means(
    prior: &GridDensity,
    grid: &Grid,
    params: &ModelParams,
    dt: f64,
    n_steps: usize,
    stencil: Stencil,
) -> Result<Vec<f64>> {
    let (pi, _) = normalize(prior, grid)?;
    let mut values = pi.values;
    let mut means = Vec::with_capacity(n_steps + 1);
    means.push(posterior_stats(&GridDensity::unnormalized(values.clone()), grid).0);
    for k in 0..n_steps {
        fp_step(&mut values, grid, k as f64 * dt, dt, params, stencil);
        let (pi, _) = normalize(&GridDensity::unnormalized(values.clone()), grid)
            .map_err(|_| Error::FilterCollapse { t: (k + 1) as f64 * dt })?;
        means.push(posterior_stats(&pi, grid).0);
        values = pi.values;
    }
    Ok(means)
}
