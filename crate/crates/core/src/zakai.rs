//! Grid solvers for the Zakai and Kushner–Stratonovich equations.
//!
//! The unnormalized density is held as `ς = e^{log_scale}·values` with
//! `values` rescaled to unit trapezoid mass after every step, so the
//! normalizer (of order `e^{10⁴}` on typical paths) never overflows.

use crate::error::{Error, Result};
use crate::grid::{build_grid, fp_step, normalize, posterior_stats, DensityKind, Generator, Grid, GridDensity, Stencil};
use crate::model::{ObsDriftCoeffs, TimeCoeffs};
use crate::params::ModelParams;
use crate::sim::{advance_mean_obs, ObsPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Zakai,
    Ks,
}

/// Time discretization of the Zakai equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZakaiScheme {
    /// Multiply by the exponential likelihood factor, then take a
    /// Fokker–Planck step. Positive by construction.
    #[default]
    Splitting,
    /// `ς + A*ς·dt + h₂ς·dX + h₃ς·dY`, floored at zero.
    Euler,
}

/// Time discretization of the Kushner–Stratonovich equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KsIntegrator {
    /// Innovation update in multiplicative form,
    /// `π·exp((h − π(h))(dY − δ²π(h)dt) − ½δ²(h − π(h))²dt)`, then
    /// a Fokker–Planck step and renormalization.
    #[default]
    Exponential,
    /// The additive innovation update
    /// `π + A*π·dt + (h − π(h))π·(dY − δ²π(h)dt)`, floored and renormalized.
    Euler,
}

/// Where the filter gets `X̄, Ȳ` for the likelihood coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XbarMode {
    /// Integrate the mean ODEs along the filter's own posterior mean.
    #[default]
    Reconstructed,
    /// Use the simulator's `X̄, Ȳ`.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSettings {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub method: Method,
    pub stencil: Stencil,
    pub zakai_scheme: ZakaiScheme,
    pub ks_integrator: KsIntegrator,
    pub xbar_mode: XbarMode,
    /// Keep every intermediate normalized density in the trace.
    pub keep_densities: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            x_min: 0.0,
            x_max: 1.0,
            dx: 0.1,
            method: Method::Zakai,
            stencil: Stencil::Upwind,
            zakai_scheme: ZakaiScheme::Splitting,
            ks_integrator: KsIntegrator::Exponential,
            xbar_mode: XbarMode::Reconstructed,
            keep_densities: false,
        }
    }
}

impl FilterSettings {
    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.x_min, self.x_max, self.dx)
    }
}

/// Mean observations `(X̄, Ȳ)` in force during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsContext {
    pub xbar: f64,
    pub ybar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRunState {
    pub t: f64,
    /// Node values scaled to unit trapezoid mass.
    pub density: GridDensity,
    /// `ln` of the factor that turns `density` back into `ς`.
    pub log_scale: f64,
}

impl FilterRunState {
    pub fn new(prior: &GridDensity, grid: &Grid) -> Result<Self> {
        if prior.values.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "prior has {} values for {} grid nodes",
                prior.values.len(),
                grid.len()
            )));
        }
        if prior.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Grid("prior density has negative or NaN values".into()));
        }
        let (pi, zeta) = normalize(prior, grid)?;
        Ok(FilterRunState {
            t: 0.0,
            density: GridDensity {
                values: pi.values,
                kind: DensityKind::Unnormalized,
            },
            log_scale: zeta.ln(),
        })
    }

    /// `ln ζ_t = ln ∫ς_t`.
    pub fn log_zeta(&self, grid: &Grid) -> f64 {
        self.log_scale + grid.integrate(&self.density.values).ln()
    }

    /// `ζ_t`; overflows to infinity on long runs, use [`Self::log_zeta`].
    pub fn zeta(&self, grid: &Grid) -> f64 {
        self.log_zeta(grid).exp()
    }

    /// The unnormalized density `ς` itself.
    pub fn sigma_values(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.density.values.iter().map(|v| v * s).collect()
    }

    pub fn normalized(&self, grid: &Grid) -> Result<GridDensity> {
        Ok(normalize(&self.density, grid)?.0)
    }

    /// Rescales to unit mass, folding the mass into `log_scale`.
    fn rescale(&mut self, grid: &Grid) -> Result<()> {
        let m = grid.integrate(&self.density.values);
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::FilterCollapse { t: self.t });
        }
        for v in &mut self.density.values {
            *v /= m;
        }
        self.log_scale += m.ln();
        Ok(())
    }
}

/// Bookkeeping of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub floored: usize,
    /// `|∫π − 1|` after the closing renormalization.
    pub norm_error: f64,
}

#[inline]
fn likelihood_coeffs(grid: &Grid, o: &ObsDriftCoeffs, params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let d2 = params.delta2 * params.delta2;
    let d3 = params.delta3 * params.delta3;
    grid.nodes.iter().map(|&x| (o.f(x) / d2, o.g(x) / d3)).unzip()
}

/// One step of the Zakai equation over `[state.t, state.t + dt]`.
#[allow(clippy::too_many_arguments)]
pub fn zakai_step(
    state: &mut FilterRunState,
    grid: &Grid,
    params: &ModelParams,
    d_x: f64,
    d_y: f64,
    dt: f64,
    ctx: ObsContext,
    scheme: ZakaiScheme,
    stencil: Stencil,
) -> Result<StepStats> {
    let t = state.t;
    let tc = TimeCoeffs::at(t, params);
    let (h2, h3) = likelihood_coeffs(grid, &tc.obs(ctx.xbar, ctx.ybar), params);
    let d2 = params.delta2 * params.delta2;
    let d3 = params.delta3 * params.delta3;
    let mut floored = 0;
    match scheme {
        ZakaiScheme::Splitting => {
            let e: Vec<f64> = h2
                .iter()
                .zip(&h3)
                .map(|(a, b)| a * d_x - 0.5 * d2 * a * a * dt + b * d_y - 0.5 * d3 * b * b * dt)
                .collect();
            let shift = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (v, ei) in state.density.values.iter_mut().zip(&e) {
                *v *= (ei - shift).exp();
            }
            state.log_scale += shift;
            // mass can be tiny after the likelihood; rescale before diffusing
            state.rescale(grid)?;
            floored += fp_step(&mut state.density.values, grid, t, dt, params, stencil).floored;
        }
        ZakaiScheme::Euler => {
            let gen = Generator::new(grid, &tc, stencil);
            let limit = 1.0 / gen.max_rate();
            if dt > limit {
                return Err(Error::Unstable { dt, limit });
            }
            let a = gen.apply_adjoint(&state.density.values);
            for (i, v) in state.density.values.iter_mut().enumerate() {
                let nv = *v + dt * a[i] + (h2[i] * d_x + h3[i] * d_y) * *v;
                *v = if nv < 0.0 {
                    floored += 1;
                    0.0
                } else {
                    nv
                };
            }
        }
    }
    state.t = t + dt;
    state.rescale(grid)?;
    Ok(StepStats {
        floored,
        norm_error: (grid.integrate(&state.density.values) - 1.0).abs(),
    })
}

/// One step of the Kushner–Stratonovich equation on a normalized density.
#[allow(clippy::too_many_arguments)]
pub fn ks_step(
    pi: &mut GridDensity,
    grid: &Grid,
    params: &ModelParams,
    t: f64,
    d_x: f64,
    d_y: f64,
    dt: f64,
    ctx: ObsContext,
    integrator: KsIntegrator,
    stencil: Stencil,
) -> Result<StepStats> {
    let tc = TimeCoeffs::at(t, params);
    let (h2, h3) = likelihood_coeffs(grid, &tc.obs(ctx.xbar, ctx.ybar), params);
    let d2 = params.delta2 * params.delta2;
    let d3 = params.delta3 * params.delta3;
    let mass = grid.integrate(&pi.values);
    let c2 = grid.integrate(&h2.iter().zip(&pi.values).map(|(h, p)| h * p).collect::<Vec<_>>()) / mass;
    let c3 = grid.integrate(&h3.iter().zip(&pi.values).map(|(h, p)| h * p).collect::<Vec<_>>()) / mass;
    let innov2 = d_x - d2 * c2 * dt;
    let innov3 = d_y - d3 * c3 * dt;
    let mut floored = 0;
    match integrator {
        KsIntegrator::Exponential => {
            let e: Vec<f64> = h2
                .iter()
                .zip(&h3)
                .map(|(a, b)| {
                    let (a, b) = (a - c2, b - c3);
                    a * innov2 - 0.5 * d2 * a * a * dt + b * innov3 - 0.5 * d3 * b * b * dt
                })
                .collect();
            let shift = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (v, ei) in pi.values.iter_mut().zip(&e) {
                *v *= (ei - shift).exp();
            }
            renormalize(pi, grid, t)?;
            floored += fp_step(&mut pi.values, grid, t, dt, params, stencil).floored;
        }
        KsIntegrator::Euler => {
            let gen = Generator::new(grid, &tc, stencil);
            let limit = 1.0 / gen.max_rate();
            if dt > limit {
                return Err(Error::Unstable { dt, limit });
            }
            let a = gen.apply_adjoint(&pi.values);
            for (i, v) in pi.values.iter_mut().enumerate() {
                let nv = *v + dt * a[i] + (h2[i] - c2) * *v * innov2 + (h3[i] - c3) * *v * innov3;
                *v = if nv < 0.0 {
                    floored += 1;
                    0.0
                } else {
                    nv
                };
            }
        }
    }
    renormalize(pi, grid, t + dt)?;
    Ok(StepStats {
        floored,
        norm_error: (grid.integrate(&pi.values) - 1.0).abs(),
    })
}

fn renormalize(pi: &mut GridDensity, grid: &Grid, t: f64) -> Result<()> {
    let m = grid.integrate(&pi.values);
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::FilterCollapse { t });
    }
    for v in &mut pi.values {
        *v /= m;
    }
    pi.kind = DensityKind::Normalized;
    Ok(())
}

/// Everything recorded along a continuous-time filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `ln ζ_t` from the grid integral of `ς` (Zakai runs only; zero for KS).
    pub log_zeta: Vec<f64>,
    /// `ln ζ_t` accumulated from the closed-form exponential
    /// `∫π(h₂)dX + ∫π(h₃)dY − ½∫δ₂²π(h₂)² + δ₃²π(h₃)² ds`.
    pub log_zeta_closed: Vec<f64>,
    /// `X̄, Ȳ` used at each step (length = steps).
    pub xbar_used: Vec<f64>,
    pub ybar_used: Vec<f64>,
    pub floored: usize,
    pub node_steps: usize,
    pub max_norm_error: f64,
    /// Normalized densities at every recorded time, if requested.
    pub densities: Vec<Vec<f64>>,
    pub final_density: GridDensity,
    pub final_log_scale: f64,
}

impl FilterTrace {
    pub fn floor_rate(&self) -> f64 {
        self.floored as f64 / self.node_steps.max(1) as f64
    }
}

/// Runs the continuous-time filter over the whole observation path.
pub fn run_filter(
    obs: &ObsPath,
    params: &ModelParams,
    settings: &FilterSettings,
    prior: &GridDensity,
) -> Result<FilterTrace> {
    run_filter_until(obs, params, settings, prior, obs.n_steps())
}

/// Runs the filter over the first `steps` observation increments.
pub fn run_filter_until(
    obs: &ObsPath,
    params: &ModelParams,
    settings: &FilterSettings,
    prior: &GridDensity,
    steps: usize,
) -> Result<FilterTrace> {
    params.validate()?;
    let grid = settings.grid()?;
    let steps = steps.min(obs.n_steps());
    let dt = obs.dt;
    let mut state = FilterRunState::new(prior, &grid)?;
    let mut pi = state.normalized(&grid)?;

    let (m0, v0) = posterior_stats(&pi, &grid);
    let mut trace = FilterTrace {
        times: vec![0.0],
        mean: vec![m0],
        var: vec![v0],
        log_zeta: vec![state.log_zeta(&grid)],
        log_zeta_closed: vec![state.log_zeta(&grid)],
        xbar_used: Vec::with_capacity(steps),
        ybar_used: Vec::with_capacity(steps),
        floored: 0,
        node_steps: 0,
        max_norm_error: (grid.integrate(&pi.values) - 1.0).abs(),
        densities: Vec::new(),
        final_density: pi.clone(),
        final_log_scale: state.log_scale,
    };
    if settings.keep_densities {
        trace.densities.push(pi.values.clone());
    }

    let d2 = params.delta2 * params.delta2;
    let d3 = params.delta3 * params.delta3;
    let (mut xb, mut yb) = (obs.x[0], obs.y[0]);
    let mut log_closed = trace.log_zeta_closed[0];

    for k in 0..steps {
        let t = k as f64 * dt;
        if settings.xbar_mode == XbarMode::Oracle {
            xb = obs.xbar[k];
            yb = obs.ybar[k];
        }
        let ctx = ObsContext { xbar: xb, ybar: yb };
        trace.xbar_used.push(xb);
        trace.ybar_used.push(yb);

        // closed-form normalizer increment under π_t
        let o = TimeCoeffs::at(t, params).obs(xb, yb);
        let c2 = grid.integrate_with(&pi.values, |x| o.f(x)) / d2;
        let c3 = grid.integrate_with(&pi.values, |x| o.g(x)) / d3;
        log_closed += c2 * obs.dx[k] + c3 * obs.dy[k] - 0.5 * (d2 * c2 * c2 + d3 * c3 * c3) * dt;

        let mean_before = trace.mean[k];
        let stats = match settings.method {
            Method::Zakai => {
                let s = zakai_step(
                    &mut state,
                    &grid,
                    params,
                    obs.dx[k],
                    obs.dy[k],
                    dt,
                    ctx,
                    settings.zakai_scheme,
                    settings.stencil,
                )?;
                pi = state.normalized(&grid)?;
                s
            }
            Method::Ks => ks_step(
                &mut pi,
                &grid,
                params,
                t,
                obs.dx[k],
                obs.dy[k],
                dt,
                ctx,
                settings.ks_integrator,
                settings.stencil,
            )?,
        };
        let norm_error = (grid.integrate(&pi.values) - 1.0).abs();
        trace.floored += stats.floored;
        trace.node_steps += grid.len();
        trace.max_norm_error = trace.max_norm_error.max(norm_error).max(stats.norm_error);

        let (m, v) = posterior_stats(&pi, &grid);
        trace.times.push((k + 1) as f64 * dt);
        trace.mean.push(m);
        trace.var.push(v);
        trace.log_zeta.push(match settings.method {
            Method::Zakai => state.log_zeta(&grid),
            Method::Ks => 0.0,
        });
        trace.log_zeta_closed.push(log_closed);
        if settings.keep_densities {
            trace.densities.push(pi.values.clone());
        }

        if settings.xbar_mode == XbarMode::Reconstructed {
            let (nx, ny) = advance_mean_obs(t, dt, xb, yb, mean_before, m, params);
            if nx.is_finite() {
                xb = nx;
            }
            if ny.is_finite() {
                yb = ny;
            }
        }
    }
    trace.final_density = pi;
    trace.final_log_scale = state.log_scale;
    Ok(trace)
}

/// Final filter state after `steps` increments, for handing to the predictor.
pub fn filter_state_at(
    obs: &ObsPath,
    params: &ModelParams,
    settings: &FilterSettings,
    prior: &GridDensity,
    steps: usize,
) -> Result<(FilterRunState, FilterTrace)> {
    let settings = FilterSettings {
        method: Method::Zakai,
        ..settings.clone()
    };
    let trace = run_filter_until(obs, params, &settings, prior, steps)?;
    let state = FilterRunState {
        t: *trace.times.last().unwrap(),
        density: GridDensity {
            values: trace.final_density.values.clone(),
            kind: DensityKind::Unnormalized,
        },
        log_scale: trace.final_log_scale,
    };
    Ok((state, trace))
}
