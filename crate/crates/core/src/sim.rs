//! Seeded simulation of the hidden state and of the observations.
//!
//! The state is advanced with a drift-implicit ϑ-scheme: the linear part of
//! each drift is split between the old and the new value, which keeps the
//! stiff volume equation (relaxation rate up to `β/ε`) inside its interval
//! without clamping. `vartheta = 0` is plain Euler–Maruyama. Every component
//! is clamped to its closed interval after each step and clamp events are
//! counted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{logit, TimeCoeffs};
use crate::params::ModelParams;

/// Stream offsets of the three Brownian motions (θ, v, ρ).
pub const STREAM_THETA: u64 = 1;
pub const STREAM_VOLUME: u64 = 2;
pub const STREAM_ROT: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub theta0: f64,
    pub v0: f64,
    pub rho0: f64,
    /// Output decimation for persisted runs; paths are always kept at full
    /// resolution in memory.
    pub record_stride: usize,
    /// Implicitness of the drift, in `[0, 1]`.
    pub vartheta: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_end: 1.0,
            dt: 1e-3,
            seed: 0,
            theta0: 0.05,
            v0: 0.5,
            rho0: 0.25,
            record_stride: 1,
            vartheta: 0.5,
        }
    }
}

impl SimConfig {
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::invalid("t_end", "must be >= dt"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.vartheta) {
            return Err(Error::invalid("vartheta", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.theta0) {
            return Err(Error::invalid("theta0", "must lie in [0, 1]"));
        }
        if !(0.0..=params.v_max).contains(&self.v0) {
            return Err(Error::invalid("v0", "must lie in [0, v_max]"));
        }
        if !(0.0..=1.0).contains(&self.rho0) {
            return Err(Error::invalid("rho0", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Brownian increments of one component, `n` steps of size `dt`.
pub fn brownian_increments(seed: u64, stream: u64, n: usize, dt: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let sd = dt.sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthPath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub rho: Vec<f64>,
    /// Increments of `B¹, B², B³`, one per step.
    pub db: [Vec<f64>; 3],
    /// Steps on which at least one component was clamped.
    pub clamped_steps: usize,
    /// Largest distance by which a pre-clamp value left its interval
    /// (volume measured in units of `v_max`).
    pub max_overshoot: f64,
    /// Largest ratio of an overshoot to `5·max(δ)·√dt + max|f|·dt` at its step.
    pub max_overshoot_ratio: f64,
}

impl TruthPath {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn clamped_fraction(&self) -> f64 {
        self.clamped_steps as f64 / self.n_steps().max(1) as f64
    }
}

/// One ϑ-scheme step of the inhibition rate, before clamping.
///
/// `tc` must be evaluated at `t + ϑ·dt`.
#[inline]
pub fn theta_step(tc: &TimeCoeffs, theta: f64, db: f64, dt: f64, vartheta: f64) -> f64 {
    let num = theta + dt * tc.alpha * (1.0 - (1.0 - vartheta) * tc.w * theta)
        + tc.theta_diffusion(theta) * db;
    num / (1.0 + vartheta * dt * tc.alpha * tc.w)
}

#[inline]
fn volume_step(tc: &TimeCoeffs, theta: f64, v: f64, db: f64, dt: f64, vartheta: f64) -> f64 {
    let k = tc.volume_rate(theta);
    let num = v + dt * (tc.beta - (1.0 - vartheta) * k * v) + tc.volume_diffusion(v) * db;
    num / (1.0 + vartheta * dt * k)
}

#[inline]
fn rot_step(tc: &TimeCoeffs, theta: f64, v: f64, rho: f64, db: f64, dt: f64, vartheta: f64) -> f64 {
    let g = tc.gamma(theta, v, rho);
    let num = rho + dt * g * (1.0 - (1.0 - vartheta) * rho) + tc.rot_diffusion(rho) * db;
    num / (1.0 + vartheta * dt * g)
}

fn overshoot(x: f64, upper: f64) -> f64 {
    if x < 0.0 {
        -x
    } else if x > upper {
        x - upper
    } else {
        0.0
    }
}

pub fn simulate_truth(config: &SimConfig, params: &ModelParams) -> Result<TruthPath> {
    config.validate(params)?;
    params.validate()?;
    let n = config.n_steps();
    let db = [
        brownian_increments(config.seed, STREAM_THETA, n, config.dt),
        brownian_increments(config.seed, STREAM_VOLUME, n, config.dt),
        brownian_increments(config.seed, STREAM_ROT, n, config.dt),
    ];
    Ok(simulate_truth_with(config, params, db))
}

/// Runs the scheme on caller-supplied Brownian increments.
pub fn simulate_truth_with(config: &SimConfig, params: &ModelParams, db: [Vec<f64>; 3]) -> TruthPath {
    let n = db[0].len();
    let dt = config.dt;
    let m = config.vartheta;
    let mut times = Vec::with_capacity(n + 1);
    let mut theta = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    let mut rho = Vec::with_capacity(n + 1);
    times.push(0.0);
    theta.push(config.theta0);
    v.push(config.v0);
    rho.push(config.rho0);
    let delta_max = params.delta1.max(params.delta2).max(params.delta3);
    let mut clamped_steps = 0;
    let mut max_overshoot = 0.0f64;
    let mut max_ratio = 0.0f64;

    for k in 0..n {
        let t = k as f64 * dt;
        let tc = TimeCoeffs::at(t + m * dt, params);
        let (th, vv, r) = (theta[k], v[k], rho[k]);
        let th1 = theta_step(&tc, th, db[0][k], dt, m);
        let v1 = volume_step(&tc, th, vv, db[1][k], dt, m);
        let r1 = rot_step(&tc, th, vv, r, db[2][k], dt, m);

        let over = overshoot(th1, 1.0)
            .max(overshoot(v1, params.v_max) / params.v_max)
            .max(overshoot(r1, 1.0));
        if over > 0.0 {
            clamped_steps += 1;
            max_overshoot = max_overshoot.max(over);
            let f = tc
                .theta_drift(th)
                .abs()
                .max((tc.volume_drift(th, vv) / params.v_max).abs())
                .max(tc.rot_drift(th, vv, r).abs());
            let bound = 5.0 * delta_max * dt.sqrt() + f * dt;
            max_ratio = max_ratio.max(over / bound);
        }
        times.push((k + 1) as f64 * dt);
        theta.push(th1.clamp(0.0, 1.0));
        v.push(v1.clamp(0.0, params.v_max));
        rho.push(r1.clamp(0.0, 1.0));
    }

    TruthPath {
        dt,
        times,
        theta,
        v,
        rho,
        db,
        clamped_steps,
        max_overshoot,
        max_overshoot_ratio: max_ratio,
    }
}

/// Noise-free observation means along a truth path.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanObsPath {
    pub v_bar: Vec<f64>,
    pub rho_bar: Vec<f64>,
    pub xbar: Vec<f64>,
    pub ybar: Vec<f64>,
    /// Steps on which `v̄` or `ρ̄` would have left its open interval and was
    /// held at its previous value instead.
    pub boundary_hits: usize,
}

/// RK4 substeps needed for a step of length `dt` given a stiffness bound.
pub(crate) fn rk4_substeps(rate: f64, dt: f64) -> usize {
    let n = (rate * dt / 1.5).ceil();
    if n.is_finite() {
        (n as usize).clamp(1, 100_000)
    } else {
        100_000
    }
}

#[inline]
fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// Integrates `v̄, ρ̄` conditioned on the θ path, then maps through the logit.
///
/// `θ` is interpolated linearly inside each step. On steps where the truth
/// volume (rot) is at zero the corresponding mean is frozen.
pub fn integrate_mean_obs(truth: &TruthPath, params: &ModelParams) -> Result<MeanObsPath> {
    let n = truth.n_steps();
    let dt = truth.dt;
    let mut vb = truth.v[0];
    let mut rb = truth.rho[0];
    let (x0, y0) = crate::model::to_obs_coords(vb, rb, params)?;
    let mut out = MeanObsPath {
        v_bar: vec![vb],
        rho_bar: vec![rb],
        xbar: vec![x0],
        ybar: vec![y0],
        boundary_hits: 0,
    };

    for k in 0..n {
        let t0 = truth.times[k];
        let (th0, th1) = (truth.theta[k], truth.theta[k + 1]);
        let freeze_v = truth.v[k] <= 0.0;
        let freeze_r = truth.rho[k] <= 0.0;
        let nsub = mean_obs_substeps(t0, dt, th0.max(th1), params);
        let h = dt / nsub as f64;

        let rhs = |t: f64, v: f64, r: f64| -> (f64, f64) {
            let tc = TimeCoeffs::at(t, params);
            let th = lerp(th0, th1, (t - t0) / dt);
            let dv = if freeze_v { 0.0 } else { tc.volume_drift(th, v) };
            let dr = if freeze_r { 0.0 } else { tc.rot_drift(th, v, r) };
            (dv, dr)
        };

        let (mut v, mut r) = (vb, rb);
        for j in 0..nsub {
            let t = t0 + j as f64 * h;
            let k1 = rhs(t, v, r);
            let k2 = rhs(t + h / 2.0, v + h / 2.0 * k1.0, r + h / 2.0 * k1.1);
            let k3 = rhs(t + h / 2.0, v + h / 2.0 * k2.0, r + h / 2.0 * k2.1);
            let k4 = rhs(t + h, v + h * k3.0, r + h * k3.1);
            v += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            r += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        let mut hit = false;
        if v > 0.0 && v < params.v_max {
            vb = v;
        } else {
            hit = true;
        }
        if r > 0.0 && r < 1.0 {
            rb = r;
        } else {
            hit = true;
        }
        out.boundary_hits += hit as usize;
        out.v_bar.push(vb);
        out.rho_bar.push(rb);
        out.xbar.push(logit(vb / params.v_max));
        out.ybar.push(logit(rb));
    }
    Ok(out)
}

fn mean_obs_substeps(t0: f64, dt: f64, theta_max: f64, params: &ModelParams) -> usize {
    let mut rate = 0.0f64;
    for s in [0.0, 0.5, 1.0] {
        let tc = TimeCoeffs::at(t0 + s * dt, params);
        let theta = theta_max.min(1.0);
        rate = rate.max(tc.volume_rate(theta)).max(tc.gamma_amp.abs() * params.v_max * 2.0);
    }
    rk4_substeps(rate, dt)
}

/// Right-hand side of the mean-observation ODEs in logit coordinates.
#[inline]
pub fn mean_obs_rhs(t: f64, xbar: f64, ybar: f64, theta: f64, params: &ModelParams) -> (f64, f64) {
    let o = TimeCoeffs::at(t, params).obs(xbar, ybar);
    (o.f(theta), o.g(theta))
}

/// One step of the logit-form mean ODEs over `[t0, t0 + dt]` with `θ`
/// interpolated between `theta0` and `theta1`.
pub fn advance_mean_obs(
    t0: f64,
    dt: f64,
    xbar: f64,
    ybar: f64,
    theta0: f64,
    theta1: f64,
    params: &ModelParams,
) -> (f64, f64) {
    let nsub = mean_obs_substeps(t0, dt, theta0.max(theta1), params);
    let h = dt / nsub as f64;
    let rhs = |t: f64, x: f64, y: f64| mean_obs_rhs(t, x, y, lerp(theta0, theta1, (t - t0) / dt), params);
    let (mut x, mut y) = (xbar, ybar);
    for j in 0..nsub {
        let t = t0 + j as f64 * h;
        let k1 = rhs(t, x, y);
        let k2 = rhs(t + h / 2.0, x + h / 2.0 * k1.0, y + h / 2.0 * k1.1);
        let k3 = rhs(t + h / 2.0, x + h / 2.0 * k2.0, y + h / 2.0 * k2.1);
        let k4 = rhs(t + h, x + h * k3.0, y + h * k3.1);
        x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        y += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (x, y)
}

/// Direct integration of the logit-form ODEs along the truth θ path.
pub fn integrate_mean_obs_direct(truth: &TruthPath, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut x, mut y) = crate::model::to_obs_coords(truth.v[0], truth.rho[0], params)?;
    let n = truth.n_steps();
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    xs.push(x);
    ys.push(y);
    for k in 0..n {
        let (nx, ny) = advance_mean_obs(
            truth.times[k],
            truth.dt,
            x,
            y,
            truth.theta[k],
            truth.theta[k + 1],
            params,
        );
        if truth.v[k] > 0.0 && nx.is_finite() {
            x = nx;
        }
        if truth.rho[k] > 0.0 && ny.is_finite() {
            y = ny;
        }
        xs.push(x);
        ys.push(y);
    }
    Ok((xs, ys))
}

/// Transformed observations `X = X̄ + δ₂B²`, `Y = Ȳ + δ₃B³`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsPath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub xbar: Vec<f64>,
    pub ybar: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl ObsPath {
    pub fn n_steps(&self) -> usize {
        self.dx.len()
    }

    /// Copy restricted to the first `n` steps.
    pub fn truncated(&self, n: usize) -> ObsPath {
        let n = n.min(self.n_steps());
        ObsPath {
            dt: self.dt,
            times: self.times[..=n].to_vec(),
            xbar: self.xbar[..=n].to_vec(),
            ybar: self.ybar[..=n].to_vec(),
            x: self.x[..=n].to_vec(),
            y: self.y[..=n].to_vec(),
            dx: self.dx[..n].to_vec(),
            dy: self.dy[..n].to_vec(),
        }
    }
}

/// Adds observation noise to the mean path.
///
/// The noise is driven by the same `B²`, `B³` streams as the volume and rot
/// equations of the truth run with `config.seed`.
pub fn simulate_observations(mean: &MeanObsPath, config: &SimConfig, params: &ModelParams) -> ObsPath {
    let n = mean.xbar.len() - 1;
    let b2 = brownian_increments(config.seed, STREAM_VOLUME, n, config.dt);
    let b3 = brownian_increments(config.seed, STREAM_ROT, n, config.dt);
    observations_with(mean, config.dt, params, &b2, &b3)
}

pub fn observations_with(
    mean: &MeanObsPath,
    dt: f64,
    params: &ModelParams,
    b2: &[f64],
    b3: &[f64],
) -> ObsPath {
    let n = mean.xbar.len() - 1;
    let mut x = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n + 1);
    let (mut w2, mut w3) = (0.0, 0.0);
    x.push(mean.xbar[0]);
    y.push(mean.ybar[0]);
    for k in 0..n {
        w2 += params.delta2 * b2[k];
        w3 += params.delta3 * b3[k];
        x.push(mean.xbar[k + 1] + w2);
        y.push(mean.ybar[k + 1] + w3);
    }
    let dx = x.windows(2).map(|p| p[1] - p[0]).collect();
    let dy = y.windows(2).map(|p| p[1] - p[0]).collect();
    ObsPath {
        dt,
        times: (0..=n).map(|k| k as f64 * dt).collect(),
        xbar: mean.xbar.clone(),
        ybar: mean.ybar.clone(),
        x,
        y,
        dx,
        dy,
    }
}

/// Truth, means and observations for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub truth: TruthPath,
    pub mean: MeanObsPath,
    pub obs: ObsPath,
}

pub fn simulate_scenario(config: &SimConfig, params: &ModelParams) -> Result<Scenario> {
    let truth = simulate_truth(config, params)?;
    let mean = integrate_mean_obs(&truth, params)?;
    let obs = observations_with(&mean, config.dt, params, &truth.db[1], &truth.db[2]);
    Ok(Scenario { truth, mean, obs })
}
