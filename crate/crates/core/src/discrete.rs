//! Filter for observations available only at discrete times.
//!
//! The signal kernel between two observation times is one step of the
//! ϑ-method for the inhibition rate,
//! `θₙ₊₁ = (x + Δτ·αₙ(1 − wₙ(1 − ϑ)x) + √Δτ·g₁(x)ξ)/(1 + Δτ·αₙwₙϑ)`,
//! integrated against `ξ ~ N(0, 1)` with Gauss–Hermite quadrature.
//! The unnormalized law is carried as point masses on the grid nodes; each
//! quadrature image is deposited onto its two neighbouring nodes.

use std::num::NonZeroUsize;

use gauss_quad::GaussHermite;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{ObsDriftCoeffs, TimeCoeffs};
use crate::params::ModelParams;
use crate::sim::{advance_mean_obs, ObsPath};
use crate::zakai::{FilterSettings, XbarMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaScheme {
    pub vartheta: f64,
    /// Number of Gauss–Hermite points; odd and at least 3.
    pub quad_order: usize,
}

impl Default for ThetaScheme {
    fn default() -> Self {
        ThetaScheme {
            vartheta: 0.5,
            quad_order: 9,
        }
    }
}

impl ThetaScheme {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.vartheta) {
            return Err(Error::invalid("vartheta", "must lie in [0, 1]"));
        }
        if self.quad_order < 3 || self.quad_order.is_multiple_of(2) {
            return Err(Error::invalid("quad_order", "must be odd and >= 3"));
        }
        Ok(())
    }
}

/// Quadrature for `E[φ(ξ)]`, `ξ ~ N(0, 1)`: `Σ wₖφ(zₖ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn new(order: usize) -> Result<Self> {
        let deg = NonZeroUsize::new(order).ok_or_else(|| Error::invalid("quad_order", "must be >= 1"))?;
        // physicists' rule for e^{-x²}: substitute z = √2·x and divide by √π
        let rule = GaussHermite::new(deg);
        let (nodes, weights) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / std::f64::consts::PI.sqrt()))
            .unzip();
        Ok(NormalRule { nodes, weights })
    }

    pub fn expect(&self, mut phi: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * phi(z)).sum()
    }
}

/// Image of `x` under one ϑ-step driven by the standard normal `z`.
#[inline]
pub fn theta_image(x: f64, z: f64, dtau: f64, tc: &TimeCoeffs, vartheta: f64) -> f64 {
    let num = x + dtau * tc.alpha * (1.0 - tc.w * (1.0 - vartheta) * x) + dtau.sqrt() * tc.theta_diffusion(x) * z;
    num / (1.0 + dtau * tc.alpha * tc.w * vartheta)
}

/// `Pₙ(x, φ) = E[φ(θₙ₊₁) | θₙ = x]` under the ϑ-kernel with coefficients
/// frozen at `t`.
pub fn transition_expectation(
    x: f64,
    phi: impl Fn(f64) -> f64,
    dtau: f64,
    scheme: &ThetaScheme,
    t: f64,
    params: &ModelParams,
) -> Result<f64> {
    scheme.validate()?;
    let rule = NormalRule::new(scheme.quad_order)?;
    let tc = TimeCoeffs::at(t, params);
    Ok(rule.expect(|z| phi(theta_image(x, z, dtau, &tc, scheme.vartheta))))
}

/// `ln Λ̄ = −Δτ(f²/2δ₂² + g²/2δ₃²) + dX·f/δ₂² + dY·g/δ₃²` with `f, g` taken
/// from `coeffs` at the blended inhibition rate `theta`.
#[inline]
pub fn log_increment_likelihood(
    theta: f64,
    d_x: f64,
    d_y: f64,
    dtau: f64,
    coeffs: &ObsDriftCoeffs,
    params: &ModelParams,
) -> f64 {
    let d2 = params.delta2 * params.delta2;
    let d3 = params.delta3 * params.delta3;
    let f = coeffs.f(theta);
    let g = coeffs.g(theta);
    -dtau * (f * f / (2.0 * d2) + g * g / (2.0 * d3)) + d_x * f / d2 + d_y * g / d3
}

pub fn increment_likelihood(
    theta: f64,
    d_x: f64,
    d_y: f64,
    dtau: f64,
    coeffs: &ObsDriftCoeffs,
    params: &ModelParams,
) -> f64 {
    log_increment_likelihood(theta, d_x, d_y, dtau, coeffs, params).exp()
}

/// Point masses of the unnormalized law on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFilterState {
    pub n: usize,
    pub tau_n: f64,
    /// Node masses, rescaled to sum to one.
    pub values: Vec<f64>,
    /// `ln ζₙ`, the log of the total unnormalized mass.
    pub log_zeta: f64,
}

impl DiscreteFilterState {
    /// Starts from a density on the grid; node masses are its trapezoid
    /// weights and `ζ₀ = 1`.
    pub fn from_density(density: &[f64], grid: &Grid) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::Mismatch("prior length differs from grid".into()));
        }
        let n = density.len();
        let mut values: Vec<f64> = density
            .iter()
            .enumerate()
            .map(|(i, &d)| d * grid.dx * if i == 0 || i == n - 1 { 0.5 } else { 1.0 })
            .collect();
        let total: f64 = values.iter().sum();
        if !(total > 0.0 && total.is_finite()) || values.iter().any(|v| *v < 0.0) {
            return Err(Error::Grid("prior must be non-negative with positive mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(DiscreteFilterState {
            n: 0,
            tau_n: 0.0,
            values,
            log_zeta: 0.0,
        })
    }

    pub fn zeta(&self) -> f64 {
        self.log_zeta.exp()
    }

    pub fn mean_var(&self, grid: &Grid) -> (f64, f64) {
        let mean: f64 = self.values.iter().zip(&grid.nodes).map(|(m, x)| m * x).sum();
        let var: f64 = self.values.iter().zip(&grid.nodes).map(|(m, x)| m * (x - mean).powi(2)).sum();
        (mean, var.max(0.0))
    }
}

/// Mean observations at both ends of an observation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalContext {
    pub xbar: f64,
    pub ybar: f64,
    pub xbar_next: f64,
    pub ybar_next: f64,
}

/// What one recursion step did, besides updating the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteStepInfo {
    /// `ζₙ₊₁/ζₙ` computed as `ςₙ(Pₙ(·, Λ̄))`, in log form.
    pub log_ratio_direct: f64,
    /// Same ratio from the mass of the deposited weights.
    pub log_ratio_deposit: f64,
}

/// `ςₙ₊₁(φ) = ςₙ(Pₙ(·, Λ̄ₙ₊₁φ))`.
#[allow(clippy::too_many_arguments)]
pub fn discrete_step(
    state: &mut DiscreteFilterState,
    grid: &Grid,
    rule: &NormalRule,
    d_x: f64,
    d_y: f64,
    dtau: f64,
    vartheta: f64,
    ctx: IntervalContext,
    params: &ModelParams,
) -> Result<DiscreteStepInfo> {
    if !(dtau > 0.0) {
        return Err(Error::invalid("dtau", "must be > 0"));
    }
    let tc = TimeCoeffs::at(state.tau_n, params);
    let xb = (1.0 - vartheta) * ctx.xbar + vartheta * ctx.xbar_next;
    let yb = (1.0 - vartheta) * ctx.ybar + vartheta * ctx.ybar_next;
    let coeffs = tc.obs(xb, yb);
    let (lo, hi) = (grid.x_min, grid.x_max);

    // (mass · quadrature weight, image, log Λ̄) per source node and abscissa
    let per_node: Vec<Vec<(f64, f64, f64)>> = grid
        .nodes
        .par_iter()
        .zip(state.values.par_iter())
        .map(|(&x, &m)| {
            if m <= 0.0 {
                return Vec::new();
            }
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&z, &w)| {
                    let y = theta_image(x, z, dtau, &tc, vartheta).clamp(lo, hi);
                    let blend = (1.0 - vartheta) * x + vartheta * y;
                    let ll = log_increment_likelihood(blend, d_x, d_y, dtau, &coeffs, params);
                    (m * w, y, ll)
                })
                .collect()
        })
        .collect();

    let shift = per_node
        .iter()
        .flatten()
        .map(|c| c.2)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::FilterCollapse { t: state.tau_n + dtau });
    }

    let mut next = vec![0.0; grid.len()];
    let mut direct = 0.0;
    let last = grid.len() - 1;
    for (mw, y, ll) in per_node.into_iter().flatten() {
        let c = mw * (ll - shift).exp();
        direct += c;
        let s = (y - lo) / grid.dx;
        let j = (s.floor().max(0.0) as usize).min(last - 1);
        let frac = (s - j as f64).clamp(0.0, 1.0);
        next[j] += c * (1.0 - frac);
        next[j + 1] += c * frac;
    }
    let deposited: f64 = next.iter().sum();
    if !(deposited > 0.0 && deposited.is_finite()) {
        return Err(Error::FilterCollapse { t: state.tau_n + dtau });
    }
    next.iter_mut().for_each(|v| *v /= deposited);
    state.values = next;
    state.log_zeta += shift + deposited.ln();
    state.n += 1;
    state.tau_n += dtau;
    Ok(DiscreteStepInfo {
        log_ratio_direct: shift + direct.ln(),
        log_ratio_deposit: shift + deposited.ln(),
    })
}

/// Mean of `θₙ₊₁` under the kernel alone, used to extrapolate `X̄`.
fn predicted_mean(state: &DiscreteFilterState, grid: &Grid, rule: &NormalRule, dtau: f64, tc: &TimeCoeffs, vartheta: f64) -> f64 {
    grid.nodes
        .iter()
        .zip(&state.values)
        .map(|(&x, &m)| m * rule.expect(|z| theta_image(x, z, dtau, tc, vartheta).clamp(grid.x_min, grid.x_max)))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrace {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub log_zeta: Vec<f64>,
    /// Largest `|ln ζ|` mismatch between the two ways of computing a step's
    /// normalizer ratio.
    pub max_zeta_mismatch: f64,
}

/// Observation indices `0, k, 2k, …` into a path of `n_steps` increments.
pub fn every_kth(n_steps: usize, k: usize) -> Vec<usize> {
    (0..=n_steps).step_by(k.max(1)).collect()
}

/// Runs the recursion on the observations at `obs_indices` (increasing,
/// starting at 0) of a finely sampled path.
pub fn run_discrete(
    obs: &ObsPath,
    params: &ModelParams,
    settings: &FilterSettings,
    scheme: &ThetaScheme,
    obs_indices: &[usize],
    prior: &[f64],
) -> Result<DiscreteTrace> {
    params.validate()?;
    scheme.validate()?;
    if obs_indices.first() != Some(&0) || obs_indices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("obs_indices", "must start at 0 and increase strictly"));
    }
    if *obs_indices.last().unwrap() > obs.n_steps() {
        return Err(Error::invalid("obs_indices", "index beyond the observation path"));
    }
    let grid = settings.grid()?;
    let rule = NormalRule::new(scheme.quad_order)?;
    let mut state = DiscreteFilterState::from_density(prior, &grid)?;
    let (m0, v0) = state.mean_var(&grid);
    let mut trace = DiscreteTrace {
        times: vec![0.0],
        mean: vec![m0],
        var: vec![v0],
        log_zeta: vec![0.0],
        max_zeta_mismatch: 0.0,
    };
    let (mut xb, mut yb) = (obs.x[0], obs.y[0]);

    for w in obs_indices.windows(2) {
        let (i0, i1) = (w[0], w[1]);
        let dtau = obs.times[i1] - obs.times[i0];
        let t = obs.times[i0];
        state.tau_n = t;
        let tc = TimeCoeffs::at(t, params);
        let (mean_before, _) = state.mean_var(&grid);
        let ctx = match settings.xbar_mode {
            XbarMode::Oracle => IntervalContext {
                xbar: obs.xbar[i0],
                ybar: obs.ybar[i0],
                xbar_next: obs.xbar[i1],
                ybar_next: obs.ybar[i1],
            },
            XbarMode::Reconstructed => {
                let pred = predicted_mean(&state, &grid, &rule, dtau, &tc, scheme.vartheta);
                let (xn, yn) = advance_mean_obs(t, dtau, xb, yb, mean_before, pred, params);
                IntervalContext {
                    xbar: xb,
                    ybar: yb,
                    xbar_next: if xn.is_finite() { xn } else { xb },
                    ybar_next: if yn.is_finite() { yn } else { yb },
                }
            }
        };
        let info = discrete_step(
            &mut state,
            &grid,
            &rule,
            obs.x[i1] - obs.x[i0],
            obs.y[i1] - obs.y[i0],
            dtau,
            scheme.vartheta,
            ctx,
            params,
        )?;
        trace.max_zeta_mismatch = trace
            .max_zeta_mismatch
            .max((info.log_ratio_direct - info.log_ratio_deposit).abs());
        let (m, v) = state.mean_var(&grid);
        if settings.xbar_mode == XbarMode::Reconstructed {
            // re-anchor on the posterior once the observation is in
            let (xn, yn) = advance_mean_obs(t, dtau, xb, yb, mean_before, m, params);
            if xn.is_finite() {
                xb = xn;
            }
            if yn.is_finite() {
                yb = yn;
            }
        }
        trace.times.push(obs.times[i1]);
        trace.mean.push(m);
        trace.var.push(v);
        trace.log_zeta.push(state.log_zeta);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridDensity};
    use crate::params::ControlLaw;
    use proptest::prelude::*;

    #[test]
    fn normal_rule_moments() {
        let r = NormalRule::new(9).unwrap();
        assert!((r.expect(|_| 1.0) - 1.0).abs() < 1e-12);
        assert!(r.expect(|z| z).abs() < 1e-12);
        assert!((r.expect(|z| z * z) - 1.0).abs() < 1e-12);
        assert!((r.expect(|z| z.powi(4)) - 3.0).abs() < 1e-11);
    }

    #[test]
    fn scheme_validation() {
        assert!(ThetaScheme { vartheta: 0.5, quad_order: 4 }.validate().is_err());
        assert!(ThetaScheme { vartheta: 0.5, quad_order: 1 }.validate().is_err());
        assert!(ThetaScheme { vartheta: 1.5, quad_order: 5 }.validate().is_err());
        assert!(ThetaScheme::default().validate().is_ok());
    }

    #[test]
    fn boundary_sources_are_deterministic() {
        let p = ModelParams::default();
        let s = ThetaScheme::default();
        let t = 0.3;
        let tc = TimeCoeffs::at(t, &p);
        for x in [0.0, 1.0] {
            let phi = |y: f64| (3.0 * y).sin();
            let image = theta_image(x, 0.0, 0.01, &tc, s.vartheta);
            let e = transition_expectation(x, phi, 0.01, &s, t, &p).unwrap();
            assert!((e - phi(image)).abs() < 1e-14);
        }
    }

    #[test]
    fn explicit_kernel_on_linear_test_function() {
        let p = ModelParams::default();
        let s = ThetaScheme { vartheta: 0.0, quad_order: 7 };
        let (t, x, dtau) = (0.3, 0.4, 0.02);
        let f1 = TimeCoeffs::at(t, &p).theta_drift(x);
        let e = transition_expectation(x, |y| 2.0 * y - 1.0, dtau, &s, t, &p).unwrap();
        assert!((e - (2.0 * (x + dtau * f1) - 1.0)).abs() < 1e-13);
        let one = transition_expectation(x, |_| 1.0, dtau, &s, t, &p).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
    }

    #[test]
    fn likelihood_examples() {
        let p = ModelParams::default();
        let tc = TimeCoeffs::at(0.75, &p); // β = γ = 0 → f = g = 0
        let c = tc.obs(0.3, 0.1);
        assert_eq!(increment_likelihood(0.4, 1.0, -2.0, 0.01, &c, &p), 1.0);

        let tc = TimeCoeffs::at(0.3, &p);
        let c = tc.obs(0.0, 0.0);
        let theta = 0.9;
        let dtau = 0.01;
        let (f, g) = (c.f(theta), c.g(theta));
        let l = log_increment_likelihood(theta, dtau * f, dtau * g, dtau, &c, &p);
        let expected = dtau * (f * f / (2.0 * 1e-4) + g * g / (2.0 * 1e-4));
        assert!((l - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert!(l >= 0.0);
    }

    #[test]
    fn implicit_map_contracts_to_equilibrium() {
        let p = ModelParams {
            control: ControlLaw::Constant(0.6),
            delta1: 1e-300,
            ..ModelParams::default()
        };
        let tc = TimeCoeffs::at(0.25, &p);
        let eq = 1.0 / tc.w;
        for &dtau in &[0.01, 1.0, 100.0] {
            for &x0 in &[0.0, 0.2, 0.9, 1.0] {
                let mut x = x0;
                let mut gap = (x - eq).abs();
                for _ in 0..50 {
                    x = theta_image(x, 0.0, dtau, &tc, 1.0);
                    let g = (x - eq).abs();
                    assert!(g <= gap + 1e-15, "dtau {dtau}, x0 {x0}");
                    gap = g;
                }
            }
        }
    }

    #[test]
    fn normalizer_two_ways() {
        let p = ModelParams::default();
        let grid = build_grid(0.0, 1.0, 0.02).unwrap();
        let rule = NormalRule::new(9).unwrap();
        let mut st = DiscreteFilterState::from_density(&GridDensity::uniform_unit(&grid).values, &grid).unwrap();
        assert_eq!(st.zeta(), 1.0);
        st.tau_n = 0.3;
        let ctx = IntervalContext { xbar: 0.1, ybar: -1.0, xbar_next: 0.12, ybar_next: -0.99 };
        let info = discrete_step(&mut st, &grid, &rule, 0.02, 0.01, 0.01, 0.5, ctx, &p).unwrap();
        assert!((info.log_ratio_direct - info.log_ratio_deposit).abs() < 1e-12);
        let s: f64 = st.values.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_tends_to_identity() {
        // at t = 0.75 all rates vanish and the likelihood is flat; only the
        // spread of the quadrature images, of order √Δτ, moves mass
        let p = ModelParams::default();
        let grid = build_grid(0.0, 1.0, 0.05).unwrap();
        let rule = NormalRule::new(9).unwrap();
        let prior: Vec<f64> = grid.nodes.iter().map(|x| 1.0 + x).collect();
        let ctx = IntervalContext { xbar: 0.0, ybar: 0.0, xbar_next: 0.0, ybar_next: 0.0 };
        let mut last = f64::INFINITY;
        for dtau in [1e-4, 1e-6, 1e-8, 1e-10] {
            let mut st = DiscreteFilterState::from_density(&prior, &grid).unwrap();
            let before = st.values.clone();
            st.tau_n = 0.75;
            discrete_step(&mut st, &grid, &rule, 0.0, 0.0, dtau, 0.5, ctx, &p).unwrap();
            let err = st.values.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < last, "dtau {dtau}: {err} >= {last}");
            last = err;
        }
        assert!(last < 1e-8);
    }

    proptest! {
        #[test]
        fn weights_stay_nonnegative(t in 0.0f64..1.0, dx_obs in -0.5f64..0.5, dy_obs in -0.5f64..0.5, vt in 0.0f64..=1.0) {
            let p = ModelParams::default();
            let grid = build_grid(0.0, 1.0, 0.05).unwrap();
            let rule = NormalRule::new(7).unwrap();
            let mut st = DiscreteFilterState::from_density(&GridDensity::uniform_unit(&grid).values, &grid).unwrap();
            st.tau_n = t;
            let ctx = IntervalContext { xbar: 0.0, ybar: 0.0, xbar_next: 0.01, ybar_next: 0.0 };
            discrete_step(&mut st, &grid, &rule, dx_obs, dy_obs, 0.01, vt, ctx, &p).unwrap();
            prop_assert!(st.values.iter().all(|&v| v >= 0.0));
            prop_assert!(st.log_zeta.is_finite());
        }

        #[test]
        fn likelihood_positive(theta in 0.0f64..=1.0, dx_obs in -5.0f64..5.0, dy_obs in -5.0f64..5.0, t in 0.0f64..2.0) {
            let p = ModelParams::default();
            let c = TimeCoeffs::at(t, &p).obs(0.5, -0.5);
            let l = log_increment_likelihood(theta, dx_obs, dy_obs, 0.01, &c, &p);
            prop_assert!(l.is_finite());
        }
    }
}
