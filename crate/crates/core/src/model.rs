//! Pointwise evaluation of the model coefficients.
//!
//! Everything here is a pure function of time, state and [`ModelParams`].
//! Hot loops (grid sweeps, particle propagation) first freeze the time
//! dependence into a [`TimeCoeffs`] and then evaluate per node or particle.

use crate::error::{Error, Result};
use crate::params::{ControlLaw, HiddenState, ModelParams};

/// Beyond this magnitude the `1 + e^{±X}` factors are evaluated in log form.
pub const EXP_GUARD: f64 = 30.0;

/// State-dependence of the noise: `x(1 − x)` on `(0, 1)`, zero elsewhere.
#[inline]
pub fn kappa(x: f64) -> f64 {
    if x > 0.0 && x < 1.0 {
        x * (1.0 - x)
    } else {
        0.0
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 + e^x`, switching to the log form for large `|x|`.
#[inline]
fn one_plus_exp(x: f64) -> f64 {
    if x.abs() > EXP_GUARD {
        softplus(x).exp()
    } else {
        1.0 + x.exp()
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub u: f64,
    /// Fungicide effect `1/(1 − σu)`.
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diffusion {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

/// Drifts of the transformed observations `X` and `Y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsDrift {
    pub f: f64,
    pub g: f64,
}

#[inline]
fn seasonal(t: f64, b: f64, c: f64, d: f64) -> f64 {
    let s = t - d;
    b * (1.0 - (c * t).cos()) * s * s
}

pub fn eval_control(t: f64, params: &ModelParams) -> Control {
    let u = match params.control {
        ControlLaw::Scheduled => {
            let a = t - params.phi1;
            let b = t - params.phi2;
            let s = (params.omega1 * a * a).sin();
            s * s * (-params.omega2 * b * b).exp()
        }
        ControlLaw::Constant(u) => u,
    };
    Control {
        u,
        w: 1.0 / (1.0 - params.sigma * u),
    }
}

/// All time-dependent coefficients frozen at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeCoeffs {
    pub t: f64,
    pub u: f64,
    pub w: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `b₃(1 − cos c₃t)(t − d₃)²`; multiply by `(θ − κρ)v` to get `γ`.
    pub gamma_amp: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub v_max: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl TimeCoeffs {
    pub fn at(t: f64, params: &ModelParams) -> Self {
        let Control { u, w } = eval_control(t, params);
        TimeCoeffs {
            t,
            u,
            w,
            alpha: params.p1_value + seasonal(t, params.b1, params.c1, params.d1),
            beta: seasonal(t, params.b2, params.c2, params.d2) * params.p2_value,
            gamma_amp: seasonal(t, params.b3, params.c3, params.d3),
            eta: params.eta_value,
            epsilon: params.epsilon,
            kappa: params.kappa,
            v_max: params.v_max,
            delta1: params.delta1,
            delta2: params.delta2,
            delta3: params.delta3,
        }
    }

    #[inline]
    pub fn gamma(&self, theta: f64, v: f64, rho: f64) -> f64 {
        (self.gamma_amp * (theta - self.kappa * rho) * v).max(0.0)
    }

    #[inline]
    pub fn theta_drift(&self, theta: f64) -> f64 {
        self.alpha * (1.0 - theta * self.w)
    }

    /// Relaxation rate `k` of the volume: `f₂ = β − k·v`.
    #[inline]
    pub fn volume_rate(&self, theta: f64) -> f64 {
        self.beta / (self.eta * self.v_max * (1.0 + self.epsilon - theta))
    }

    #[inline]
    pub fn volume_drift(&self, theta: f64, v: f64) -> f64 {
        let target = self.eta * self.v_max;
        self.beta / target * (target - v / (1.0 + self.epsilon - theta))
    }

    #[inline]
    pub fn rot_drift(&self, theta: f64, v: f64, rho: f64) -> f64 {
        self.gamma(theta, v, rho) * (1.0 - rho)
    }

    #[inline]
    pub fn theta_diffusion(&self, theta: f64) -> f64 {
        self.delta1 * kappa(theta)
    }

    #[inline]
    pub fn volume_diffusion(&self, v: f64) -> f64 {
        self.delta2 * kappa(v / self.v_max)
    }

    #[inline]
    pub fn rot_diffusion(&self, rho: f64) -> f64 {
        self.delta3 * kappa(rho)
    }

    /// Freezes the mean observations as well, leaving `θ` as the only input.
    pub fn obs(&self, xbar: f64, ybar: f64) -> ObsDriftCoeffs {
        let plus_x = one_plus_exp(xbar);
        let both = if xbar.abs() > EXP_GUARD {
            (softplus(xbar) + softplus(-xbar)).exp()
        } else {
            2.0 + xbar.exp() + (-xbar).exp()
        };
        let v_mean = self.v_max * logistic(xbar);
        ObsDriftCoeffs {
            f_const: self.beta * both / self.v_max,
            f_pole: self.beta * plus_x / (self.eta * self.v_max),
            one_eps: 1.0 + self.epsilon,
            g_scale: one_plus_exp(-ybar) * self.gamma_amp * v_mean,
            g_threshold: self.kappa * logistic(ybar),
        }
    }
}

/// Observation drifts with `t`, `X̄` and `Ȳ` frozen:
/// `f(θ) = f_const − f_pole/(1 + ε − θ)` and
/// `g(θ) = g_scale·max(θ − κρ̄, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsDriftCoeffs {
    pub f_const: f64,
    pub f_pole: f64,
    pub one_eps: f64,
    pub g_scale: f64,
    pub g_threshold: f64,
}

impl ObsDriftCoeffs {
    /// `θ` is clamped to `[0, 1]`, the support of the signal; grid nodes
    /// outside it see the boundary value.
    #[inline]
    pub fn f(&self, theta: f64) -> f64 {
        let theta = theta.clamp(0.0, 1.0);
        self.f_const - self.f_pole / (self.one_eps - theta)
    }

    #[inline]
    pub fn g(&self, theta: f64) -> f64 {
        let theta = theta.clamp(0.0, 1.0);
        (self.g_scale * (theta - self.g_threshold)).max(0.0)
    }
}

pub fn eval_rates(t: f64, s: &HiddenState, params: &ModelParams) -> Rates {
    let c = TimeCoeffs::at(t, params);
    Rates {
        alpha: c.alpha,
        beta: c.beta,
        gamma: c.gamma(s.theta, s.v, s.rho),
        eta: c.eta,
    }
}

pub fn eval_drift(t: f64, s: &HiddenState, params: &ModelParams) -> Drift {
    let c = TimeCoeffs::at(t, params);
    Drift {
        f1: c.theta_drift(s.theta),
        f2: c.volume_drift(s.theta, s.v),
        f3: c.rot_drift(s.theta, s.v, s.rho),
    }
}

pub fn eval_diffusion(t: f64, s: &HiddenState, params: &ModelParams) -> Diffusion {
    let c = TimeCoeffs::at(t, params);
    Diffusion {
        g1: c.theta_diffusion(s.theta),
        g2: c.volume_diffusion(s.v),
        g3: c.rot_diffusion(s.rho),
    }
}

pub fn eval_obs_drift(t: f64, xbar: f64, ybar: f64, theta: f64, params: &ModelParams) -> ObsDrift {
    let o = TimeCoeffs::at(t, params).obs(xbar, ybar);
    ObsDrift {
        f: o.f(theta),
        g: o.g(theta),
    }
}

/// `(v, ρ) ↦ (ln(v/(v_max − v)), ln(ρ/(1 − ρ)))` on the open domain.
pub fn to_obs_coords(v: f64, rho: f64, params: &ModelParams) -> Result<(f64, f64)> {
    check_open("v", v, params.v_max)?;
    check_open("rho", rho, 1.0)?;
    Ok((logit(v / params.v_max), logit(rho)))
}

pub fn from_obs_coords(x: f64, y: f64, params: &ModelParams) -> (f64, f64) {
    (params.v_max * logistic(x), logistic(y))
}

fn check_open(variable: &'static str, value: f64, upper: f64) -> Result<()> {
    if value == 0.0 || value == upper {
        return Err(Error::BoundaryTransform {
            variable,
            value,
            upper,
        });
    }
    if !(value > 0.0 && value < upper) {
        return Err(Error::invalid(variable, format!("{value} outside (0, {upper})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn table_defaults() {
        let p = p();
        assert_eq!(p.b1, 5.0 * 10f64.ln());
        assert_eq!(p.eta_value, 1.0 / (1.0 + 1e-4));
        // v_max·ln(1e5·v_max·(1 − ε/(1 + ε)))/2 at v_max = 1, ε = 1e-4
        assert!((p.b2 - 5.756_412_73).abs() < 1e-8, "b2 = {}", p.b2);
        assert!((p.b3 - 11.512_925_465).abs() < 1e-8);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn control_vanishes_at_phase_times() {
        let c = eval_control(0.4, &p());
        assert_eq!(c.u, 0.0);
        assert_eq!(c.w, 1.0);
        // 25π·0.2² = π, up to the rounding of 0.6 − 0.4
        let c = eval_control(0.6, &p());
        assert!(c.u.abs() < f64::EPSILON);
        assert_eq!(c.w, 1.0);
    }

    #[test]
    fn forced_control_gives_max_effect() {
        let mut p = p();
        p.control = ControlLaw::Constant(1.0);
        let w = eval_control(0.3, &p).w;
        assert!((w - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rates_vanish_at_peak_time() {
        let s = HiddenState::new(0.7, 0.5, 0.2);
        let r = eval_rates(0.75, &s, &p());
        assert_eq!((r.alpha, r.beta, r.gamma), (0.0, 0.0, 0.0));
    }

    #[test]
    fn alpha_quarter_time() {
        let r = eval_rates(0.25, &HiddenState::new(0.1, 0.5, 0.1), &p());
        // cos(2.5π) = 0, (0.25 − 0.75)² = 0.25
        let expected = 5.0 * 10f64.ln() * 0.25;
        assert!((r.alpha - expected).abs() < 1e-12);
        assert!((r.alpha - 2.878_23).abs() < 1e-5);
    }

    #[test]
    fn gamma_zero_on_balance_or_empty_fruit() {
        let p = p();
        for t in [0.1, 0.33, 0.9] {
            assert_eq!(eval_rates(t, &HiddenState::new(0.4, 0.5, 0.4), &p).gamma, 0.0);
            assert_eq!(eval_rates(t, &HiddenState::new(0.9, 0.0, 0.1), &p).gamma, 0.0);
            // θ < κρ would make the raw form negative
            assert_eq!(eval_rates(t, &HiddenState::new(0.1, 0.5, 0.8), &p).gamma, 0.0);
        }
    }

    #[test]
    fn drift_special_points() {
        let mut p = p();
        p.control = ControlLaw::Constant(0.0);
        let t = 0.3;
        let tc = TimeCoeffs::at(t, &p);
        let d = eval_drift(t, &HiddenState::new(0.0, 0.5, 0.5), &p);
        assert_eq!(d.f1, tc.alpha);

        let theta = 0.3;
        let v = p.eta_value * p.v_max * (1.0 + p.epsilon - theta);
        let d = eval_drift(t, &HiddenState::new(theta, v, 0.5), &p);
        assert!(d.f2.abs() < 1e-12);

        let d = eval_drift(t, &HiddenState::new(0.9, 0.5, 1.0), &p);
        assert_eq!(d.f3, 0.0);
    }

    #[test]
    fn diffusion_values() {
        let p = p();
        for theta in [0.0, 1.0] {
            let g = eval_diffusion(0.2, &HiddenState::new(theta, 0.5, 0.5), &p);
            assert_eq!(g.g1, 0.0);
        }
        let g = eval_diffusion(0.2, &HiddenState::new(0.5, 0.5, 0.5), &p);
        assert!((g.g1 - 2.5e-3).abs() < 1e-15);
        assert!((g.g2 - 2.5e-3).abs() < 1e-15);
        assert!((g.g3 - 2.5e-3).abs() < 1e-15);
        assert_eq!(kappa(0.0), 0.0);
        assert_eq!(kappa(1.0), 0.0);
        assert_eq!(kappa(-0.2), 0.0);
    }

    #[test]
    fn obs_drift_hand_value() {
        let p = p();
        let mut tc = TimeCoeffs::at(0.3, &p);
        tc.beta = 1.0;
        let f = tc.obs(0.0, 0.0).f(0.0);
        assert!((f - 2.0).abs() < 1e-12, "f = {f}");
    }

    #[test]
    fn obs_drift_rot_factor() {
        let p = p();
        let t = 0.3;
        // X̄ = 0 → v = v_max/2; Ȳ = 0 → ρ = 1/2
        let theta = 0.9;
        let gamma = eval_rates(t, &HiddenState::new(theta, 0.5 * p.v_max, 0.5), &p).gamma;
        assert!(gamma > 0.0);
        let g = eval_obs_drift(t, 0.0, 0.0, theta, &p).g;
        assert!((g - 2.0 * gamma).abs() < 1e-12);
        // γ = 0 at the evaluated point
        assert_eq!(eval_obs_drift(t, 0.0, 0.0, 0.3, &p).g, 0.0);
    }

    #[test]
    fn obs_drift_large_arguments_stay_finite() {
        let p = p();
        for xbar in [-200.0, -31.0, 31.0, 200.0] {
            let o = eval_obs_drift(0.1, xbar, -xbar, 0.5, &p);
            assert!(o.f.is_finite() && o.g.is_finite(), "xbar = {xbar}: {o:?}");
        }
        let direct = {
            let mut tc = TimeCoeffs::at(0.1, &p);
            tc.beta = 1.0;
            let x = 29.9f64;
            (tc.eta * (1.0 + (-x).exp()) - 1.0 / (1.0 + tc.epsilon - 0.5)) * (1.0 + x.exp())
                / (tc.eta * tc.v_max)
        };
        let mut tc = TimeCoeffs::at(0.1, &p);
        tc.beta = 1.0;
        let guarded = tc.obs(29.9, 0.0).f(0.5);
        assert!(((direct - guarded) / direct).abs() < 1e-12);
        let above = tc.obs(30.1, 0.0).f(0.5);
        let expected = (tc.eta * (1.0 + (-30.1f64).exp()) - 1.0 / (1.0 + tc.epsilon - 0.5))
            * (1.0 + 30.1f64.exp())
            / (tc.eta * tc.v_max);
        assert!(((above - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn obs_coords_examples() {
        let p = p();
        let (x, _) = to_obs_coords(0.5, 0.5, &p).unwrap();
        assert_eq!(x, 0.0);
        let (x, y) = to_obs_coords(0.25, 0.5, &p).unwrap();
        assert!((x + 3f64.ln()).abs() < 1e-15);
        assert!((x + 1.098_61).abs() < 1e-5);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn obs_coords_reject_boundary() {
        let p = p();
        assert!(matches!(
            to_obs_coords(0.0, 0.5, &p),
            Err(Error::BoundaryTransform { variable: "v", .. })
        ));
        assert!(matches!(
            to_obs_coords(1.0, 0.5, &p),
            Err(Error::BoundaryTransform { variable: "v", .. })
        ));
        assert!(matches!(
            to_obs_coords(0.5, 1.0, &p),
            Err(Error::BoundaryTransform { variable: "rho", .. })
        ));
        assert!(to_obs_coords(1.5, 0.5, &p).is_err());
    }

    // X̄ = logit(v̄/v_max) differentiated along the mean-volume ODE must equal
    // the observation drift f.
    #[test]
    fn obs_drift_matches_chain_rule() {
        let mut p = p();
        p.v_max = 2.0;
        p.b2 = 3.0;
        let theta = |t: f64| 0.3 + 0.2 * (3.0 * t).sin();
        let rhs = |t: f64, v: f64| TimeCoeffs::at(t, &p).volume_drift(theta(t), v);
        let h = 1e-5;
        let mut v = 0.6;
        let mut t = 0.05;
        for _ in 0..2000 {
            let x0 = logit(v / p.v_max);
            let f = eval_obs_drift(t, x0, 0.0, theta(t), &p).f;
            // RK4 for the volume
            let k1 = rhs(t, v);
            let k2 = rhs(t + h / 2.0, v + h / 2.0 * k1);
            let k3 = rhs(t + h / 2.0, v + h / 2.0 * k2);
            let k4 = rhs(t + h, v + h * k3);
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
            let fd = (logit(v / p.v_max) - x0) / h;
            assert!((fd - f).abs() < 1e-3 * (1.0 + f.abs()), "t = {t}: fd {fd} vs f {f}");
        }
    }

    proptest! {
        #[test]
        fn control_bounds(t in 0.0f64..20.0) {
            let p = p();
            let c = eval_control(t, &p);
            prop_assert!((0.0..=1.0).contains(&c.u));
            prop_assert!(c.w >= 1.0 && c.w <= 1.0 / (1.0 - p.sigma) + 1e-12);
        }

        #[test]
        fn rates_nonnegative(t in 0.0f64..20.0, th in 0.0f64..=1.0, v in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let rates = eval_rates(t, &HiddenState::new(th, v, r), &p());
            prop_assert!(rates.alpha >= 0.0 && rates.beta >= 0.0 && rates.gamma >= 0.0);
        }

        #[test]
        fn diffusion_bounded(t in 0.0f64..5.0, x in -0.5f64..1.5) {
            let p = p();
            let g = eval_diffusion(t, &HiddenState::new(x, x * p.v_max, x), &p);
            for gi in [g.g1, g.g2, g.g3] {
                prop_assert!(gi >= 0.0 && gi <= p.delta1 / 4.0 + 1e-18);
            }
            if !(x > 0.0 && x < 1.0) {
                prop_assert_eq!(g.g1, 0.0);
            }
        }

        #[test]
        fn theta_equilibrium(t in 0.0f64..5.0) {
            let p = p();
            let tc = TimeCoeffs::at(t, &p);
            let f1 = tc.theta_drift(1.0 / tc.w);
            prop_assert!(f1.abs() <= 4.0 * tc.alpha * f64::EPSILON);
        }

        #[test]
        fn logit_roundtrip(v in 1e-9f64..0.999_999, r in 1e-9f64..0.999_999) {
            let p = p();
            let (x, y) = to_obs_coords(v, r, &p).unwrap();
            let (v2, r2) = from_obs_coords(x, y, &p);
            prop_assert!((v2 - v).abs() <= 1e-12 * v.max(1e-3));
            prop_assert!((r2 - r).abs() <= 1e-12 * r.max(1e-3));
        }
    }
}
