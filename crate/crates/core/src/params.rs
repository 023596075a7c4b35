//! Model coefficients and the state/observation records they act on.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// How the fungicide control `u(t)` is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlLaw {
    /// `u(t) = sin²(ω₁(t − φ₁)²)·exp(−ω₂(t − φ₂)²)`.
    Scheduled,
    /// A constant control level in `[0, 1]`.
    Constant(f64),
}

/// Scalar coefficients of the lumped model.
///
/// The seasonal rates are
/// `α(t) = p₁ + b₁(1 − cos c₁t)(t − d₁)²`,
/// `β(t) = b₂(1 − cos c₂t)(t − d₂)²·p₂` and
/// `γ(t, θ, v, ρ) = b₃(1 − cos c₃t)(t − d₃)²(θ − κρ)v`, floored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub v_max: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub eta_value: f64,
    pub p1_value: f64,
    pub p2_value: f64,
    pub control: ControlLaw,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::with_structure(1.0, 1e-4)
    }
}

impl ModelParams {
    /// Reference coefficient set for a given volume scale and regularizer.
    ///
    /// `b₂` and `b₃` depend on `v_max` and `ε`; `η` is the constant
    /// `1/(1 + ε)`, which is also its supremum over time.
    pub fn with_structure(v_max: f64, epsilon: f64) -> Self {
        let eta = 1.0 / (1.0 + epsilon);
        ModelParams {
            v_max,
            epsilon,
            sigma: 0.9,
            kappa: 1.0,
            b1: 5.0 * 10f64.ln(),
            b2: v_max * (1e5 * v_max * (1.0 - epsilon * eta)).ln() / 2.0,
            b3: v_max * (1e5 * v_max).ln(),
            c1: 10.0 * PI,
            c2: 10.0 * PI,
            c3: 10.0 * PI,
            d1: 0.75,
            d2: 0.75,
            d3: 0.75,
            omega1: 25.0 * PI,
            omega2: 10.0,
            phi1: 0.4,
            phi2: 0.6,
            delta1: 1e-2,
            delta2: 1e-2,
            delta3: 1e-2,
            eta_value: eta,
            p1_value: 0.0,
            p2_value: 1.0,
            control: ControlLaw::Scheduled,
        }
    }

    /// Checks the admissible ranges; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("v_max", self.v_max),
            ("epsilon", self.epsilon),
            ("sigma", self.sigma),
            ("kappa", self.kappa),
            ("b1", self.b1),
            ("b2", self.b2),
            ("b3", self.b3),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("phi1", self.phi1),
            ("phi2", self.phi2),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
            ("eta", self.eta_value),
            ("p1", self.p1_value),
            ("p2", self.p2_value),
        ];
        for (key, value) in finite {
            if !value.is_finite() {
                return Err(Error::invalid(key, "must be finite"));
            }
        }
        if self.v_max <= 0.0 {
            return Err(Error::invalid("v_max", "must be > 0"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon", "must be > 0"));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::invalid("sigma", "must lie in (0, 1)"));
        }
        for (key, value) in [
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
        ] {
            if value <= 0.0 {
                return Err(Error::invalid(key, "must be > 0"));
            }
        }
        if !(self.eta_value > 0.0 && self.eta_value <= 1.0) {
            return Err(Error::invalid("eta", "must lie in (0, 1]"));
        }
        if self.p1_value < 0.0 {
            return Err(Error::invalid("p1", "must be >= 0"));
        }
        if self.p2_value <= 0.0 {
            return Err(Error::invalid("p2", "must be > 0"));
        }
        if self.kappa < 0.0 {
            return Err(Error::invalid("kappa", "must be >= 0"));
        }
        if let ControlLaw::Constant(u) = self.control {
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::invalid("control", "constant control must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Hidden state of the lumped model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenState {
    /// Inhibition rate, in `[0, 1]`.
    pub theta: f64,
    /// Fruit volume, in `[0, v_max]`.
    pub v: f64,
    /// Rot proportion, in `[0, 1]`.
    pub rho: f64,
}

impl HiddenState {
    pub fn new(theta: f64, v: f64, rho: f64) -> Self {
        HiddenState { theta, v, rho }
    }
}

/// Logit-transformed observations and their noise-free means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsCoords {
    pub x: f64,
    pub y: f64,
    pub xbar: f64,
    pub ybar: f64,
}
