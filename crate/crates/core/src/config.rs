//! Flat-key run configuration.
//!
//! A config file is a TOML document with top-level keys only. Every key is
//! optional; omitted keys keep the reference values. `b2`, `b3` and `eta`
//! default to values derived from `v_max` and `epsilon`.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `v_max`, `epsilon`, `sigma`, `kappa` | structural constants | 1, 1e-4, 0.9, 1 |
//! | `b1`..`b3`, `c1`..`c3`, `d1`..`d3` | seasonal rate shapes | reference set |
//! | `omega1`, `omega2`, `phi1`, `phi2` | control schedule | 25π, 10, 0.4, 0.6 |
//! | `delta1`..`delta3` | noise ranges | 0.01 |
//! | `eta`, `p1`, `p2` | rate constants | 1/(1+ε), 0, 1 |
//! | `control` | `"scheduled"` or a constant in [0, 1] | `"scheduled"` |
//! | `t_end`, `dt`, `seed`, `record_stride`, `vartheta` | simulation | 1, 1e-3, 0, 1, 0.5 |
//! | `theta0`, `v0`, `rho0` | single-run initial state | 0.05, 0.5, 0.25 |
//! | `x_min`, `x_max`, `dx` | filter grid | 0, 1, 0.1 |
//! | `method` | `zakai`, `ks`, `discrete` or `oracle` | `zakai` |
//! | `stencil` | `upwind` or `central` | `upwind` |
//! | `zakai_scheme` | `splitting` or `euler` | `splitting` |
//! | `ks_integrator` | `exponential` or `euler` | `exponential` |
//! | `xbar_mode` | `reconstructed` or `oracle` | `reconstructed` |
//! | `prior` | `"uniform"` or a point in [0, 1] | `"uniform"` |
//! | `dtau`, `quad_order`, `filter_vartheta` | discrete filter | 0.01, 9, 0.5 |
//! | `particles` | particle count | 5000 |
//! | `tau`, `horizon` | prediction | 0.5, 0.25 |
//! | `theta0_list`, `v0_list`, `rho0_list` | scenario matrix | {0.05, 0.75}, {0.05, 0.5}, {0.25, 0.75} |
//! | `methods` | methods run by `compare` | `["zakai", "oracle"]` |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use toml::{Table, Value};

use crate::discrete::ThetaScheme;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity, Stencil};
use crate::params::{ControlLaw, ModelParams};
use crate::particle::ParticleInit;
use crate::sim::SimConfig;
use crate::zakai::{FilterSettings, KsIntegrator, Method, XbarMode, ZakaiScheme};

/// Filtering methods a run can use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunMethod {
    Zakai,
    Ks,
    Discrete,
    Oracle,
}

impl RunMethod {
    pub fn name(self) -> &'static str {
        match self {
            RunMethod::Zakai => "zakai",
            RunMethod::Ks => "ks",
            RunMethod::Discrete => "discrete",
            RunMethod::Oracle => "oracle",
        }
    }
}

impl fmt::Display for RunMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zakai" => Ok(RunMethod::Zakai),
            "ks" => Ok(RunMethod::Ks),
            "discrete" => Ok(RunMethod::Discrete),
            "oracle" => Ok(RunMethod::Oracle),
            other => Err(Error::config(
                "method",
                format!("unknown method `{other}` (expected zakai, ks, discrete or oracle)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Uniform,
    Point(f64),
}

impl Prior {
    pub fn density(self, grid: &Grid) -> GridDensity {
        match self {
            Prior::Uniform => GridDensity::uniform_unit(grid),
            Prior::Point(x) => GridDensity::point_mass(grid, x),
        }
    }

    pub fn particles(self) -> ParticleInit {
        match self {
            Prior::Uniform => ParticleInit::Uniform,
            Prior::Point(x) => ParticleInit::Point(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: ModelParams,
    pub sim: SimConfig,
    pub filter: FilterSettings,
    pub method: RunMethod,
    pub prior: Prior,
    pub dtau: f64,
    pub discrete: ThetaScheme,
    pub particles: usize,
    pub tau: f64,
    pub horizon: f64,
    pub theta0_list: Vec<f64>,
    pub v0_list: Vec<f64>,
    pub rho0_list: Vec<f64>,
    pub methods: Vec<RunMethod>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            params: ModelParams::default(),
            sim: SimConfig::default(),
            filter: FilterSettings::default(),
            method: RunMethod::Zakai,
            prior: Prior::Uniform,
            dtau: 0.01,
            discrete: ThetaScheme::default(),
            particles: 5000,
            tau: 0.5,
            horizon: 0.25,
            theta0_list: vec![0.05, 0.75],
            v0_list: vec![0.05, 0.5],
            rho0_list: vec![0.25, 0.75],
            methods: vec![RunMethod::Zakai, RunMethod::Oracle],
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "v_max", "epsilon", "sigma", "kappa", "b1", "b2", "b3", "c1", "c2", "c3", "d1", "d2", "d3", "omega1",
    "omega2", "phi1", "phi2", "delta1", "delta2", "delta3", "eta", "p1", "p2", "control", "t_end", "dt",
    "seed", "theta0", "v0", "rho0", "record_stride", "vartheta", "x_min", "x_max", "dx", "method", "stencil",
    "zakai_scheme", "ks_integrator", "xbar_mode", "prior", "dtau", "quad_order", "filter_vartheta",
    "particles", "tau", "horizon", "theta0_list", "v0_list", "rho0_list", "methods",
];

fn float(table: &Table, key: &str) -> Result<Option<f64>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::Float(x)) => Ok(Some(*x)),
        Some(Value::Integer(i)) => Ok(Some(*i as f64)),
        Some(other) => Err(Error::config(key, format!("expected a number, found {}", other.type_str()))),
    }
}

fn uint(table: &Table, key: &str) -> Result<Option<u64>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
        Some(other) => Err(Error::config(key, format!("expected a non-negative integer, found {other}"))),
    }
}

fn string<'a>(table: &'a Table, key: &str) -> Result<Option<&'a str>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.as_str())),
        Some(other) => Err(Error::config(key, format!("expected a string, found {}", other.type_str()))),
    }
}

fn float_list(table: &Table, key: &str) -> Result<Option<Vec<f64>>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for v in items {
                match v {
                    Value::Float(x) => out.push(*x),
                    Value::Integer(i) => out.push(*i as f64),
                    other => return Err(Error::config(key, format!("expected numbers, found {}", other.type_str()))),
                }
            }
            if out.is_empty() {
                return Err(Error::config(key, "list must not be empty"));
            }
            Ok(Some(out))
        }
        Some(other) => Err(Error::config(key, format!("expected an array, found {}", other.type_str()))),
    }
}

fn choice<T>(table: &Table, key: &str, options: &[(&str, T)]) -> Result<Option<T>>
where
    T: Copy,
{
    let Some(s) = string(table, key)? else {
        return Ok(None);
    };
    options
        .iter()
        .find(|(name, _)| *name == s)
        .map(|(_, v)| Some(*v))
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::config(key, format!("unknown value `{s}` (expected one of {})", names.join(", ")))
        })
}

/// Parses config text, merging it over the defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.to_string().trim().to_string()))?;
    for key in table.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::config(key.clone(), "unknown key"));
        }
    }
    let mut cfg = ScenarioConfig::default();

    let v_max = float(&table, "v_max")?.unwrap_or(1.0);
    let epsilon = float(&table, "epsilon")?.unwrap_or(1e-4);
    let p = &mut cfg.params;
    *p = ModelParams::with_structure(v_max, epsilon);
    let slots: [(&str, &mut f64); 21] = [
        ("sigma", &mut p.sigma),
        ("kappa", &mut p.kappa),
        ("b1", &mut p.b1),
        ("b2", &mut p.b2),
        ("b3", &mut p.b3),
        ("c1", &mut p.c1),
        ("c2", &mut p.c2),
        ("c3", &mut p.c3),
        ("d1", &mut p.d1),
        ("d2", &mut p.d2),
        ("d3", &mut p.d3),
        ("omega1", &mut p.omega1),
        ("omega2", &mut p.omega2),
        ("phi1", &mut p.phi1),
        ("phi2", &mut p.phi2),
        ("delta1", &mut p.delta1),
        ("delta2", &mut p.delta2),
        ("delta3", &mut p.delta3),
        ("eta", &mut p.eta_value),
        ("p1", &mut p.p1_value),
        ("p2", &mut p.p2_value),
    ];
    for (key, slot) in slots {
        if let Some(x) = float(&table, key)? {
            *slot = x;
        }
    }
    match table.get("control") {
        None => {}
        Some(Value::String(s)) if s == "scheduled" => p.control = ControlLaw::Scheduled,
        Some(Value::Float(x)) => p.control = ControlLaw::Constant(*x),
        Some(Value::Integer(i)) => p.control = ControlLaw::Constant(*i as f64),
        Some(other) => {
            return Err(Error::config("control", format!("expected \"scheduled\" or a number, found {other}")))
        }
    }

    let s = &mut cfg.sim;
    for (key, slot) in [
        ("t_end", &mut s.t_end),
        ("dt", &mut s.dt),
        ("theta0", &mut s.theta0),
        ("v0", &mut s.v0),
        ("rho0", &mut s.rho0),
        ("vartheta", &mut s.vartheta),
    ] {
        if let Some(x) = float(&table, key)? {
            *slot = x;
        }
    }
    if let Some(seed) = uint(&table, "seed")? {
        s.seed = seed;
    }
    if let Some(stride) = uint(&table, "record_stride")? {
        s.record_stride = stride as usize;
    }

    let f = &mut cfg.filter;
    for (key, slot) in [("x_min", &mut f.x_min), ("x_max", &mut f.x_max), ("dx", &mut f.dx)] {
        if let Some(x) = float(&table, key)? {
            *slot = x;
        }
    }
    if let Some(m) = string(&table, "method")? {
        cfg.method = m.parse().map_err(|_| Error::config("method", format!("unknown method `{m}`")))?;
    }
    if let Some(v) = choice(&table, "stencil", &[("upwind", Stencil::Upwind), ("central", Stencil::Central)])? {
        f.stencil = v;
    }
    if let Some(v) = choice(
        &table,
        "zakai_scheme",
        &[("splitting", ZakaiScheme::Splitting), ("euler", ZakaiScheme::Euler)],
    )? {
        f.zakai_scheme = v;
    }
    if let Some(v) = choice(
        &table,
        "ks_integrator",
        &[("exponential", KsIntegrator::Exponential), ("euler", KsIntegrator::Euler)],
    )? {
        f.ks_integrator = v;
    }
    if let Some(v) = choice(
        &table,
        "xbar_mode",
        &[("reconstructed", XbarMode::Reconstructed), ("oracle", XbarMode::Oracle)],
    )? {
        f.xbar_mode = v;
    }
    match table.get("prior") {
        None => {}
        Some(Value::String(s)) if s == "uniform" => cfg.prior = Prior::Uniform,
        Some(Value::Float(x)) => cfg.prior = Prior::Point(*x),
        Some(Value::Integer(i)) => cfg.prior = Prior::Point(*i as f64),
        Some(other) => return Err(Error::config("prior", format!("expected \"uniform\" or a number, found {other}"))),
    }

    if let Some(x) = float(&table, "dtau")? {
        cfg.dtau = x;
    }
    if let Some(x) = float(&table, "filter_vartheta")? {
        cfg.discrete.vartheta = x;
    }
    if let Some(q) = uint(&table, "quad_order")? {
        cfg.discrete.quad_order = q as usize;
    }
    if let Some(n) = uint(&table, "particles")? {
        cfg.particles = n as usize;
    }
    if let Some(x) = float(&table, "tau")? {
        cfg.tau = x;
    }
    if let Some(x) = float(&table, "horizon")? {
        cfg.horizon = x;
    }
    if let Some(l) = float_list(&table, "theta0_list")? {
        cfg.theta0_list = l;
    }
    if let Some(l) = float_list(&table, "v0_list")? {
        cfg.v0_list = l;
    }
    if let Some(l) = float_list(&table, "rho0_list")? {
        cfg.rho0_list = l;
    }
    match table.get("methods") {
        None => {}
        Some(Value::Array(items)) => {
            let mut methods = Vec::new();
            for v in items {
                let Value::String(s) = v else {
                    return Err(Error::config("methods", "expected method names"));
                };
                let m: RunMethod = s
                    .parse()
                    .map_err(|_| Error::config("methods", format!("unknown method `{s}`")))?;
                if !methods.contains(&m) {
                    methods.push(m);
                }
            }
            if methods.is_empty() {
                return Err(Error::config("methods", "list must not be empty"));
            }
            cfg.methods = methods;
        }
        Some(other) => return Err(Error::config("methods", format!("expected an array, found {}", other.type_str()))),
    }
    cfg.filter.method = match cfg.method {
        RunMethod::Ks => Method::Ks,
        _ => Method::Zakai,
    };

    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn in_unit(key: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::invalid(key, "must lie in [0, 1]"))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.sim.validate(&self.params)?;
        self.filter.grid().map_err(|e| Error::invalid("dx", e.to_string()))?;
        self.discrete.validate()?;
        if !(self.dtau > 0.0) {
            return Err(Error::invalid("dtau", "must be > 0"));
        }
        if self.particles < 100 {
            return Err(Error::invalid("particles", "need at least 100 particles"));
        }
        // tau is checked against the observation span when predicting
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be >= 0"));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::invalid("horizon", "must be >= 0"));
        }
        if let Prior::Point(x) = self.prior {
            in_unit("prior", x)?;
        }
        for x in &self.theta0_list {
            in_unit("theta0_list", *x)?;
        }
        for x in &self.rho0_list {
            in_unit("rho0_list", *x)?;
        }
        for x in &self.v0_list {
            if !(0.0..=self.params.v_max).contains(x) {
                return Err(Error::invalid("v0_list", "must lie in [0, v_max]"));
            }
        }
        Ok(())
    }

    /// Observation stride of the discrete filter in simulator steps.
    pub fn dtau_steps(&self) -> Result<usize> {
        let k = self.dtau / self.sim.dt;
        let r = k.round();
        if r < 1.0 || (k - r).abs() > 1e-6 * r {
            return Err(Error::invalid("dtau", "must be a positive multiple of dt"));
        }
        Ok(r as usize)
    }
}
