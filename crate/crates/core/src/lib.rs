//! Simulation and nonlinear filtering of a lumped stochastic model of
//! anthracnose in fruit.
//!
//! The hidden signal is the inhibition rate `θ ∈ [0, 1]`; the observations
//! are logit-transformed fruit volume and rot proportion with additive
//! Brownian noise. The crate provides
//!
//! - coefficient evaluation ([`model`]) and path simulation ([`sim`]),
//! - grid solvers for the Zakai and Kushner–Stratonovich equations
//!   ([`grid`], [`zakai`]) and prediction past the last observation
//!   ([`predict`]),
//! - a filter for discretely sampled observations ([`discrete`]),
//! - a bootstrap particle filter for cross-checks ([`particle`]),
//! - config loading, CSV output and scenario sweeps ([`config`], [`io`],
//!   [`compare`]).

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod discrete;
pub mod error;
pub mod grid;
pub mod io;
pub mod model;
pub mod params;
pub mod particle;
pub mod predict;
pub mod sim;
pub mod zakai;

pub use config::{load_config, parse_config, Prior, RunMethod, ScenarioConfig};
pub use error::{Error, Result};
pub use grid::{build_grid, normalize, posterior_stats, Grid, GridDensity, Stencil};
pub use params::{ControlLaw, HiddenState, ModelParams, ObsCoords};
pub use sim::{simulate_scenario, ObsPath, Scenario, SimConfig, TruthPath};
pub use zakai::{run_filter, FilterSettings, FilterTrace, Method, XbarMode};
