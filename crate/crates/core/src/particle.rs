//! Bootstrap particle filter used as an independent check on the grid
//! solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::TimeCoeffs;
use crate::params::ModelParams;
use crate::sim::{advance_mean_obs, theta_step, ObsPath};
use crate::zakai::XbarMode;

const STREAM_INIT: u64 = 11;
const STREAM_PROPAGATE: u64 = 12;
const STREAM_RESAMPLE: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParticleInit {
    /// Uniform on `[0, 1]`, matching the default grid prior.
    Uniform,
    /// Every particle at the same point.
    Point(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfSettings {
    pub n_particles: usize,
    pub seed: u64,
    pub init: ParticleInit,
    pub xbar_mode: XbarMode,
    /// Implicitness of the propagation scheme, as in the simulator.
    pub vartheta: f64,
    /// Resample when `ESS < threshold·N`.
    pub resample_threshold: f64,
}

impl Default for PfSettings {
    fn default() -> Self {
        PfSettings {
            n_particles: 5000,
            seed: 0,
            init: ParticleInit::Uniform,
            xbar_mode: XbarMode::Reconstructed,
            vartheta: 0.5,
            resample_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    /// Normalized weights.
    pub weights: Vec<f64>,
    /// Unnormalized log-weights since the last resampling.
    log_weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>) -> Self {
        let n = positions.len();
        ParticleEnsemble {
            positions,
            weights: vec![1.0 / n as f64; n],
            log_weights: vec![0.0; n],
        }
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean_var(&self) -> (f64, f64) {
        let m: f64 = self.weights.iter().zip(&self.positions).map(|(w, x)| w * x).sum();
        let v: f64 = self.weights.iter().zip(&self.positions).map(|(w, x)| w * (x - m) * (x - m)).sum();
        (m, v.max(0.0))
    }

    /// Adds log-likelihood increments and renormalizes; returns the log of the
    /// weighted mean likelihood, i.e. the normalizer increment.
    fn reweight(&mut self, increments: &[f64]) -> Result<f64> {
        // previous normalized weights are needed for the normalizer increment
        let shift_inc = increments.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift_inc.is_finite() {
            return Err(Error::FilterCollapse { t: f64::NAN });
        }
        let avg: f64 = self
            .weights
            .iter()
            .zip(increments)
            .map(|(w, l)| w * (l - shift_inc).exp())
            .sum();
        for (lw, l) in self.log_weights.iter_mut().zip(increments) {
            *lw += l;
        }
        let shift = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, lw) in self.weights.iter_mut().zip(&self.log_weights) {
            *w = (lw - shift).exp();
            total += *w;
        }
        for w in &mut self.weights {
            *w /= total;
        }
        // keep log-weights bounded
        for lw in &mut self.log_weights {
            *lw -= shift;
        }
        Ok(shift_inc + avg.ln())
    }

    fn resample(&mut self, u0: f64) {
        let idx = resample_systematic_with(&self.weights, u0);
        self.positions = idx.iter().map(|&i| self.positions[i]).collect();
        let n = self.positions.len();
        self.weights = vec![1.0 / n as f64; n];
        self.log_weights = vec![0.0; n];
    }
}

/// Systematic resampling with offset `u0 ∈ [0, 1)`.
pub fn resample_systematic_with(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..n {
        let target = (u0 + k as f64) / n as f64 * total;
        while i + 1 < n && cum + weights[i] <= target {
            cum += weights[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

pub fn resample_systematic<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    resample_systematic_with(weights, rng.random::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfTrace {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub ess: Vec<f64>,
    pub resamples: usize,
    /// Estimate of `ln ζ_t` from the weight increments.
    pub log_zeta: Vec<f64>,
}

pub fn pf_run(obs: &ObsPath, params: &ModelParams, settings: &PfSettings) -> Result<PfTrace> {
    params.validate()?;
    let n = settings.n_particles;
    if n < 100 {
        return Err(Error::invalid("particles", "need at least 100 particles"));
    }
    if !(0.0..=1.0).contains(&settings.vartheta) {
        return Err(Error::invalid("vartheta", "must lie in [0, 1]"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(settings.seed);
    init_rng.set_stream(STREAM_INIT);
    let positions = match settings.init {
        ParticleInit::Uniform => (0..n).map(|_| init_rng.random::<f64>()).collect(),
        ParticleInit::Point(x) => vec![x; n],
    };
    let mut ens = ParticleEnsemble::new(positions);
    let mut prop_rng = ChaCha8Rng::seed_from_u64(settings.seed);
    prop_rng.set_stream(STREAM_PROPAGATE);
    let mut res_rng = ChaCha8Rng::seed_from_u64(settings.seed);
    res_rng.set_stream(STREAM_RESAMPLE);

    let d2 = params.delta2 * params.delta2;
    let d3 = params.delta3 * params.delta3;
    let dt = obs.dt;
    let sd = dt.sqrt();
    let m = settings.vartheta;
    let (m0, v0) = ens.mean_var();
    let mut trace = PfTrace {
        times: vec![0.0],
        mean: vec![m0],
        var: vec![v0],
        ess: vec![ens.ess()],
        resamples: 0,
        log_zeta: vec![0.0],
    };
    let (mut xb, mut yb) = (obs.x[0], obs.y[0]);
    let mut log_zeta = 0.0;
    let mut normals = vec![0.0; n];
    let mut incr = vec![0.0; n];

    for k in 0..obs.n_steps() {
        let t = k as f64 * dt;
        if settings.xbar_mode == XbarMode::Oracle {
            xb = obs.xbar[k];
            yb = obs.ybar[k];
        }
        let mean_before = trace.mean[k];
        let o = TimeCoeffs::at(t, params).obs(xb, yb);
        let (d_x, d_y) = (obs.dx[k], obs.dy[k]);
        incr.par_iter_mut().zip(ens.positions.par_iter()).for_each(|(l, &x)| {
            let f = o.f(x);
            let g = o.g(x);
            *l = f / d2 * d_x - 0.5 * f * f / d2 * dt + g / d3 * d_y - 0.5 * g * g / d3 * dt;
        });
        log_zeta += ens.reweight(&incr).map_err(|_| Error::FilterCollapse { t })?;

        for z in normals.iter_mut() {
            *z = StandardNormal.sample(&mut prop_rng);
        }
        let tc = TimeCoeffs::at(t + m * dt, params);
        ens.positions.par_iter_mut().zip(normals.par_iter()).for_each(|(x, &z)| {
            *x = theta_step(&tc, *x, sd * z, dt, m).clamp(0.0, 1.0);
        });

        let ess = ens.ess();
        let (mean, var) = ens.mean_var();
        trace.times.push((k + 1) as f64 * dt);
        trace.mean.push(mean);
        trace.var.push(var);
        trace.ess.push(ess);
        trace.log_zeta.push(log_zeta);
        if ess < settings.resample_threshold * n as f64 {
            ens.resample(res_rng.random::<f64>());
            trace.resamples += 1;
        }
        if settings.xbar_mode == XbarMode::Reconstructed {
            let (nx, ny) = advance_mean_obs(t, dt, xb, yb, mean_before, mean, params);
            if nx.is_finite() {
                xb = nx;
            }
            if ny.is_finite() {
                yb = ny;
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_scenario, SimConfig};
    use proptest::prelude::*;

    #[test]
    fn uniform_weights_pick_each_index_once() {
        for u0 in [0.0, 0.3, 0.999] {
            assert_eq!(resample_systematic_with(&[0.25; 4], u0), vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn degenerate_weights_pick_first() {
        assert_eq!(resample_systematic_with(&[1.0, 0.0, 0.0, 0.0], 0.7), vec![0; 4]);
    }

    #[test]
    fn too_few_particles_rejected() {
        let s = simulate_scenario(&SimConfig::default(), &ModelParams::default()).unwrap();
        let err = pf_run(&s.obs, &ModelParams::default(), &PfSettings { n_particles: 10, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains("particles"));
    }

    #[test]
    fn flat_likelihood_keeps_uniform_weights() {
        // β ≡ 0 and γ ≡ 0 make both observation drifts vanish
        let p = ModelParams { b2: 0.0, b3: 0.0, ..ModelParams::default() };
        let cfg = SimConfig { t_end: 0.2, ..SimConfig::default() };
        let s = simulate_scenario(&cfg, &p).unwrap();
        let tr = pf_run(&s.obs, &p, &PfSettings { n_particles: 500, ..Default::default() }).unwrap();
        assert_eq!(tr.resamples, 0);
        assert!(tr.ess.iter().all(|&e| (e - 500.0).abs() < 1e-9));
    }

    #[test]
    fn point_ensemble_without_noise_is_deterministic_path() {
        let p = ModelParams { delta1: 1e-300, ..ModelParams::default() };
        let cfg = SimConfig { t_end: 0.3, theta0: 0.05, ..SimConfig::default() };
        let s = simulate_scenario(&cfg, &p).unwrap();
        let settings = PfSettings { n_particles: 200, init: ParticleInit::Point(0.05), ..Default::default() };
        let tr = pf_run(&s.obs, &p, &settings).unwrap();
        for (a, b) in tr.mean.iter().zip(&s.truth.theta) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let p = ModelParams::default();
        let cfg = SimConfig { t_end: 0.1, ..SimConfig::default() };
        let s = simulate_scenario(&cfg, &p).unwrap();
        let st = PfSettings { n_particles: 300, seed: 9, ..Default::default() };
        assert_eq!(pf_run(&s.obs, &p, &st).unwrap(), pf_run(&s.obs, &p, &st).unwrap());
    }

    proptest! {
        #[test]
        fn systematic_counts_bracket(ws in prop::collection::vec(0.0f64..1.0, 1..40), u0 in 0.0f64..1.0) {
            let total: f64 = ws.iter().sum();
            prop_assume!(total > 1e-6);
            let w: Vec<f64> = ws.iter().map(|x| x / total).collect();
            let n = w.len();
            let idx = resample_systematic_with(&w, u0);
            prop_assert_eq!(idx.len(), n);
            let mut counts = vec![0usize; n];
            for i in idx { counts[i] += 1; }
            for (c, wi) in counts.iter().zip(&w) {
                let e = wi * n as f64;
                prop_assert!(*c as f64 >= e.floor() - 1e-9 - 0.0 && *c as f64 <= e.ceil() + 1e-9,
                    "count {} for expected {}", c, e);
            }
        }
    }
}
