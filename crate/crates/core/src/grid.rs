//! Uniform 1-D grids, densities on them and the Fokker–Planck operator.

use crate::error::{Error, Result};
use crate::model::TimeCoeffs;
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub nodes: Vec<f64>,
}

/// Uniform grid including both endpoints.
pub fn build_grid(x_min: f64, x_max: f64, dx: f64) -> Result<Grid> {
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::Grid(format!("dx must be positive, got {dx}")));
    }
    if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
        return Err(Error::Grid(format!("empty interval [{x_min}, {x_max}]")));
    }
    let cells = (x_max - x_min) / dx;
    let n = cells.round();
    if (cells - n).abs() > 1e-9 * cells.max(1.0) {
        return Err(Error::Grid(format!(
            "dx = {dx} does not divide [{x_min}, {x_max}] evenly"
        )));
    }
    let n = n as usize;
    if n < 2 {
        return Err(Error::Grid(format!("need at least 3 nodes, got {}", n + 1)));
    }
    let nodes = (0..=n)
        .map(|i| if i == n { x_max } else { x_min + i as f64 * dx })
        .collect();
    Ok(Grid {
        x_min,
        x_max,
        dx,
        nodes,
    })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trapezoid-rule integral of node values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        trapezoid(values, self.dx)
    }

    /// Trapezoid integral of `φ(x)·values`.
    pub fn integrate_with(&self, values: &[f64], phi: impl Fn(f64) -> f64) -> f64 {
        let n = values.len();
        let mut s = 0.0;
        for (i, (&x, &v)) in self.nodes.iter().zip(values).enumerate() {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            s += w * phi(x) * v;
        }
        s * self.dx
    }
}

pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values {
        [] => 0.0,
        [v] => 0.0 * v,
        [first, inner @ .., last] => dx * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    /// The unnormalized conditional density ς.
    Unnormalized,
    /// The conditional density π, integrating to one.
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub values: Vec<f64>,
    pub kind: DensityKind,
}

impl GridDensity {
    pub fn unnormalized(values: Vec<f64>) -> Self {
        GridDensity {
            values,
            kind: DensityKind::Unnormalized,
        }
    }

    /// Uniform density on `[0, 1]`, zero at nodes outside it.
    pub fn uniform_unit(grid: &Grid) -> Self {
        let values = grid
            .nodes
            .iter()
            .map(|&x| if (-1e-12..=1.0 + 1e-12).contains(&x) { 1.0 } else { 0.0 })
            .collect();
        GridDensity::unnormalized(values)
    }

    /// Hat function of unit mass at the node nearest to `x0`.
    pub fn point_mass(grid: &Grid, x0: f64) -> Self {
        let i = (((x0 - grid.x_min) / grid.dx).round().max(0.0) as usize).min(grid.len() - 1);
        let mut values = vec![0.0; grid.len()];
        let edge = i == 0 || i == grid.len() - 1;
        values[i] = if edge { 2.0 } else { 1.0 } / grid.dx;
        GridDensity::unnormalized(values)
    }
}

/// `(π, ζ)` with `ζ` the trapezoid integral of `ς`.
pub fn normalize(density: &GridDensity, grid: &Grid) -> Result<(GridDensity, f64)> {
    let zeta = grid.integrate(&density.values);
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::Grid(format!("cannot normalize a density of mass {zeta}")));
    }
    let values = density.values.iter().map(|v| v / zeta).collect();
    Ok((
        GridDensity {
            values,
            kind: DensityKind::Normalized,
        },
        zeta,
    ))
}

/// Mean and variance under a normalized density.
pub fn posterior_stats(pi: &GridDensity, grid: &Grid) -> (f64, f64) {
    let mean = grid.integrate_with(&pi.values, |x| x);
    let var = grid.integrate_with(&pi.values, |x| (x - mean) * (x - mean));
    (mean, var.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// One-sided drift differences; a Markov-chain generator, so explicit
    /// steps below the rate limit keep the density non-negative.
    #[default]
    Upwind,
    /// Centered differences for drift and diffusion.
    Central,
}

/// Tridiagonal generator `A` of the θ diffusion on a grid, with zero
/// Dirichlet ghost nodes outside the interval:
/// `(Aφ)ᵢ = upᵢ(φᵢ₊₁ − φᵢ) + downᵢ(φᵢ₋₁ − φᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
}

impl Generator {
    pub fn new(grid: &Grid, tc: &TimeCoeffs, stencil: Stencil) -> Self {
        let dx = grid.dx;
        let n = grid.len();
        let mut up = Vec::with_capacity(n);
        let mut down = Vec::with_capacity(n);
        for &x in &grid.nodes {
            let f = tc.theta_drift(x);
            let g = tc.theta_diffusion(x);
            let a = 0.5 * g * g / (dx * dx);
            match stencil {
                Stencil::Upwind => {
                    up.push(f.max(0.0) / dx + a);
                    down.push((-f).max(0.0) / dx + a);
                }
                Stencil::Central => {
                    up.push(f / (2.0 * dx) + a);
                    down.push(-f / (2.0 * dx) + a);
                }
            }
        }
        Generator { up, down }
    }

    pub fn from_coefficients(grid: &Grid, f: &[f64], g: &[f64], stencil: Stencil) -> Self {
        let dx = grid.dx;
        let (up, down) = f
            .iter()
            .zip(g)
            .map(|(&f, &g)| {
                let a = 0.5 * g * g / (dx * dx);
                match stencil {
                    Stencil::Upwind => (f.max(0.0) / dx + a, (-f).max(0.0) / dx + a),
                    Stencil::Central => (f / (2.0 * dx) + a, -f / (2.0 * dx) + a),
                }
            })
            .unzip();
        Generator { up, down }
    }

    /// Largest total jump rate; explicit steps need `h·rate ≤ 1`.
    pub fn max_rate(&self) -> f64 {
        self.up
            .iter()
            .zip(&self.down)
            .map(|(u, d)| (u + d).abs())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let n = phi.len();
        (0..n)
            .map(|i| {
                let right = if i + 1 < n { phi[i + 1] } else { 0.0 };
                let left = if i > 0 { phi[i - 1] } else { 0.0 };
                self.up[i] * (right - phi[i]) + self.down[i] * (left - phi[i])
            })
            .collect()
    }

    /// The discrete Fokker–Planck operator `C⁻¹AᵀCς`, where `C` holds the
    /// trapezoid weights (½ at the two end nodes, 1 inside). This is the
    /// adjoint of `A` in the trapezoid pairing, so the flow conserves the
    /// trapezoid mass that defines `ζ` whenever no probability leaks through
    /// the ghost nodes. On interior-supported densities it equals `Aᵀς`.
    pub fn apply_adjoint(&self, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; s.len()];
        self.apply_adjoint_into(s, &mut out);
        out
    }

    fn apply_adjoint_into(&self, s: &[f64], out: &mut [f64]) {
        let n = s.len();
        let c = |j: usize| if j == 0 || j + 1 == n { 0.5 } else { 1.0 };
        for j in 0..n {
            let mut v = -(self.up[j] + self.down[j]) * s[j];
            if j > 0 {
                v += self.up[j - 1] * s[j - 1] * c(j - 1) / c(j);
            }
            if j + 1 < n {
                v += self.down[j + 1] * s[j + 1] * c(j + 1) / c(j);
            }
            out[j] = v;
        }
    }
}

/// `A¹*ς` at time `t`.
pub fn apply_generator_adjoint(
    density: &GridDensity,
    grid: &Grid,
    t: f64,
    params: &ModelParams,
    stencil: Stencil,
) -> Vec<f64> {
    Generator::new(grid, &TimeCoeffs::at(t, params), stencil).apply_adjoint(&density.values)
}

/// Counts of what a Fokker–Planck step did.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FpStats {
    pub substeps: usize,
    /// Node values that went negative and were floored at zero.
    pub floored: usize,
}

/// Explicit Fokker–Planck evolution over `[t, t + dt]`.
///
/// The interval is split so that each substep satisfies the rate limit; the
/// coefficients are frozen at each substep midpoint.
pub fn fp_step(
    values: &mut [f64],
    grid: &Grid,
    t: f64,
    dt: f64,
    params: &ModelParams,
    stencil: Stencil,
) -> FpStats {
    let mid = Generator::new(grid, &TimeCoeffs::at(t + 0.5 * dt, params), stencil);
    let start = Generator::new(grid, &TimeCoeffs::at(t, params), stencil);
    let end = Generator::new(grid, &TimeCoeffs::at(t + dt, params), stencil);
    let rate = mid.max_rate().max(start.max_rate()).max(end.max_rate());
    let n = ((dt * rate * 1.05).ceil() as usize).max(1);
    let h = dt / n as f64;
    let mut stats = FpStats {
        substeps: n,
        floored: 0,
    };
    let mut buf = vec![0.0; values.len()];
    for j in 0..n {
        let gen = if n == 1 {
            mid.clone()
        } else {
            Generator::new(grid, &TimeCoeffs::at(t + (j as f64 + 0.5) * h, params), stencil)
        };
        gen.apply_adjoint_into(values, &mut buf);
        for (v, d) in values.iter_mut().zip(&buf) {
            *v += h * d;
            if *v < 0.0 {
                *v = 0.0;
                stats.floored += 1;
            }
        }
    }
    stats
}

/// Cumulative distribution of a piecewise-linear density at node `i`.
fn node_cdf(grid: &Grid, pi: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(pi.len());
    let mut acc = 0.0;
    c.push(0.0);
    for w in pi.windows(2) {
        acc += 0.5 * grid.dx * (w[0] + w[1]);
        c.push(acc);
    }
    c
}

/// CDF of the piecewise-linear interpolant of `pi` (assumed normalized).
pub fn density_cdf(grid: &Grid, pi: &[f64], x: f64) -> f64 {
    if x <= grid.x_min {
        return 0.0;
    }
    if x >= grid.x_max {
        return grid.integrate(pi);
    }
    let c = node_cdf(grid, pi);
    let i = (((x - grid.x_min) / grid.dx).floor() as usize).min(grid.len() - 2);
    let s = x - grid.nodes[i];
    let slope = (pi[i + 1] - pi[i]) / grid.dx;
    c[i] + pi[i] * s + 0.5 * slope * s * s
}

/// Inverse-CDF sampling from the piecewise-linear interpolant of `pi`.
pub fn sample_density(grid: &Grid, pi: &[f64], uniforms: &[f64]) -> Vec<f64> {
    let c = node_cdf(grid, pi);
    let total = *c.last().unwrap_or(&0.0);
    uniforms
        .iter()
        .map(|&u| {
            let target = u * total;
            let i = c.partition_point(|&ci| ci <= target).saturating_sub(1).min(grid.len() - 2);
            let r = target - c[i];
            let (p0, p1) = (pi[i], pi[i + 1]);
            let slope = (p1 - p0) / grid.dx;
            // solve p0·s + slope·s²/2 = r on [0, dx]
            let s = if slope.abs() < 1e-300 {
                if p0 > 0.0 { r / p0 } else { 0.0 }
            } else {
                let disc = (p0 * p0 + 2.0 * slope * r).max(0.0);
                2.0 * r / (p0 + disc.sqrt())
            };
            grid.nodes[i] + s.clamp(0.0, grid.dx)
        })
        .collect()
}
