use anthracnose_filter::grid::{normalize, posterior_stats, GridDensity, Stencil};
use anthracnose_filter::params::ModelParams;
use anthracnose_filter::predict::{blind_means, filter_then_predict, predict, PredictionRequest};
use anthracnose_filter::sim::{simulate_scenario, SimConfig};
use anthracnose_filter::zakai::{filter_state_at, run_filter_until, FilterSettings};

fn setup() -> (anthracnose_filter::Scenario, FilterSettings, GridDensity) {
    let s = simulate_scenario(&SimConfig { seed: 9, ..SimConfig::default() }, &ModelParams::default()).unwrap();
    let settings = FilterSettings {
        dx: 0.02,
        ..FilterSettings::default()
    };
    let prior = GridDensity::uniform_unit(&settings.grid().unwrap());
    (s, settings, prior)
}

#[test]
fn seam_is_bitwise_associative() {
    let (s, settings, prior) = setup();
    let p = ModelParams::default();
    let grid = settings.grid().unwrap();
    let direct = filter_then_predict(&s.obs, &p, &settings, &prior, 0.4, 0.3).unwrap();
    let (base, _) = filter_state_at(&s.obs, &p, &settings, &prior, 400).unwrap();
    let req = PredictionRequest {
        tau: base.t,
        horizon: 0.3,
        base,
    };
    let staged = predict(&req, &grid, s.obs.dt, &p, Stencil::Upwind).unwrap();
    assert_eq!(direct, staged);
}

#[test]
fn post_tau_observations_are_ignored() {
    let (s, settings, prior) = setup();
    let p = ModelParams::default();
    let a = filter_then_predict(&s.obs, &p, &settings, &prior, 0.3, 0.2).unwrap();
    let mut noisy = s.obs.clone();
    for k in 300..noisy.n_steps() {
        noisy.dx[k] = -noisy.dx[k] * 7.0;
        noisy.dy[k] = 1.0;
    }
    let b = filter_then_predict(&noisy, &p, &settings, &prior, 0.3, 0.2).unwrap();
    assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    // and truncating the path has the same effect
    let c = filter_then_predict(&s.obs.truncated(300), &p, &settings, &prior, 0.3, 0.2).unwrap();
    assert_eq!(a, c);
}

#[test]
fn chained_predictions_match_one_long_prediction() {
    let (s, settings, prior) = setup();
    let p = ModelParams::default();
    let grid = settings.grid().unwrap();
    let (base, _) = filter_state_at(&s.obs, &p, &settings, &prior, 200).unwrap();
    let long = predict(
        &PredictionRequest { tau: 0.2, horizon: 0.5, base: base.clone() },
        &grid,
        1e-3,
        &p,
        Stencil::Upwind,
    )
    .unwrap();
    let first = predict(
        &PredictionRequest { tau: 0.2, horizon: 0.2, base: base.clone() },
        &grid,
        1e-3,
        &p,
        Stencil::Upwind,
    )
    .unwrap();
    let mut mid = base;
    mid.density = GridDensity::unnormalized(first.values);
    mid.t = 0.4;
    let second = predict(&PredictionRequest { tau: 0.4, horizon: 0.3, base: mid }, &grid, 1e-3, &p, Stencil::Upwind).unwrap();
    for (a, b) in long.values.iter().zip(&second.values) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn prediction_from_the_prior_is_the_blind_filter() {
    let (_, settings, prior) = setup();
    let p = ModelParams::default();
    let grid = settings.grid().unwrap();
    let means = blind_means(&prior, &grid, &p, 1e-3, 300, Stencil::Upwind).unwrap();
    let base = anthracnose_filter::zakai::FilterRunState::new(&prior, &grid).unwrap();
    let pi = predict(&PredictionRequest { tau: 0.0, horizon: 0.3, base }, &grid, 1e-3, &p, Stencil::Upwind).unwrap();
    let (m, _) = posterior_stats(&pi, &grid);
    assert!((m - means[300]).abs() < 1e-12);
}

#[test]
fn predicted_mean_moves_toward_equilibrium() {
    // θ relaxes toward 1/w; a posterior well below it drifts upward
    let (s, settings, prior) = setup();
    let p = ModelParams::default();
    let grid = settings.grid().unwrap();
    let tr = run_filter_until(&s.obs, &p, &settings, &prior, 100).unwrap();
    let (m0, _) = posterior_stats(&normalize(&tr.final_density, &grid).unwrap().0, &grid);
    let pi = filter_then_predict(&s.obs, &p, &settings, &prior, 0.1, 0.3).unwrap();
    let (m1, _) = posterior_stats(&pi, &grid);
    assert!(m0 < 0.5, "posterior mean {m0}");
    assert!(m1 > m0, "{m0} -> {m1}");
}
