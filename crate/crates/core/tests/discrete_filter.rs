use anthracnose_filter::discrete::{every_kth, run_discrete, theta_image, ThetaScheme};
use anthracnose_filter::grid::GridDensity;
use anthracnose_filter::model::TimeCoeffs;
use anthracnose_filter::params::ModelParams;
use anthracnose_filter::sim::{simulate_scenario, SimConfig};
use anthracnose_filter::zakai::{run_filter, FilterSettings, XbarMode};

fn setup(seed: u64) -> (anthracnose_filter::Scenario, FilterSettings, Vec<f64>) {
    let s = simulate_scenario(&SimConfig { seed, ..SimConfig::default() }, &ModelParams::default()).unwrap();
    let settings = FilterSettings {
        dx: 0.02,
        ..FilterSettings::default()
    };
    let prior = GridDensity::uniform_unit(&settings.grid().unwrap()).values;
    (s, settings, prior)
}

#[test]
fn normalizer_two_ways_agree_over_a_run() {
    let (s, settings, prior) = setup(1);
    let p = ModelParams::default();
    let idx = every_kth(s.obs.n_steps(), 10);
    let tr = run_discrete(&s.obs, &p, &settings, &ThetaScheme::default(), &idx, &prior).unwrap();
    assert!(tr.max_zeta_mismatch < 1e-12, "{}", tr.max_zeta_mismatch);
    assert_eq!(tr.mean.len(), idx.len());
    assert!(tr.log_zeta.iter().all(|z| z.is_finite()));
}

#[test]
fn discrete_filter_approaches_continuous_one() {
    let p = ModelParams::default();
    let mut gaps = [0.0; 3];
    for seed in 0..4 {
        let (s, settings, prior) = setup(10 + seed);
        let z = run_filter(&s.obs, &p, &settings, &GridDensity::unnormalized(prior.clone())).unwrap();
        for (j, k) in [20, 10, 5].into_iter().enumerate() {
            let idx = every_kth(s.obs.n_steps(), k);
            let d = run_discrete(&s.obs, &p, &settings, &ThetaScheme::default(), &idx, &prior).unwrap();
            gaps[j] += idx.iter().zip(&d.mean).skip(1).map(|(&i, m)| (m - z.mean[i]).abs()).sum::<f64>()
                / (idx.len() - 1) as f64;
        }
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn implicit_images_approach_equilibrium_monotonically() {
    let p = ModelParams::default();
    for dtau in [1e-3, 0.1, 10.0] {
        for x0 in [0.0, 0.2, 0.95] {
            let tc = TimeCoeffs::at(0.3, &p);
            let eq = 1.0 / tc.w;
            let mut x = x0;
            let mut dist = (x - eq).abs();
            for _ in 0..50 {
                x = theta_image(x, 0.0, dtau, &tc, 1.0);
                let d = (x - eq).abs();
                assert!(d <= dist + 1e-15, "dtau {dtau}, x0 {x0}");
                dist = d;
            }
        }
    }
}

#[test]
fn explicit_scheme_and_oracle_means_run() {
    let (s, settings, prior) = setup(2);
    let p = ModelParams::default();
    let idx = every_kth(s.obs.n_steps(), 10);
    let explicit = ThetaScheme {
        vartheta: 0.0,
        ..ThetaScheme::default()
    };
    let oracle = FilterSettings {
        xbar_mode: XbarMode::Oracle,
        ..settings.clone()
    };
    for (st, sc) in [(&settings, &explicit), (&oracle, &ThetaScheme::default())] {
        let tr = run_discrete(&s.obs, &p, st, sc, &idx, &prior).unwrap();
        assert!(tr.mean.iter().all(|m| (0.0..=1.0).contains(m)));
        assert!(tr.var.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn bad_indices_are_rejected() {
    let (s, settings, prior) = setup(3);
    let p = ModelParams::default();
    let sc = ThetaScheme::default();
    assert!(run_discrete(&s.obs, &p, &settings, &sc, &[1, 2], &prior).is_err());
    assert!(run_discrete(&s.obs, &p, &settings, &sc, &[0, 5, 5], &prior).is_err());
    assert!(run_discrete(&s.obs, &p, &settings, &sc, &[0, 5000], &prior).is_err());
}
