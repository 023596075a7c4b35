use anthracnose_filter::grid::{fp_step, GridDensity, Stencil};
use anthracnose_filter::params::ModelParams;
use anthracnose_filter::sim::{simulate_scenario, SimConfig};
use anthracnose_filter::zakai::{run_filter, FilterSettings, Method, XbarMode, ZakaiScheme};

fn scenario(seed: u64, theta0: f64) -> anthracnose_filter::Scenario {
    let cfg = SimConfig {
        seed,
        theta0,
        ..SimConfig::default()
    };
    simulate_scenario(&cfg, &ModelParams::default()).unwrap()
}

#[test]
fn default_run_is_positive_with_rare_flooring() {
    let p = ModelParams::default();
    let settings = FilterSettings {
        keep_densities: true,
        ..FilterSettings::default()
    };
    let prior = GridDensity::uniform_unit(&settings.grid().unwrap());
    for seed in 0..5 {
        let s = scenario(seed, 0.05);
        let tr = run_filter(&s.obs, &p, &settings, &prior).unwrap();
        assert!(tr.densities.iter().flatten().all(|&x| x >= 0.0));
        assert!(tr.floor_rate() < 0.01, "floor rate {}", tr.floor_rate());
        assert!(tr.max_norm_error <= 1e-12);
    }
}

#[test]
fn normalized_zakai_matches_ks() {
    let p = ModelParams::default();
    for seed in 0..5 {
        let s = scenario(20 + seed, 0.75);
        let z = FilterSettings {
            dx: 0.02,
            keep_densities: true,
            ..FilterSettings::default()
        };
        let ks = FilterSettings {
            method: Method::Ks,
            ..z.clone()
        };
        let prior = GridDensity::uniform_unit(&z.grid().unwrap());
        let a = run_filter(&s.obs, &p, &z, &prior).unwrap();
        let b = run_filter(&s.obs, &p, &ks, &prior).unwrap();
        for (x, y) in a.densities.iter().zip(&b.densities) {
            let l1: f64 = x.iter().zip(y).map(|(u, v)| (u - v).abs()).sum::<f64>() * z.dx;
            assert!(l1 < 1e-10, "L1 {l1}");
        }
    }
}

#[test]
fn fokker_planck_conserves_mass_with_inward_drift() {
    // no observations, g₁ ≈ 0; the default drift points inward at both ends
    let p = ModelParams {
        delta1: 1e-300,
        ..ModelParams::default()
    };
    let settings = FilterSettings::default();
    let grid = settings.grid().unwrap();
    let mut values = GridDensity::uniform_unit(&grid).values;
    let start = grid.integrate(&values);
    for k in 0..1000 {
        fp_step(&mut values, &grid, k as f64 * 1e-3, 1e-3, &p, Stencil::Upwind);
    }
    assert!((grid.integrate(&values) - start).abs() < 1e-3);
}

#[test]
fn filter_tracks_the_hidden_rate() {
    let p = ModelParams::default();
    let settings = FilterSettings {
        dx: 0.01,
        ..FilterSettings::default()
    };
    let prior = GridDensity::uniform_unit(&settings.grid().unwrap());
    for (seed, theta0) in [(1, 0.05), (2, 0.75)] {
        let s = scenario(seed, theta0);
        let tr = run_filter(&s.obs, &p, &settings, &prior).unwrap();
        // after the prior has washed out the posterior mean sits near θ
        let tail: Vec<f64> = (500..=1000).map(|i| (tr.mean[i] - s.truth.theta[i]).abs()).collect();
        let mae = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mae < 0.05, "seed {seed}: tail MAE {mae}");
    }
}

#[test]
fn oracle_and_reconstructed_means_agree_once_locked_on() {
    let p = ModelParams::default();
    let s = scenario(5, 0.05);
    let rec = FilterSettings {
        dx: 0.02,
        ..FilterSettings::default()
    };
    let ora = FilterSettings {
        xbar_mode: XbarMode::Oracle,
        ..rec.clone()
    };
    let prior = GridDensity::uniform_unit(&rec.grid().unwrap());
    let a = run_filter(&s.obs, &p, &rec, &prior).unwrap();
    let b = run_filter(&s.obs, &p, &ora, &prior).unwrap();
    let gap = (500..=1000).map(|i| (a.mean[i] - b.mean[i]).abs()).sum::<f64>() / 501.0;
    assert!(gap < 0.05, "gap {gap}");
}

#[test]
fn central_stencil_runs() {
    let p = ModelParams::default();
    let s = scenario(6, 0.05);
    let settings = FilterSettings {
        stencil: Stencil::Central,
        dx: 0.02,
        ..FilterSettings::default()
    };
    let prior = GridDensity::uniform_unit(&settings.grid().unwrap());
    let tr = run_filter(&s.obs, &p, &settings, &prior).unwrap();
    assert!(tr.mean.iter().all(|m| (0.0..=1.0).contains(m)));
    assert!(tr.log_zeta.iter().all(|z| z.is_finite()));
}

#[test]
fn literal_euler_scheme_fails_loudly_or_stays_finite() {
    // the explicit observation update 1 + h·dX can go negative on this path
    let p = ModelParams::default();
    for seed in 0..5 {
        let s = scenario(6 + seed, 0.05);
        let settings = FilterSettings {
            zakai_scheme: ZakaiScheme::Euler,
            ..FilterSettings::default()
        };
        let prior = GridDensity::uniform_unit(&settings.grid().unwrap());
        match run_filter(&s.obs, &p, &settings, &prior) {
            Ok(tr) => assert!(tr.mean.iter().all(|m| m.is_finite())),
            Err(e) => assert!(e.is_numerical(), "{e}"),
        }
    }
}
