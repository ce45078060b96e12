use xva_core::curves::PiecewiseCurve;
use xva_core::instruments::CollateralSpec;
use xva_core::mc_engine::{
    exposure_profile, sample_default_times, simulate_paths, Estimate, ModelDynamics,
};

fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn discounted_spot_is_a_martingale() {
    let d = ModelDynamics::lognormal(100.0, 0.02, 0.2);
    let paths = simulate_paths(&d, 1.0, 4, 100_000, 11).unwrap();
    let ratio: Vec<f64> = (0..paths.n_paths())
        .map(|p| paths.spot(p)[4] / 100.0)
        .collect();
    let est = Estimate::from_samples(&ratio);
    assert!((est.value - 0.02f64.exp()).abs() < 3.0 * est.se, "{est:?}");
}

#[test]
fn survival_and_first_to_default_match_exponential_formulas() {
    let mut d = ModelDynamics::lognormal(100.0, 0.02, 0.0);
    d.pi0_c = 0.05 * 0.6;
    d.pi0_b = 0.02 * 0.6;
    let paths = simulate_paths(&d, 1.0, 10, 100_000, 5).unwrap();
    let paths = sample_default_times(&paths, 0.4, 0.4, 0).unwrap();

    let survived: Vec<f64> = paths
        .tau_c()
        .iter()
        .map(|&t| (t > 1.0) as u8 as f64)
        .collect();
    let est = Estimate::from_samples(&survived);
    assert!(
        (est.value - (-0.05f64).exp()).abs() < 3.0 * est.se,
        "{est:?}"
    );

    let first: Vec<f64> = paths
        .tau_c()
        .iter()
        .zip(paths.tau_b())
        .map(|(&c, &b)| (c < b && c < 1.0) as u8 as f64)
        .collect();
    let est = Estimate::from_samples(&first);
    let expected = 0.05 / 0.07 * (1.0 - (-0.07f64).exp());
    assert!(
        (est.value - expected).abs() < 3.0 * est.se,
        "{est:?} vs {expected}"
    );
}

#[test]
fn paths_are_independent_of_worker_count() {
    let mut d = ModelDynamics::lognormal(100.0, 0.01, 0.3);
    d.pi0_c = 0.02;
    d.pi0_b = 0.01;
    d.vol_c = 0.01;
    d.vol_b = 0.005;
    d.rho_sc = 0.3;
    d.rho_cb = 0.5;
    let make = || {
        let p = simulate_paths(&d, 2.0, 24, 3_000, 99).unwrap();
        sample_default_times(&p, 0.4, 0.3, 7).unwrap()
    };
    let one = run_in_pool(1, make);
    let four = run_in_pool(4, make);
    assert_eq!(one, four);
}

#[test]
fn spreads_stay_nonnegative_and_spot_positive() {
    let mut d = ModelDynamics::lognormal(50.0, 0.0, 0.8);
    d.pi0_c = 0.001;
    d.vol_c = 0.05;
    d.drift_c = -0.01;
    let paths = simulate_paths(&d, 5.0, 50, 2_000, 3).unwrap();
    for p in 0..paths.n_paths() {
        assert!(paths.spot(p).iter().all(|&s| s > 0.0));
        assert!(paths.pi_c(p).iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn exposure_identity_and_error_scaling() {
    let mut d = ModelDynamics::lognormal(100.0, 0.02, 0.25);
    d.pi0_c = 0.02;
    d.pi0_b = 0.01;
    let ois = PiecewiseCurve::flat(0.02);
    let run = |n: usize| {
        let p = simulate_paths(&d, 1.0, 12, n, 21).unwrap();
        sample_default_times(&p, 0.4, 0.4, 1).unwrap()
    };
    let small = run(20_000);
    let large = run(40_000);
    let none = CollateralSpec::uncollateralized();
    let value = |_: f64, s: &xva_core::mc_engine::State| s.s - 100.0;
    let prof = exposure_profile(&small, &ois, value, &none);
    for k in 0..small.n_times() {
        let t = small.times()[k];
        let mean: f64 = (0..small.n_paths())
            .map(|p| {
                let alive = small.tau_c()[p] > t && small.tau_b()[p] > t;
                if alive {
                    small.spot(p)[k] - 100.0
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / small.n_paths() as f64;
        assert!((prof.epe[k] - prof.ene[k] - mean).abs() < 1e-10);
    }
    let prof2 = exposure_profile(&large, &ois, value, &none);
    let ratio = prof.epe_se[12] / prof2.epe_se[12];
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
}
