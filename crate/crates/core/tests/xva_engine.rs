use xva_core::bond_pricer::price_riskless_recovery;
use xva_core::curves::{CounterpartyProfile, PiecewiseCurve};
use xva_core::instruments::{
    CashflowSchedule, CollateralSpec, Instrument, InstrumentKind, OptionType,
};
use xva_core::mc_engine::{
    sample_default_times, simulate_paths_for_profiles, ModelDynamics, PathSet,
};
use xva_core::xva_engine::*;

const C: f64 = 0.02;

fn ois() -> PiecewiseCurve {
    PiecewiseCurve::flat(C)
}

fn market(cpty: (f64, f64), bank: (f64, f64)) -> Market {
    Market {
        ois: ois(),
        counterparty: CounterpartyProfile::flat(0.4, cpty.0, cpty.1).unwrap(),
        bank: CounterpartyProfile::flat(0.4, bank.0, bank.1).unwrap(),
        dynamics: ModelDynamics::lognormal(100.0, C, 0.2),
    }
}

fn zcb(quantity: f64, maturity: f64) -> Trade {
    let mut instrument = Instrument::bond(CashflowSchedule::zero_coupon(100.0, maturity).unwrap());
    instrument.quantity = quantity;
    Trade {
        instrument,
        collateral: CollateralSpec::uncollateralized(),
    }
}

fn forward() -> Trade {
    Trade {
        instrument: Instrument::new(
            InstrumentKind::Forward {
                strike: 100.0,
                expiry: 1.0,
            },
            1.0,
        )
        .unwrap(),
        collateral: CollateralSpec::uncollateralized(),
    }
}

fn call() -> Trade {
    Trade {
        instrument: Instrument::new(
            InstrumentKind::EuropeanOption {
                option: OptionType::Call,
                strike: 100.0,
                expiry: 1.0,
            },
            1.0,
        )
        .unwrap(),
        collateral: CollateralSpec::uncollateralized(),
    }
}

fn mc(n_paths: usize) -> SolverParams {
    SolverParams {
        n_paths,
        ..Default::default()
    }
}

fn pde(n_steps: usize) -> SolverParams {
    SolverParams {
        backend: Backend::Pde,
        n_steps,
        ..Default::default()
    }
}

/// Composite Simpson rule, used as an independent oracle for one-dimensional integrals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

#[test]
fn default_free_issuer_bond_prices_at_funding_rate() {
    let expected = 100.0 * (-(C + 0.01_f64)).exp();
    let m = Market {
        bank: CounterpartyProfile::default_free(),
        ..market((0.0, 0.01), (0.0, 0.0))
    };
    let bond_mode = |p: SolverParams| SolverParams {
        bond_mode: true,
        ..p
    };

    let r = fair_value_recursive(&zcb(1.0, 1.0), &m, &bond_mode(mc(2000))).unwrap();
    assert_eq!(r.status, Status::Converged);
    assert!((r.fair_value - expected).abs() < 1e-6, "{}", r.fair_value);
    assert!((r.cfva - (100.0 * (-C).exp() - expected)).abs() < 1e-6);

    let r = fair_value_recursive(&zcb(1.0, 1.0), &m, &bond_mode(pde(1000))).unwrap();
    assert!((r.fair_value - expected).abs() < 1e-4, "{}", r.fair_value);
}

#[test]
fn recursive_bond_reproduces_riskless_recovery_price() {
    let schedule = CashflowSchedule::fixed_coupon(100.0, 0.05, 5.0, 1).unwrap();
    let m = Market {
        bank: CounterpartyProfile::default_free(),
        ..market((0.03, 0.01), (0.0, 0.0))
    };
    let oracle = price_riskless_recovery(&schedule, &ois(), &m.counterparty, 0.0).unwrap();
    let trade = Trade {
        instrument: Instrument::bond(schedule),
        collateral: CollateralSpec::uncollateralized(),
    };
    let params = SolverParams {
        bond_mode: true,
        ..pde(200)
    };
    let r = fair_value_recursive(&trade, &m, &params).unwrap();
    assert!(
        (r.fair_value / oracle - 1.0).abs() < 1e-3,
        "{} vs {oracle}",
        r.fair_value
    );

    let params = SolverParams {
        bond_mode: true,
        ..mc(20_000)
    };
    let r = fair_value_recursive(&trade, &m, &params).unwrap();
    let se = r.standard_errors.unwrap().fair_value;
    assert!(
        (r.fair_value - oracle).abs() < 3.0 * se,
        "{} ± {se} vs {oracle}",
        r.fair_value
    );
}

#[test]
fn zero_basis_needs_one_iteration_and_matches_first_order() {
    let m = market((0.03, 0.0), (0.01, 0.0));
    let rec = fair_value_recursive(&forward(), &m, &mc(4000)).unwrap();
    let first = first_order_value(&forward(), &m, &mc(4000)).unwrap();
    assert_eq!(rec.iterations, 1);
    assert_eq!(rec.cfva, 0.0);
    assert_eq!(rec.dfva, 0.0);
    assert_eq!(rec.fair_value, first.fair_value);
    assert_eq!(rec.fair_value, rec.v_coll - rec.cva + rec.dva);
}

#[test]
fn bfva_identity_and_fair_value_decomposition() {
    let m = market((0.03, 0.01), (0.02, 0.005));
    for approach in [
        Approach::Recursive,
        Approach::FirstOrder,
        Approach::BondImplied,
    ] {
        for params in [mc(3000), pde(200)] {
            let r = evaluate(&forward(), &m, &params, approach).unwrap().report;
            assert_eq!(r.bfva, r.dfva - r.cfva);
            assert_eq!(r.fair_value, r.v_coll - r.cva + r.dva - r.cfva + r.dfva);
        }
    }
}

#[test]
fn role_swap_flips_the_sign() {
    let m = Market {
        dynamics: ModelDynamics {
            vol_c: 0.004,
            vol_b: 0.002,
            rho_sc: 0.3,
            ..ModelDynamics::lognormal(100.0, C, 0.2)
        },
        ..market((0.03, 0.01), (0.02, 0.005))
    };
    let trade = forward();
    let params = mc(4000);
    let paths = simulate_market(&m, 1.0, &params).unwrap();
    let mirrored = paths.mirrored();
    for approach in [
        Approach::FirstOrder,
        Approach::BondImplied,
        Approach::Recursive,
    ] {
        let bank = evaluate_on_paths(&trade, &m, &params, approach, &paths)
            .unwrap()
            .report;
        let other = evaluate_on_paths(
            &trade.mirrored(),
            &m.mirrored(),
            &params,
            approach,
            &mirrored,
        )
        .unwrap()
        .report;
        let tol = if approach == Approach::Recursive {
            1e-6 * 100.0
        } else {
            1e-12 * 100.0
        };
        assert!(
            (bank.fair_value + other.fair_value).abs() < tol,
            "{approach:?}"
        );
        assert!((bank.cva - other.dva).abs() < tol);
        assert!((bank.cfva - other.dfva).abs() < tol);
    }
}

#[test]
fn perfect_collateral_removes_every_adjustment() {
    let m = market((0.03, 0.01), (0.02, 0.005));
    let trade = Trade {
        collateral: CollateralSpec::perfect(),
        ..call()
    };
    for approach in [
        Approach::Recursive,
        Approach::FirstOrder,
        Approach::BondImplied,
    ] {
        for params in [mc(2000), pde(100)] {
            let r = evaluate(&trade, &m, &params, approach).unwrap().report;
            for x in [r.cva, r.dva, r.cfva, r.dfva, r.bfva] {
                assert_eq!(x, 0.0, "{approach:?} {:?}", params.backend);
            }
            assert_eq!(r.fair_value, r.v_coll);
        }
    }
}

#[test]
fn threshold_interpolates_between_perfect_and_no_collateral() {
    let m = market((0.05, 0.0), (0.01, 0.0));
    let params = mc(5000);
    let paths = simulate_market(&m, 1.0, &params).unwrap();
    let pricer = CollateralizedPricer::new(&call().instrument, &m.ois, &m.dynamics);
    let cva_at = |spec: CollateralSpec| cva(&paths, &pricer, &m.ois, 0.4, &spec).value;

    let none = cva_at(CollateralSpec::uncollateralized());
    assert!(none > 0.0);
    assert_eq!(cva_at(CollateralSpec::perfect()), 0.0);
    assert_eq!(cva_at(CollateralSpec::threshold(0.0).unwrap()), 0.0);
    assert!(cva_at(CollateralSpec::threshold(1e-9).unwrap()) < 1e-9);
    assert_eq!(cva_at(CollateralSpec::threshold(1e6).unwrap()), none);

    let values: Vec<f64> = [0.5, 2.0, 5.0, 10.0, 40.0]
        .iter()
        .map(|&h| cva_at(CollateralSpec::threshold(h).unwrap()))
        .collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]), "{values:?}");
    assert!(values[0] > 0.0 && values[4] <= none);
}

#[test]
fn cure_period_adds_gap_risk() {
    let m = market((0.05, 0.0), (0.01, 0.0));
    let params = mc(5000);
    let paths = simulate_market(&m, 1.0, &params).unwrap();
    let pricer = CollateralizedPricer::new(&call().instrument, &m.ois, &m.dynamics);
    for spec in [
        CollateralSpec::perfect(),
        CollateralSpec::threshold(2.0).unwrap(),
    ] {
        let base = cva(&paths, &pricer, &m.ois, 0.4, &spec).value;
        let zero = cva(
            &paths,
            &pricer,
            &m.ois,
            0.4,
            &spec.with_cure_period(0.0).unwrap(),
        )
        .value;
        let cured = cva(
            &paths,
            &pricer,
            &m.ois,
            0.4,
            &spec.with_cure_period(10.0 / 250.0).unwrap(),
        )
        .value;
        assert_eq!(base, zero);
        assert!(cured >= base, "{cured} < {base}");
    }
    let perfect_cured = cva(
        &paths,
        &pricer,
        &m.ois,
        0.4,
        &CollateralSpec::perfect().with_cure_period(0.04).unwrap(),
    );
    assert!(perfect_cured.value > 3.0 * perfect_cured.se);
}

#[test]
fn simultaneous_default_counts_as_counterparty_default() {
    let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
    let n = times.len();
    // one long forward far in the money and one deep out of the money
    let spot: Vec<f64> = std::iter::repeat_n(130.0, n)
        .chain(std::iter::repeat_n(70.0, n))
        .collect();
    let zeros = vec![0.0; 2 * n];
    let paths = PathSet::from_parts(
        times,
        spot,
        zeros.clone(),
        zeros,
        vec![0.5, 0.5],
        vec![0.5, 0.5],
    )
    .unwrap();
    let trade = forward();
    let m = market((0.0, 0.0), (0.0, 0.0));
    let pricer = CollateralizedPricer::new(&trade.instrument, &m.ois, &m.dynamics);
    let spec = CollateralSpec::uncollateralized();
    let c = cva(&paths, &pricer, &m.ois, 0.4, &spec);
    let d = dva(&paths, &pricer, &m.ois, 0.4, &spec);
    assert_eq!(d.value, 0.0);
    let exposure = pricer.value(0.5, 130.0);
    let expected = 0.5 * (-C * 0.5).exp() * 0.6 * exposure;
    assert!((c.value - expected).abs() < 1e-12);
}

#[test]
fn uncollateralized_bond_cva_matches_quadrature() {
    let (lc, lb, r, t) = (0.03, 0.01, 0.4, 5.0);
    let m = market((lc, 0.0), (lb, 0.0));
    let params = SolverParams {
        n_steps: 100,
        ..mc(100_000)
    };
    let paths = simulate_market(&m, t, &params).unwrap();
    let trade = zcb(1.0, t);
    let pricer = CollateralizedPricer::new(&trade.instrument, &m.ois, &m.dynamics);
    let est = cva(&paths, &pricer, &m.ois, r, &trade.collateral);
    let oracle = (1.0 - r)
        * simpson(
            |s| lc * (-(lc + lb) * s).exp() * (-C * s).exp() * 100.0 * (-C * (t - s)).exp(),
            0.0,
            t,
            200,
        );
    assert!(
        (est.value - oracle).abs() < 3.0 * est.se,
        "{} ± {} vs {oracle}",
        est.value,
        est.se
    );
    assert_eq!(
        dva(&paths, &pricer, &m.ois, r, &trade.collateral).value,
        0.0
    );
}

#[test]
fn first_order_dfva_of_a_liability_matches_quadrature() {
    let (lc, lb, gb, t) = (0.03, 0.01, 0.01, 5.0);
    let m = market((lc, 0.0), (lb, gb));
    let trade = zcb(-1.0, t);
    let r = first_order_value(&trade, &m, &mc(50_000)).unwrap();
    let oracle = simpson(
        |s| (-(lc + lb) * s).exp() * (-C * s).exp() * gb * 100.0 * (-C * (t - s)).exp(),
        0.0,
        t,
        200,
    );
    let se = r.standard_errors.unwrap().dfva;
    assert!(
        (r.dfva - oracle).abs() < 3.0 * se + 1e-6,
        "{} ± {se} vs {oracle}",
        r.dfva
    );
    assert_eq!(r.cfva, 0.0);
    assert_eq!(r.cva, 0.0);
}

#[test]
fn bond_implied_intensity_charges_liquidity_as_default() {
    let (gc, r, t) = (0.006, 0.4, 2.0);
    let lambda_bar = gc / (1.0 - r);
    let m = Market {
        bank: CounterpartyProfile::default_free(),
        ..market((0.0, gc), (0.0, 0.0))
    };
    let params = SolverParams {
        bond_mode: true,
        ..mc(100_000)
    };
    let rep = bond_implied_value(&zcb(1.0, t), &m, &params).unwrap();
    let oracle = (1.0 - r)
        * simpson(
            |s| lambda_bar * (-lambda_bar * s).exp() * 100.0 * (-C * t).exp(),
            0.0,
            t,
            200,
        );
    let se = rep.standard_errors.unwrap().cva;
    assert!(
        (rep.cva - oracle).abs() < 3.0 * se,
        "{} ± {se} vs {oracle}",
        rep.cva
    );
    assert_eq!((rep.cfva, rep.dfva), (0.0, 0.0));

    let plain = Market {
        counterparty: CounterpartyProfile::flat(0.4, 0.02, 0.0).unwrap(),
        ..m.clone()
    };
    let a = bond_implied_value(&zcb(1.0, t), &plain, &mc(5000)).unwrap();
    let b = first_order_value(&zcb(1.0, t), &plain, &mc(5000)).unwrap();
    assert_eq!(a.cva, b.cva);
}

#[test]
fn funding_basis_moves_value_monotonically() {
    let bank_free = CounterpartyProfile::default_free();
    let mut last = f64::INFINITY;
    for g in [0.0, 0.005, 0.01, 0.02, 0.04] {
        let m = Market {
            bank: bank_free.clone(),
            ..market((0.02, g), (0.0, 0.0))
        };
        let v = fair_value_recursive(&zcb(1.0, 3.0), &m, &mc(1000))
            .unwrap()
            .fair_value;
        assert!(v <= last, "asset value rose at gamma_C = {g}");
        last = v;
    }
    let mut last = f64::NEG_INFINITY;
    for g in [0.0, 0.005, 0.01, 0.02, 0.04] {
        let m = market((0.0, 0.0), (0.0, g));
        let v = fair_value_recursive(&zcb(-1.0, 3.0), &m, &mc(1000))
            .unwrap()
            .fair_value;
        assert!(v >= last, "liability value fell at gamma_B = {g}");
        last = v;
    }
}

#[test]
fn first_order_error_is_second_order_in_the_basis() {
    let gaps: Vec<(f64, f64)> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&g| {
            let m = market((0.0, g), (0.0, 0.5 * g));
            let params = pde(200);
            let rec = fair_value_recursive(&forward(), &m, &params)
                .unwrap()
                .fair_value;
            let first = first_order_value(&forward(), &m, &params)
                .unwrap()
                .fair_value;
            let implied = bond_implied_value(&forward(), &m, &params)
                .unwrap()
                .fair_value;
            (rec - first, implied - first)
        })
        .collect();
    for w in gaps.windows(2) {
        let (r1, r2) = (w[0].0 / w[1].0, w[0].1 / w[1].1);
        assert!((3.0..=5.0).contains(&r1), "recursive gap ratio {r1}");
        assert!((3.0..=5.0).contains(&r2), "bond-implied gap ratio {r2}");
    }
}

#[test]
fn pde_time_error_halves_with_the_step() {
    let expected = 100.0 * (-(C + 0.01_f64)).exp();
    let m = Market {
        bank: CounterpartyProfile::default_free(),
        ..market((0.0, 0.01), (0.0, 0.0))
    };
    let err = |n: usize| {
        let p = SolverParams {
            bond_mode: true,
            ..pde(n)
        };
        fair_value_recursive(&zcb(1.0, 1.0), &m, &p)
            .unwrap()
            .fair_value
            - expected
    };
    let ratio = err(50) / err(100);
    assert!((1.7..=2.3).contains(&ratio), "{ratio}");
}

#[test]
fn pde_and_mc_agree_on_an_option() {
    let m = market((0.03, 0.01), (0.02, 0.005));
    let pde_value = fair_value_recursive(&call(), &m, &pde(400))
        .unwrap()
        .fair_value;
    let r = fair_value_recursive(&call(), &m, &mc(20_000)).unwrap();
    let se = r.standard_errors.unwrap().fair_value;
    assert!(
        (r.fair_value - pde_value).abs() < 3.0 * se,
        "{} ± {se} vs {pde_value}",
        r.fair_value
    );
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let m = market((0.03, 0.05), (0.02, 0.02));
    let params = SolverParams {
        max_iter: 1,
        tolerance: 1e-14,
        ..mc(2000)
    };
    let r = fair_value_recursive(&forward(), &m, &params).unwrap();
    assert_eq!(r.status, Status::NotConverged);
    assert_eq!(r.iterations, 1);
    assert!(r.residual > 0.0);
}

#[test]
fn standalone_funding_terms_vanish_without_basis_or_exposure() {
    let m = market((0.03, 0.0), (0.01, 0.01));
    let params = mc(2000);
    let trade = zcb(1.0, 2.0);
    let paths = simulate_market(&m, 2.0, &params).unwrap();
    let pricer = CollateralizedPricer::new(&trade.instrument, &m.ois, &m.dynamics);
    let vc = collateralized_grid(&paths, &pricer);
    let c = cfva(
        &paths,
        &pricer,
        &vc,
        &m.ois,
        m.counterparty.basis(),
        &trade.collateral,
    )
    .unwrap();
    let d = dfva(
        &paths,
        &pricer,
        &vc,
        &m.ois,
        m.bank.basis(),
        &trade.collateral,
    )
    .unwrap();
    assert_eq!((c.value, d.value), (0.0, 0.0));
    assert!(cfva(
        &paths,
        &pricer,
        &vc[1..],
        &m.ois,
        m.counterparty.basis(),
        &trade.collateral
    )
    .is_err());
}

#[test]
fn ead_split_parts() {
    let m = market((0.05, 0.0), (0.01, 0.0));
    let trade = call();
    let paths =
        simulate_paths_for_profiles(&m.dynamics, &m.counterparty, &m.bank, 1.0, 50, 5000, 3)
            .unwrap();
    let pricer = CollateralizedPricer::new(&trade.instrument, &m.ois, &m.dynamics);
    let split = |spec: CollateralSpec| {
        ead_split_adjustment(&paths, &pricer, &m.ois, &m.counterparty, &m.bank, &spec, 0).unwrap()
    };

    let none = split(CollateralSpec::uncollateralized());
    assert_eq!(none.incremental_cva.value, 0.0);

    let perfect = split(CollateralSpec::perfect().with_cure_period(0.04).unwrap());
    assert_eq!(perfect.life_cva.value, 0.0);
    assert!(perfect.incremental_cva.value > 0.0);

    // zero basis: bond-implied and CDS defaults coincide, so the split recombines exactly
    let spec = CollateralSpec::threshold(2.0)
        .unwrap()
        .with_cure_period(0.04)
        .unwrap();
    let total = split(spec).total.value;
    let cds = sample_default_times(&paths, 0.4, 0.4, 0).unwrap();
    let plain = cva(&cds, &pricer, &m.ois, 0.4, &spec).value;
    assert!((total - plain).abs() < 1e-12 * plain.max(1.0));
}

#[test]
fn convention_comparison_columns() {
    let m = market((0.03, 0.0), (0.03, 0.0));
    let cmp = compare_conventions(&call(), &m, &mc(20_000)).unwrap();
    assert_eq!(cmp.bond_consistent.value, cmp.fva_zero.value);
    // a bank funding at the counterparty's spread double counts CVA in the funding term
    let se = (cmp.fca.se.powi(2) + cmp.cva.se.powi(2)).sqrt();
    assert!((cmp.fca.value - cmp.cva.value).abs() < 3.0 * se, "{cmp:?}");
    let gaps = cmp.gaps();
    assert_eq!(gaps[0].1, cmp.fva_zero.value - cmp.bond_consistent.value);
}

#[test]
fn recursive_mc_is_thread_count_independent() {
    let m = Market {
        dynamics: ModelDynamics {
            vol_c: 0.004,
            ..ModelDynamics::lognormal(100.0, C, 0.2)
        },
        ..market((0.03, 0.01), (0.02, 0.005))
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fair_value_recursive(&call(), &m, &mc(6000)).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.fair_value.to_bits(), b.fair_value.to_bits());
    assert_eq!(a, b);
}
