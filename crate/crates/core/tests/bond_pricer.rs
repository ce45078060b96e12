use proptest::prelude::*;
use xva_core::bond_pricer::{price, price_by_quadrature, RecoveryConvention};
use xva_core::curves::{CounterpartyProfile, PiecewiseCurve};
use xva_core::instruments::{Cashflow, CashflowSchedule};

const CONVENTIONS: [RecoveryConvention; 3] = [
    RecoveryConvention::Relative,
    RecoveryConvention::Riskless,
    RecoveryConvention::Absolute,
];

fn curve(cuts: Vec<f64>, values: Vec<f64>) -> PiecewiseCurve {
    let mut times = vec![0.0];
    let mut cuts = cuts;
    cuts.sort_by(f64::total_cmp);
    for c in cuts {
        if c - times.last().unwrap() > 1e-3 {
            times.push(c);
        }
    }
    let pairs: Vec<(f64, f64)> = times
        .iter()
        .zip(values.iter().cycle())
        .map(|(&t, &v)| (t, v))
        .collect();
    PiecewiseCurve::from_pairs(&pairs).unwrap()
}

fn segmented(range: std::ops::Range<f64>) -> impl Strategy<Value = PiecewiseCurve> {
    (1usize..=4).prop_flat_map(move |n| {
        (
            prop::collection::vec(0.05f64..5.0, n - 1),
            prop::collection::vec(range.clone(), n),
        )
            .prop_map(|(cuts, values)| curve(cuts, values))
    })
}

fn schedule() -> impl Strategy<Value = CashflowSchedule> {
    (
        1usize..=5,
        50.0f64..150.0,
        0.0f64..0.08,
        prop::collection::vec(0.1f64..6.0, 5),
    )
        .prop_map(|(n, notional, coupon, mut times)| {
            times.truncate(n);
            times.sort_by(f64::total_cmp);
            times.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            let last = times.len() - 1;
            let flows = times
                .iter()
                .enumerate()
                .map(|(i, &time)| Cashflow {
                    time,
                    amount: notional * coupon + if i == last { notional } else { 0.0 },
                })
                .collect();
            CashflowSchedule::new(flows, notional).unwrap()
        })
}

fn issuer() -> impl Strategy<Value = CounterpartyProfile> {
    (0.0f64..0.9, segmented(0.0..0.1), segmented(-0.01..0.03))
        .prop_map(|(r, hazard, basis)| CounterpartyProfile::new(r, hazard, basis).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_forms_match_quadrature(
        bond in schedule(),
        ois in segmented(0.0..0.05),
        issuer in issuer(),
        t_frac in 0.0f64..0.5,
    ) {
        let t = t_frac * bond.flows()[0].time;
        for conv in CONVENTIONS {
            let closed = price(&bond, &ois, &issuer, t, conv).unwrap();
            let quad = price_by_quadrature(&bond, &ois, &issuer, t, conv).unwrap();
            prop_assert!(
                ((closed - quad) / quad).abs() < 1e-8,
                "{conv}: closed {closed} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn conventions_coincide_without_defaults(bond in schedule(), ois in segmented(0.0..0.05), basis in segmented(-0.01..0.03), r in 0.0f64..0.9) {
        let issuer = CounterpartyProfile::new(r, PiecewiseCurve::flat(0.0), basis.clone()).unwrap();
        let direct: f64 = bond
            .flows()
            .iter()
            .map(|f| f.amount * (-(ois.integral(0.0, f.time).unwrap() + basis.integral(0.0, f.time).unwrap())).exp())
            .sum();
        for conv in CONVENTIONS {
            let p = price(&bond, &ois, &issuer, 0.0, conv).unwrap();
            prop_assert!((p - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn riskless_and_absolute_agree_at_zero_recovery(bond in schedule(), ois in segmented(0.0..0.05), hazard in segmented(0.0..0.1), basis in segmented(-0.01..0.03)) {
        let issuer = CounterpartyProfile::new(0.0, hazard, basis).unwrap();
        let a = price(&bond, &ois, &issuer, 0.0, RecoveryConvention::Absolute).unwrap();
        let r = price(&bond, &ois, &issuer, 0.0, RecoveryConvention::Riskless).unwrap();
        prop_assert!((a - r).abs() <= 1e-11 * a.abs());
    }

    #[test]
    fn decreasing_in_flat_basis_and_hazard(
        bond in schedule(),
        lambda in 0.0f64..0.1,
        gamma in -0.01f64..0.03,
        r in 0.0f64..0.9,
        bump in 1e-4f64..0.01,
    ) {
        let ois = PiecewiseCurve::flat(0.02);
        let base = CounterpartyProfile::flat(r, lambda, gamma).unwrap();
        let more_basis = CounterpartyProfile::flat(r, lambda, gamma + bump).unwrap();
        let more_hazard = CounterpartyProfile::flat(r, lambda + bump, gamma).unwrap();
        for conv in CONVENTIONS {
            let p = price(&bond, &ois, &base, 0.0, conv).unwrap();
            prop_assert!(price(&bond, &ois, &more_basis, 0.0, conv).unwrap() < p);
            prop_assert!(price(&bond, &ois, &more_hazard, 0.0, conv).unwrap() < p);
        }
    }
}
