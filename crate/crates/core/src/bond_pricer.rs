//! Bond valuation under relative, riskless and absolute recovery.
//!
//! All closed forms work on the merged breakpoint grid formed by the valuation time,
//! the payment dates and every node of the hazard and basis curves (plus the OIS
//! nodes for absolute recovery, whose per-period discounting needs a constant rate).
//! [`price_by_quadrature`] evaluates the continuous-time integrals numerically and is
//! kept as an independent check of the closed forms.

use serde::{Deserialize, Serialize};

use crate::curves::{CounterpartyProfile, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::instruments::{Cashflow, CashflowSchedule};
use crate::numerics::{integrate, one_minus_exp_over};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryConvention {
    /// Fraction of the pre-default value.
    Relative,
    /// Fraction of the OIS-discounted (perfectly collateralized) value.
    Riskless,
    /// Fraction of the notional.
    Absolute,
}

impl std::str::FromStr for RecoveryConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(Self::Relative),
            "riskless" => Ok(Self::Riskless),
            "absolute" => Ok(Self::Absolute),
            other => Err(Error::InvalidInput(format!(
                "unknown recovery convention '{other}' (expected relative, riskless or absolute)"
            ))),
        }
    }
}

impl std::fmt::Display for RecoveryConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Relative => "relative",
            Self::Riskless => "riskless",
            Self::Absolute => "absolute",
        })
    }
}

fn remaining_flows(bond: &CashflowSchedule, t: f64) -> Result<&[Cashflow]> {
    if t < 0.0 || t > bond.maturity() {
        return Err(Error::Ordering {
            start: t,
            end: bond.maturity(),
        });
    }
    let first = bond.flows().partition_point(|f| f.time < t);
    Ok(&bond.flows()[first..])
}

/// Sorted union of `t`, the payment dates and curve nodes in `(t, last payment]`.
fn merged_grid(t: f64, flows: &[Cashflow], curves: &[&PiecewiseCurve]) -> Vec<f64> {
    let end = flows.last().map(|f| f.time).unwrap_or(t);
    let mut grid: Vec<f64> = std::iter::once(t)
        .chain(flows.iter().map(|f| f.time))
        .chain(
            curves
                .iter()
                .flat_map(|c| c.breakpoints_in(t, end).collect::<Vec<_>>()),
        )
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Full-curve discounting at `c + π + γ`.
pub fn price_relative_recovery(
    bond: &CashflowSchedule,
    ois: &PiecewiseCurve,
    issuer: &CounterpartyProfile,
    t: f64,
) -> Result<f64> {
    let flows = remaining_flows(bond, t)?;
    let spread = issuer.funding_spread();
    Ok(flows
        .iter()
        .map(|f| {
            let exponent = ois.integral_unchecked(t, f.time) + spread.integral_unchecked(t, f.time);
            f.amount * (-exponent).exp()
        })
        .sum())
}

/// Sensitivity of the relative-recovery price to a flat bump of the CDS spread.
pub fn relative_recovery_spread_delta(
    bond: &CashflowSchedule,
    ois: &PiecewiseCurve,
    issuer: &CounterpartyProfile,
    t: f64,
) -> Result<f64> {
    let flows = remaining_flows(bond, t)?;
    let spread = issuer.funding_spread();
    Ok(flows
        .iter()
        .map(|f| {
            let exponent = ois.integral_unchecked(t, f.time) + spread.integral_unchecked(t, f.time);
            -(f.time - t) * f.amount * (-exponent).exp()
        })
        .sum())
}

/// Riskless recovery: each flow is OIS-discounted and reduced by the accumulated
/// loss-plus-liquidity charge `∫ ((1−R)λ + γ) P^L ds` up to its payment date.
pub fn price_riskless_recovery(
    bond: &CashflowSchedule,
    ois: &PiecewiseCurve,
    issuer: &CounterpartyProfile,
    t: f64,
) -> Result<f64> {
    let flows = remaining_flows(bond, t)?;
    let grid = merged_grid(t, flows, &[issuer.hazard(), issuer.basis()]);
    let lgd = 1.0 - issuer.recovery();

    let mut price = 0.0;
    let mut next_flow = flows.iter().peekable();
    // a flow paying exactly at t carries no default or liquidity charge
    if let Some(f) = next_flow.next_if(|f| f.time == t) {
        price += f.amount;
    }
    let mut liquidity_survival = 1.0;
    let mut charge = 0.0;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let lambda = issuer.hazard().value_at(a);
        let gamma = issuer.basis().value_at(a);
        let x = (lambda + gamma) * (b - a);
        charge += (lgd * lambda + gamma) * (b - a) * one_minus_exp_over(x) * liquidity_survival;
        liquidity_survival *= (-x).exp();
        if let Some(f) = next_flow.next_if(|f| f.time == b) {
            let df = (-ois.integral_unchecked(t, b)).exp();
            price += df * f.amount * (1.0 - charge);
        }
    }
    Ok(price)
}

/// Absolute recovery: flows discounted at `c + λ + γ` plus a recovery leg `R·N`
/// paid at default, accumulated once over the life of the bond.
pub fn price_absolute_recovery(
    bond: &CashflowSchedule,
    ois: &PiecewiseCurve,
    issuer: &CounterpartyProfile,
    t: f64,
) -> Result<f64> {
    let flows = remaining_flows(bond, t)?;
    let grid = merged_grid(t, flows, &[issuer.hazard(), issuer.basis(), ois]);

    let mut price = 0.0;
    let mut next_flow = flows.iter().peekable();
    if let Some(f) = next_flow.next_if(|f| f.time == t) {
        price += f.amount;
    }
    let mut risky_discount = 1.0;
    let mut recovery_leg = 0.0;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let rate = ois.value_at(a);
        let lambda = issuer.hazard().value_at(a);
        let gamma = issuer.basis().value_at(a);
        let y = (rate + lambda + gamma) * (b - a);
        recovery_leg += lambda * (b - a) * one_minus_exp_over(y) * risky_discount;
        risky_discount *= (-y).exp();
        if let Some(f) = next_flow.next_if(|f| f.time == b) {
            price += f.amount * risky_discount;
        }
    }
    Ok(price + issuer.recovery() * bond.notional() * recovery_leg)
}

pub fn price(
    bond: &CashflowSchedule,
    ois: &PiecewiseCurve,
    issuer: &CounterpartyProfile,
    t: f64,
    convention: RecoveryConvention,
) -> Result<f64> {
    match convention {
        RecoveryConvention::Relative => price_relative_recovery(bond, ois, issuer, t),
        RecoveryConvention::Riskless => price_riskless_recovery(bond, ois, issuer, t),
        RecoveryConvention::Absolute => price_absolute_recovery(bond, ois, issuer, t),
    }
}

/// Numerical evaluation of the continuous-time bond formulas, to an absolute
/// tolerance of `1e−10 · notional`.
///
/// Only point values of the curves are used; every integral, including the
/// exponents of discount and survival factors, is computed by adaptive quadrature.
pub fn price_by_quadrature(
    bond: &CashflowSchedule,
    ois: &PiecewiseCurve,
    issuer: &CounterpartyProfile,
    t: f64,
    convention: RecoveryConvention,
) -> Result<f64> {
    let flows = remaining_flows(bond, t)?;
    let end = bond.maturity();
    let mut breaks: Vec<f64> = ois
        .times()
        .iter()
        .chain(issuer.hazard().times())
        .chain(issuer.basis().times())
        .chain(bond.flows().iter().map(|f| &f.time))
        .copied()
        .filter(|&x| x > t && x < end)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let scale = bond.notional().abs().max(1.0);
    let tol = 1e-10 * scale;
    // the inner integrals are of piecewise-constant functions, so a tight tolerance is cheap
    let inner_tol = 1e-14;
    let lgd = 1.0 - issuer.recovery();
    let hazard = |s: f64| issuer.hazard().value_at(s);
    let basis = |s: f64| issuer.basis().value_at(s);
    let rate = |s: f64| ois.value_at(s);
    let cum = |f: &dyn Fn(f64) -> f64, s: f64| integrate(f, t, s, &breaks, inner_tol);

    let mut total = 0.0;
    match convention {
        RecoveryConvention::Relative => {
            let spread = |s: f64| rate(s) + lgd * hazard(s) + basis(s);
            for f in flows {
                total += f.amount * (-cum(&spread, f.time)?).exp();
            }
        }
        RecoveryConvention::Riskless => {
            let liq = |s: f64| hazard(s) + basis(s);
            for f in flows {
                let df = (-cum(&rate, f.time)?).exp();
                let charge = integrate(
                    |s| {
                        let p_l = (-cum(&liq, s).unwrap_or(f64::NAN)).exp();
                        (lgd * hazard(s) + basis(s)) * p_l
                    },
                    t,
                    f.time,
                    &breaks,
                    tol / (f.amount.abs() * flows.len() as f64).max(1.0),
                )?;
                total += df * f.amount * (1.0 - charge);
            }
        }
        RecoveryConvention::Absolute => {
            let all = |s: f64| rate(s) + hazard(s) + basis(s);
            for f in flows {
                total += f.amount * (-cum(&all, f.time)?).exp();
            }
            let leg = integrate(
                |s| hazard(s) * (-cum(&all, s).unwrap_or(f64::NAN)).exp(),
                t,
                end,
                &breaks,
                tol / (issuer.recovery() * bond.notional()).abs().max(1.0),
            )?;
            total += issuer.recovery() * bond.notional() * leg;
        }
    }
    if !total.is_finite() {
        return Err(Error::Numerical {
            what: "quadrature produced a non-finite price".into(),
            achieved: f64::INFINITY,
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn zcb(n: f64, t: f64) -> CashflowSchedule {
        CashflowSchedule::zero_coupon(n, t).unwrap()
    }

    #[test]
    fn relative_examples() {
        let ois = PiecewiseCurve::flat(0.02);
        let issuer = CounterpartyProfile::flat(0.6, 0.03, 0.004).unwrap();
        let p = price_relative_recovery(&zcb(100.0, 2.0), &ois, &issuer, 0.0).unwrap();
        assert_relative_eq!(p, 100.0 * (-0.072f64).exp(), max_relative = 1e-14);
        assert!((p - 93.0531).abs() < 1e-4);

        let riskless_issuer = CounterpartyProfile::flat(0.4, 0.0, 0.0).unwrap();
        let p0 = price_relative_recovery(&zcb(100.0, 2.0), &ois, &riskless_issuer, 0.0).unwrap();
        assert_relative_eq!(p0, 100.0 * (-0.04f64).exp(), max_relative = 1e-14);

        let liquid_only = CounterpartyProfile::flat(0.4, 0.0, 0.01).unwrap();
        let p1 = price_relative_recovery(&zcb(100.0, 1.0), &ois, &liquid_only, 0.0).unwrap();
        assert!((p1 - 97.0446).abs() < 1e-4);
    }

    #[test]
    fn riskless_examples() {
        let ois = PiecewiseCurve::flat(0.02);
        let issuer = CounterpartyProfile::flat(0.4, 0.03, 0.01).unwrap();
        let p = price_riskless_recovery(&zcb(100.0, 1.0), &ois, &issuer, 0.0).unwrap();
        // 100 e^{-0.02} [1 - (0.6*0.03 + 0.01)/0.04 (1 - e^{-0.04})]
        assert_relative_eq!(p, 95.329_477_550_100_05, max_relative = 1e-13);

        let free = CounterpartyProfile::flat(0.4, 0.0, 0.0).unwrap();
        let p0 = price_riskless_recovery(&zcb(100.0, 1.0), &ois, &free, 0.0).unwrap();
        assert!((p0 - 98.0199).abs() < 1e-4);

        let full_recovery = CounterpartyProfile::flat(1.0, 0.25, 0.0).unwrap();
        let p1 = price_riskless_recovery(&zcb(100.0, 1.0), &ois, &full_recovery, 0.0).unwrap();
        assert_relative_eq!(p1, 100.0 * (-0.02f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn riskless_degenerate_segment_uses_limit() {
        // λ + γ = 0 on the whole life: charge = ((1−R)λ + γ)·T with P^L ≡ 1
        let ois = PiecewiseCurve::flat(0.01);
        let issuer = CounterpartyProfile::flat(0.5, 0.02, -0.02).unwrap();
        let p = price_riskless_recovery(&zcb(100.0, 2.0), &ois, &issuer, 0.0).unwrap();
        let expected = 100.0 * (-0.02f64).exp() * (1.0 - (0.5 * 0.02 - 0.02) * 2.0);
        assert_relative_eq!(p, expected, max_relative = 1e-14);
    }

    #[test]
    fn absolute_examples() {
        let ois = PiecewiseCurve::flat(0.02);
        let issuer = CounterpartyProfile::flat(0.4, 0.03, 0.01).unwrap();
        let p = price_absolute_recovery(&zcb(100.0, 1.0), &ois, &issuer, 0.0).unwrap();
        let expected = 100.0 * (-0.06f64).exp() + 0.012 * 100.0 / 0.06 * (1.0 - (-0.06f64).exp());
        assert_relative_eq!(p, expected, max_relative = 1e-14);
        assert!((p - 95.3412).abs() < 1e-4);

        let zero_rec = CounterpartyProfile::flat(0.0, 0.03, 0.01).unwrap();
        let a = price_absolute_recovery(&zcb(100.0, 3.0), &ois, &zero_rec, 0.0).unwrap();
        let r = price_riskless_recovery(&zcb(100.0, 3.0), &ois, &zero_rec, 0.0).unwrap();
        assert_relative_eq!(a, r, max_relative = 1e-13);

        let no_default = CounterpartyProfile::flat(0.4, 0.0, 0.01).unwrap();
        let p0 = price_absolute_recovery(&zcb(100.0, 1.0), &ois, &no_default, 0.0).unwrap();
        assert_relative_eq!(p0, 100.0 * (-0.03f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn absolute_degenerate_segment_uses_limit() {
        let ois = PiecewiseCurve::flat(0.0);
        let issuer = CounterpartyProfile::flat(0.4, 0.01, -0.01).unwrap();
        let p = price_absolute_recovery(&zcb(100.0, 2.0), &ois, &issuer, 0.0).unwrap();
        assert_relative_eq!(p, 100.0 + 0.4 * 100.0 * 0.01 * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn quadrature_examples() {
        let ois = PiecewiseCurve::flat(0.02);
        let issuer = CounterpartyProfile::flat(0.4, 0.03, 0.01).unwrap();
        let q = price_by_quadrature(
            &zcb(100.0, 1.0),
            &ois,
            &issuer,
            0.0,
            RecoveryConvention::Riskless,
        )
        .unwrap();
        assert!((q - 95.329_477_550_100_05).abs() < 1e-8);
        let q = price_by_quadrature(
            &zcb(100.0, 1.0),
            &ois,
            &issuer,
            0.0,
            RecoveryConvention::Absolute,
        )
        .unwrap();
        assert!((q - 95.341_162_686_739_89).abs() < 1e-8);
        let free = CounterpartyProfile::flat(0.4, 0.0, 0.0).unwrap();
        for conv in [
            RecoveryConvention::Relative,
            RecoveryConvention::Riskless,
            RecoveryConvention::Absolute,
        ] {
            let q = price_by_quadrature(&zcb(100.0, 1.5), &ois, &free, 0.0, conv).unwrap();
            assert!((q - 100.0 * (-0.03f64).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn ordering_errors() {
        let ois = PiecewiseCurve::flat(0.02);
        let issuer = CounterpartyProfile::flat(0.4, 0.03, 0.01).unwrap();
        for conv in [
            RecoveryConvention::Relative,
            RecoveryConvention::Riskless,
            RecoveryConvention::Absolute,
        ] {
            assert!(matches!(
                price(&zcb(100.0, 1.0), &ois, &issuer, 1.5, conv),
                Err(Error::Ordering { .. })
            ));
        }
    }

    #[test]
    fn converges_to_final_flow_at_maturity() {
        let ois = PiecewiseCurve::flat(0.03);
        let issuer = CounterpartyProfile::flat(0.4, 0.05, 0.02).unwrap();
        let bond = CashflowSchedule::fixed_coupon(100.0, 0.05, 3.0, 2).unwrap();
        for conv in [
            RecoveryConvention::Relative,
            RecoveryConvention::Riskless,
            RecoveryConvention::Absolute,
        ] {
            assert_eq!(price(&bond, &ois, &issuer, 3.0, conv).unwrap(), 102.5);
            let near = price(&bond, &ois, &issuer, 3.0 - 1e-9, conv).unwrap();
            assert!((near - 102.5).abs() < 1e-6);
        }
    }

    #[test]
    fn spread_delta_matches_bump() {
        let ois = PiecewiseCurve::flat(0.02);
        let issuer = CounterpartyProfile::flat(0.4, 0.03, 0.01).unwrap();
        let bond = CashflowSchedule::fixed_coupon(100.0, 0.04, 5.0, 1).unwrap();
        let h = 1e-6;
        let up = CounterpartyProfile::flat(0.4, 0.03 + h / 0.6, 0.01).unwrap();
        let dn = CounterpartyProfile::flat(0.4, 0.03 - h / 0.6, 0.01).unwrap();
        let fd = (price_relative_recovery(&bond, &ois, &up, 0.0).unwrap()
            - price_relative_recovery(&bond, &ois, &dn, 0.0).unwrap())
            / (2.0 * h);
        let analytic = relative_recovery_spread_delta(&bond, &ois, &issuer, 0.0).unwrap();
        assert_relative_eq!(fd, analytic, max_relative = 1e-6);
    }
}
