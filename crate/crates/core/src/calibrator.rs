//! Short-spread conversion and sequential bootstrap of the bond-CDS basis.

use crate::bond_pricer::{price, RecoveryConvention};
use crate::curves::{CounterpartyProfile, CurveNode, PiecewiseCurve};
use crate::error::{BucketResidual, Error, Result};
use crate::instruments::CashflowSchedule;
use crate::numerics::brent;

const BRACKET: (f64, f64) = (-0.20, 0.50);
const EXPANDED_BRACKET: (f64, f64) = (-1.0, 2.0);
const GAMMA_TOL: f64 = 1e-12;
const PRICE_TOL: f64 = 1e-9;

/// `λ = π / (1 − R)`.
pub fn spread_to_hazard(short_spread: f64, recovery: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&recovery) {
        return Err(Error::InvalidInput(format!(
            "recovery {recovery} outside [0, 1]"
        )));
    }
    if recovery == 1.0 {
        return Err(Error::DivisionByZero(
            "spread_to_hazard with recovery = 1".into(),
        ));
    }
    if !(short_spread >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "negative short spread {short_spread}"
        )));
    }
    Ok(short_spread / (1.0 - recovery))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BondQuote {
    pub bond: CashflowSchedule,
    pub market_price: f64,
}

/// Bootstraps a piecewise-constant basis with one segment per quote, ending at the
/// quote's final maturity. The last value extends flat beyond the longest bond.
pub fn bootstrap_basis(
    quotes: &[BondQuote],
    ois: &PiecewiseCurve,
    hazard: &PiecewiseCurve,
    recovery: f64,
    convention: RecoveryConvention,
) -> Result<PiecewiseCurve> {
    if quotes.is_empty() {
        return Err(Error::InvalidInput("no bond quotes to calibrate".into()));
    }
    for pair in quotes.windows(2) {
        if pair[1].bond.maturity() <= pair[0].bond.maturity() {
            return Err(Error::InvalidInput(format!(
                "quote maturities must be strictly increasing: {} follows {}",
                pair[1].bond.maturity(),
                pair[0].bond.maturity()
            )));
        }
    }
    if let Some(q) = quotes.iter().find(|q| !(q.market_price > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "market price {} for maturity {} must be positive",
            q.market_price,
            q.bond.maturity()
        )));
    }
    // validates recovery and hazard once, before any root finding
    CounterpartyProfile::new(recovery, hazard.clone(), PiecewiseCurve::flat(0.0))?;

    let mut nodes: Vec<CurveNode> = Vec::with_capacity(quotes.len());
    let mut solved: Vec<BucketResidual> = Vec::with_capacity(quotes.len());
    let mut start = 0.0;
    for (bucket, quote) in quotes.iter().enumerate() {
        let curve_with = |gamma: f64| {
            let mut trial = nodes.clone();
            trial.push(CurveNode {
                time: start,
                value: gamma,
            });
            PiecewiseCurve::new(trial)
        };
        let residual = |gamma: f64| -> f64 {
            let curve = match curve_with(gamma) {
                Ok(c) => c,
                Err(_) => return f64::NAN,
            };
            let issuer = CounterpartyProfile::new(recovery, hazard.clone(), curve)
                .expect("profile inputs validated above");
            match price(&quote.bond, ois, &issuer, 0.0, convention) {
                Ok(p) => (p - quote.market_price) / quote.market_price,
                Err(_) => f64::NAN,
            }
        };

        let root = brent(residual, BRACKET.0, BRACKET.1, GAMMA_TOL, 200).or_else(|| {
            brent(
                residual,
                EXPANDED_BRACKET.0,
                EXPANDED_BRACKET.1,
                GAMMA_TOL,
                200,
            )
        });
        let failure = |gamma: f64, res: f64| Error::Calibration {
            bucket,
            maturity: quote.bond.maturity(),
            residual: res,
            solved: {
                let mut table = solved.clone();
                table.push(BucketResidual {
                    maturity: quote.bond.maturity(),
                    gamma,
                    residual: res,
                });
                table
            },
        };
        let gamma = match root {
            Some(g) => g,
            None => {
                // report the closer end of the expanded bracket
                let (lo, hi) = (residual(EXPANDED_BRACKET.0), residual(EXPANDED_BRACKET.1));
                let (g, r) = if lo.abs() < hi.abs() {
                    (EXPANDED_BRACKET.0, lo)
                } else {
                    (EXPANDED_BRACKET.1, hi)
                };
                return Err(failure(g, r));
            }
        };
        let res = residual(gamma);
        if !(res.abs() <= PRICE_TOL) {
            return Err(failure(gamma, res));
        }
        solved.push(BucketResidual {
            maturity: quote.bond.maturity(),
            gamma,
            residual: res,
        });
        nodes.push(CurveNode {
            time: start,
            value: gamma,
        });
        start = quote.bond.maturity();
    }
    PiecewiseCurve::new(nodes)
}

/// Per-bucket residuals of a calibrated curve against its quotes.
pub fn repricing_residuals(
    quotes: &[BondQuote],
    ois: &PiecewiseCurve,
    hazard: &PiecewiseCurve,
    recovery: f64,
    basis: &PiecewiseCurve,
    convention: RecoveryConvention,
) -> Result<Vec<BucketResidual>> {
    let issuer = CounterpartyProfile::new(recovery, hazard.clone(), basis.clone())?;
    quotes
        .iter()
        .map(|q| {
            let p = price(&q.bond, ois, &issuer, 0.0, convention)?;
            Ok(BucketResidual {
                maturity: q.bond.maturity(),
                gamma: basis.value_at(q.bond.maturity() - 1e-12),
                residual: (p - q.market_price) / q.market_price,
            })
        })
        .collect()
}
