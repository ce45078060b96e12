//! Perfectly collateralized value `V^c(t, S)` of each supported instrument.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::curves::PiecewiseCurve;
use crate::instruments::{remaining_flows_value, Cashflow, Instrument, InstrumentKind, OptionType};
use crate::mc_engine::ModelDynamics;

/// Collateral-rate discounted value of an instrument under lognormal `S`.
#[derive(Debug, Clone)]
pub struct CollateralizedPricer {
    instrument: Instrument,
    flows: Vec<Cashflow>,
    ois: PiecewiseCurve,
    carry: f64,
    vol: f64,
}

impl CollateralizedPricer {
    pub fn new(instrument: &Instrument, ois: &PiecewiseCurve, dynamics: &ModelDynamics) -> Self {
        Self {
            instrument: instrument.clone(),
            flows: instrument.scaled_flows(),
            ois: ois.clone(),
            carry: dynamics.rate - dynamics.dividend,
            vol: dynamics.vol_s,
        }
    }

    pub fn instrument(&self) -> &Instrument {
        &self.instrument
    }

    /// Value at `t` given spot `s`; flows paying at `t` are included.
    pub fn value(&self, t: f64, s: f64) -> f64 {
        let q = self.instrument.quantity;
        match self.instrument.kind {
            InstrumentKind::ZeroCouponBond(_) | InstrumentKind::CouponBond(_) => {
                remaining_flows_value(&self.flows, &self.ois, t)
            }
            InstrumentKind::Forward { strike, expiry } => {
                if t >= expiry {
                    return q * (s - strike);
                }
                let tau = expiry - t;
                let df = (-self.ois.integral_unchecked(t, expiry)).exp();
                q * df * (s * (self.carry * tau).exp() - strike)
            }
            InstrumentKind::EuropeanOption {
                option,
                strike,
                expiry,
            } => {
                if t >= expiry {
                    return self.instrument.terminal_payoff(s);
                }
                let tau = expiry - t;
                let df = (-self.ois.integral_unchecked(t, expiry)).exp();
                let fwd = s * (self.carry * tau).exp();
                q * df * black(option, fwd, strike, self.vol * tau.sqrt())
            }
        }
    }
}

/// Undiscounted Black price for total volatility `w = σ√τ`.
pub(crate) fn black(option: OptionType, fwd: f64, strike: f64, w: f64) -> f64 {
    let intrinsic = match option {
        OptionType::Call => (fwd - strike).max(0.0),
        OptionType::Put => (strike - fwd).max(0.0),
    };
    if w < 1e-12 || strike <= 0.0 {
        return intrinsic;
    }
    let n = Normal::standard();
    let d1 = ((fwd / strike).ln() + 0.5 * w * w) / w;
    let d2 = d1 - w;
    match option {
        OptionType::Call => fwd * n.cdf(d1) - strike * n.cdf(d2),
        OptionType::Put => strike * n.cdf(-d2) - fwd * n.cdf(-d1),
    }
}
