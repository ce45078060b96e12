//! Instruments, collateral agreements and deterministic collateralized valuation.

use serde::{Deserialize, Serialize};

use crate::curves::PiecewiseCurve;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cashflow {
    pub time: f64,
    pub amount: f64,
}

/// Fixed cash flows; the final flow includes the notional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct CashflowSchedule {
    flows: Vec<Cashflow>,
    notional: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    notional: f64,
    flows: Vec<Cashflow>,
}

impl TryFrom<RawSchedule> for CashflowSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        Self::new(raw.flows, raw.notional)
    }
}

impl From<CashflowSchedule> for RawSchedule {
    fn from(s: CashflowSchedule) -> Self {
        RawSchedule {
            notional: s.notional,
            flows: s.flows,
        }
    }
}

impl CashflowSchedule {
    pub fn new(flows: Vec<Cashflow>, notional: f64) -> Result<Self> {
        if flows.is_empty() {
            return Err(Error::InvalidInput(
                "schedule needs at least one flow".into(),
            ));
        }
        if flows[0].time <= 0.0 {
            return Err(Error::InvalidInput("pay times must be positive".into()));
        }
        if flows.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::InvalidInput(
                "pay times must be strictly increasing".into(),
            ));
        }
        Ok(Self { flows, notional })
    }

    /// A single payment of `notional` at `maturity`.
    pub fn zero_coupon(notional: f64, maturity: f64) -> Result<Self> {
        Self::new(
            vec![Cashflow {
                time: maturity,
                amount: notional,
            }],
            notional,
        )
    }

    /// Regular coupons at `1/frequency` spacing with the notional added to the last.
    pub fn fixed_coupon(notional: f64, rate: f64, maturity: f64, frequency: usize) -> Result<Self> {
        if frequency == 0 {
            return Err(Error::InvalidInput(
                "coupon frequency must be positive".into(),
            ));
        }
        let n = (maturity * frequency as f64).round() as usize;
        if n == 0 {
            return Err(Error::InvalidInput(
                "maturity shorter than one period".into(),
            ));
        }
        let coupon = notional * rate / frequency as f64;
        let flows = (1..=n)
            .map(|i| Cashflow {
                time: maturity * i as f64 / n as f64,
                amount: if i == n { coupon + notional } else { coupon },
            })
            .collect();
        Self::new(flows, notional)
    }

    pub fn flows(&self) -> &[Cashflow] {
        &self.flows
    }

    pub fn notional(&self) -> f64 {
        self.notional
    }

    pub fn maturity(&self) -> f64 {
        self.flows.last().map(|f| f.time).unwrap_or(0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            flows: self
                .flows
                .iter()
                .map(|f| Cashflow {
                    time: f.time,
                    amount: f.amount * factor,
                })
                .collect(),
            notional: self.notional * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionType {
    Call,
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InstrumentKind {
    ZeroCouponBond(CashflowSchedule),
    CouponBond(CashflowSchedule),
    Forward {
        strike: f64,
        expiry: f64,
    },
    EuropeanOption {
        option: OptionType,
        strike: f64,
        expiry: f64,
    },
}

/// A single trade seen from the bank; `quantity < 0` is a short position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instrument {
    pub kind: InstrumentKind,
    #[serde(default = "unit")]
    pub quantity: f64,
}

fn unit() -> f64 {
    1.0
}

impl Instrument {
    pub fn new(kind: InstrumentKind, quantity: f64) -> Result<Self> {
        match &kind {
            InstrumentKind::Forward { expiry, strike } => {
                if !(*expiry > 0.0) || !strike.is_finite() {
                    return Err(Error::InvalidInput("forward needs expiry > 0".into()));
                }
            }
            InstrumentKind::EuropeanOption { expiry, strike, .. } => {
                if !(*expiry > 0.0) {
                    return Err(Error::InvalidInput("option needs expiry > 0".into()));
                }
                if !(*strike >= 0.0) {
                    return Err(Error::InvalidInput("option strike must be >= 0".into()));
                }
            }
            InstrumentKind::ZeroCouponBond(s) => {
                if s.flows().len() != 1 {
                    return Err(Error::InvalidInput(
                        "zero-coupon bond must have exactly one flow".into(),
                    ));
                }
            }
            InstrumentKind::CouponBond(_) => {}
        }
        if !quantity.is_finite() {
            return Err(Error::InvalidInput("quantity must be finite".into()));
        }
        Ok(Self { kind, quantity })
    }

    pub fn bond(schedule: CashflowSchedule) -> Self {
        let kind = if schedule.flows().len() == 1 {
            InstrumentKind::ZeroCouponBond(schedule)
        } else {
            InstrumentKind::CouponBond(schedule)
        };
        Self {
            kind,
            quantity: 1.0,
        }
    }

    pub fn maturity(&self) -> f64 {
        match &self.kind {
            InstrumentKind::ZeroCouponBond(s) | InstrumentKind::CouponBond(s) => s.maturity(),
            InstrumentKind::Forward { expiry, .. }
            | InstrumentKind::EuropeanOption { expiry, .. } => *expiry,
        }
    }

    pub fn depends_on_underlying(&self) -> bool {
        matches!(
            self.kind,
            InstrumentKind::Forward { .. } | InstrumentKind::EuropeanOption { .. }
        )
    }

    pub fn schedule(&self) -> Option<&CashflowSchedule> {
        match &self.kind {
            InstrumentKind::ZeroCouponBond(s) | InstrumentKind::CouponBond(s) => Some(s),
            _ => None,
        }
    }

    /// Size used to scale solver tolerances.
    pub fn notional(&self) -> f64 {
        let base = match &self.kind {
            InstrumentKind::ZeroCouponBond(s) | InstrumentKind::CouponBond(s) => s.notional(),
            InstrumentKind::Forward { strike, .. }
            | InstrumentKind::EuropeanOption { strike, .. } => *strike,
        };
        let n = (base * self.quantity).abs();
        if n > 0.0 {
            n
        } else {
            1.0
        }
    }

    /// Payoff at expiry times quantity, for the underlying-dependent kinds.
    pub fn terminal_payoff(&self, s: f64) -> f64 {
        let unit = match &self.kind {
            InstrumentKind::Forward { strike, .. } => s - strike,
            InstrumentKind::EuropeanOption { option, strike, .. } => match option {
                OptionType::Call => (s - strike).max(0.0),
                OptionType::Put => (strike - s).max(0.0),
            },
            InstrumentKind::ZeroCouponBond(_) | InstrumentKind::CouponBond(_) => 0.0,
        };
        unit * self.quantity
    }

    /// Cash flows scaled by quantity (empty for underlying-dependent kinds).
    pub fn scaled_flows(&self) -> Vec<Cashflow> {
        self.schedule()
            .map(|s| {
                s.flows()
                    .iter()
                    .map(|f| Cashflow {
                        time: f.time,
                        amount: f.amount * self.quantity,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// The same trade seen from the other side.
    pub fn mirrored(&self) -> Self {
        Self {
            kind: self.kind.clone(),
            quantity: -self.quantity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CollateralMode {
    None,
    Perfect,
    BilateralThreshold {
        threshold: f64,
    },
    /// Static amount held by the bank regardless of the trade value (negative if posted).
    ConstantOffset {
        amount: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollateralSpec {
    #[serde(flatten)]
    pub mode: CollateralMode,
    #[serde(default)]
    pub cure_period: f64,
}

impl Default for CollateralSpec {
    fn default() -> Self {
        Self::uncollateralized()
    }
}

impl CollateralSpec {
    pub fn new(mode: CollateralMode, cure_period: f64) -> Result<Self> {
        if !(cure_period >= 0.0) {
            return Err(Error::InvalidInput("cure period must be >= 0".into()));
        }
        if let CollateralMode::BilateralThreshold { threshold } = mode {
            if !(threshold >= 0.0) {
                return Err(Error::InvalidInput("threshold must be >= 0".into()));
            }
        }
        Ok(Self { mode, cure_period })
    }

    pub fn uncollateralized() -> Self {
        Self {
            mode: CollateralMode::None,
            cure_period: 0.0,
        }
    }

    pub fn perfect() -> Self {
        Self {
            mode: CollateralMode::Perfect,
            cure_period: 0.0,
        }
    }

    pub fn threshold(h: f64) -> Result<Self> {
        Self::new(CollateralMode::BilateralThreshold { threshold: h }, 0.0)
    }

    pub fn with_cure_period(self, cure_period: f64) -> Result<Self> {
        Self::new(self.mode, cure_period)
    }

    pub fn is_perfect(&self) -> bool {
        matches!(self.mode, CollateralMode::Perfect)
    }

    /// Agreement seen from the other party.
    pub fn mirrored(&self) -> Self {
        let mode = match self.mode {
            CollateralMode::ConstantOffset { amount } => {
                CollateralMode::ConstantOffset { amount: -amount }
            }
            m => m,
        };
        Self { mode, ..*self }
    }
}

/// Collateral held by the bank given the perfectly collateralized value.
pub fn collateral_amount(spec: &CollateralSpec, v_coll: f64) -> f64 {
    match spec.mode {
        CollateralMode::None => 0.0,
        CollateralMode::Perfect => v_coll,
        CollateralMode::BilateralThreshold { threshold } => {
            let excess = (v_coll.abs() - threshold).max(0.0);
            if v_coll < 0.0 {
                -excess
            } else {
                excess
            }
        }
        CollateralMode::ConstantOffset { amount } => amount,
    }
}

/// OIS-discounted value of the remaining flows, including a flow paying exactly at `t`.
pub fn collateralized_value(instrument: &Instrument, ois: &PiecewiseCurve, t: f64) -> Result<f64> {
    let schedule = instrument.schedule().ok_or_else(|| {
        Error::Unsupported(
            "collateralized_value needs deterministic cash flows; price options and forwards with the mc or pde engine"
                .into(),
        )
    })?;
    if t > schedule.maturity() {
        return Err(Error::Ordering {
            start: t,
            end: schedule.maturity(),
        });
    }
    Ok(remaining_flows_value(&instrument.scaled_flows(), ois, t))
}

pub(crate) fn remaining_flows_value(flows: &[Cashflow], ois: &PiecewiseCurve, t: f64) -> f64 {
    flows
        .iter()
        .filter(|f| f.time >= t)
        .map(|f| f.amount * (-ois.integral_unchecked(t, f.time)).exp())
        .sum()
}
