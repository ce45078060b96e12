//! Piecewise-constant term structures and the discount/survival factors built on them.
//!
//! A [`PiecewiseCurve`] holds the OIS (collateral) rate, a default intensity or a
//! bond-CDS basis. Every curve integral is evaluated segment by segment in closed
//! form; no quadrature is involved anywhere in this module.

use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};

/// One `{time, value}` record of a curve file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveNode {
    pub time: f64,
    pub value: f64,
}

/// Right-continuous piecewise-constant curve with flat extrapolation.
///
/// The value on `[t_i, t_{i+1})` is `values[i]`; the last value extends to infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CurveNode>", into = "Vec<CurveNode>")]
pub struct PiecewiseCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseCurve {
    pub fn new(nodes: Vec<CurveNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidInput("curve needs at least one node".into()));
        }
        if nodes[0].time != 0.0 {
            return Err(Error::InvalidInput(format!(
                "first curve node must be at time 0, got {}",
                nodes[0].time
            )));
        }
        for w in nodes.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::InvalidInput(format!(
                    "curve node times must be strictly increasing ({} then {})",
                    w[0].time, w[1].time
                )));
            }
        }
        if nodes
            .iter()
            .any(|n| !n.time.is_finite() || !n.value.is_finite())
        {
            return Err(Error::InvalidInput("curve nodes must be finite".into()));
        }
        Ok(Self {
            times: nodes.iter().map(|n| n.time).collect(),
            values: nodes.iter().map(|n| n.value).collect(),
        })
    }

    /// Builds a curve from parallel `(time, value)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(time, value)| CurveNode { time, value })
                .collect(),
        )
    }

    pub fn flat(value: f64) -> Self {
        Self {
            times: vec![0.0],
            values: vec![value],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nodes(&self) -> Vec<CurveNode> {
        self.times
            .iter()
            .zip(&self.values)
            .map(|(&time, &value)| CurveNode { time, value })
            .collect()
    }

    pub fn is_flat(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    fn segment_index(&self, t: f64) -> usize {
        // last node with time <= t
        self.times.partition_point(|&ti| ti <= t).saturating_sub(1)
    }

    /// Value in force at `t` (right-continuous).
    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.segment_index(t)]
    }

    /// Exact integral of the curve over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        check_order(a, b)?;
        Ok(self.integral_unchecked(a, b))
    }

    pub(crate) fn integral_unchecked(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut i = self.segment_index(a);
        let mut lo = a;
        let mut acc = 0.0;
        loop {
            let hi = match self.times.get(i + 1) {
                Some(&next) if next < b => next,
                _ => b,
            };
            acc += self.values[i] * (hi - lo);
            if hi >= b {
                return acc;
            }
            lo = hi;
            i += 1;
        }
    }

    /// Node times strictly inside `(a, b)`.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.times.iter().copied().filter(move |&t| t > a && t < b)
    }

    /// Pointwise combination on the union of both node grids.
    pub fn combine(&self, other: &PiecewiseCurve, f: impl Fn(f64, f64) -> f64) -> PiecewiseCurve {
        let mut times: Vec<f64> = self.times.iter().chain(&other.times).copied().collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let values = times
            .iter()
            .map(|&t| f(self.value_at(t), other.value_at(t)))
            .collect();
        PiecewiseCurve { times, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PiecewiseCurve {
        PiecewiseCurve {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl TryFrom<Vec<CurveNode>> for PiecewiseCurve {
    type Error = Error;

    fn try_from(nodes: Vec<CurveNode>) -> Result<Self> {
        Self::new(nodes)
    }
}

impl From<PiecewiseCurve> for Vec<CurveNode> {
    fn from(curve: PiecewiseCurve) -> Self {
        curve.nodes()
    }
}

/// Recovery, default intensity and bond-CDS basis of one legal entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct CounterpartyProfile {
    recovery: f64,
    hazard: PiecewiseCurve,
    basis: PiecewiseCurve,
}

#[derive(Serialize, Deserialize)]
struct RawProfile {
    recovery: f64,
    hazard: PiecewiseCurve,
    basis: PiecewiseCurve,
}

impl TryFrom<RawProfile> for CounterpartyProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        Self::new(raw.recovery, raw.hazard, raw.basis)
    }
}

impl From<CounterpartyProfile> for RawProfile {
    fn from(p: CounterpartyProfile) -> Self {
        RawProfile {
            recovery: p.recovery,
            hazard: p.hazard,
            basis: p.basis,
        }
    }
}

impl CounterpartyProfile {
    pub fn new(recovery: f64, hazard: PiecewiseCurve, basis: PiecewiseCurve) -> Result<Self> {
        if !(0.0..=1.0).contains(&recovery) {
            return Err(Error::InvalidInput(format!(
                "recovery must lie in [0, 1], got {recovery}"
            )));
        }
        if hazard.values().iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidInput(
                "hazard rates must be nonnegative".into(),
            ));
        }
        Ok(Self {
            recovery,
            hazard,
            basis,
        })
    }

    /// Flat hazard and basis.
    pub fn flat(recovery: f64, hazard: f64, basis: f64) -> Result<Self> {
        Self::new(
            recovery,
            PiecewiseCurve::flat(hazard),
            PiecewiseCurve::flat(basis),
        )
    }

    /// An entity that cannot default and carries no basis.
    pub fn default_free() -> Self {
        Self {
            recovery: 0.0,
            hazard: PiecewiseCurve::flat(0.0),
            basis: PiecewiseCurve::flat(0.0),
        }
    }

    pub fn recovery(&self) -> f64 {
        self.recovery
    }

    pub fn hazard(&self) -> &PiecewiseCurve {
        &self.hazard
    }

    pub fn basis(&self) -> &PiecewiseCurve {
        &self.basis
    }

    pub fn with_basis(&self, basis: PiecewiseCurve) -> Self {
        Self {
            basis,
            ..self.clone()
        }
    }

    /// Short CDS spread curve `π = λ(1 − R)`.
    pub fn cds_spread(&self) -> PiecewiseCurve {
        let lgd = 1.0 - self.recovery;
        self.hazard.map(|l| l * lgd)
    }

    /// Full funding spread over OIS, `π + γ`.
    pub fn funding_spread(&self) -> PiecewiseCurve {
        let lgd = 1.0 - self.recovery;
        self.hazard.combine(&self.basis, |l, g| l * lgd + g)
    }
}

/// `D(t, s) = exp(−∫_t^s c_u du)`.
pub fn discount_factor(curve: &PiecewiseCurve, t: f64, s: f64) -> Result<f64> {
    Ok((-curve.integral(t, s)?).exp())
}

/// `exp(−∫_t^s λ_u du)`.
pub fn survival_probability(hazard: &PiecewiseCurve, t: f64, s: f64) -> Result<f64> {
    Ok((-hazard.integral(t, s)?).exp())
}

/// `exp(−∫_t^s (λ_u + γ_u) du)`; exceeds one when the basis is negative enough.
pub fn liquidity_adjusted_survival(profile: &CounterpartyProfile, t: f64, s: f64) -> Result<f64> {
    let exponent = profile.hazard.integral(t, s)? + profile.basis.integral(t, s)?;
    Ok((-exponent).exp())
}

/// Bond-implied intensity `λ̄ = λ + γ/(1 − R)`, whose loss spread equals `π + γ`.
pub fn bond_implied_hazard(profile: &CounterpartyProfile) -> Result<PiecewiseCurve> {
    let lgd = 1.0 - profile.recovery;
    if lgd == 0.0 {
        return Err(Error::DivisionByZero(
            "bond-implied hazard undefined for recovery = 1".into(),
        ));
    }
    Ok(profile.hazard.combine(&profile.basis, |l, g| l + g / lgd))
}
