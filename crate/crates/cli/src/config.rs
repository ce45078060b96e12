//! JSON configuration files.
//!
//! Curves may be a number (flat), an inline array of `{time, value}` records or
//! a path to a curve file, resolved against the referring file's directory.
//! Parse failures carry `path:line:col`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{self, DeserializeOwned, Deserializer, SeqAccess, Visitor};
use serde::Deserialize;
use xva_core::calibrator::BondQuote;
use xva_core::curves::{CounterpartyProfile, CurveNode, PiecewiseCurve};
use xva_core::instruments::{
    Cashflow, CashflowSchedule, CollateralSpec, Instrument, InstrumentKind, OptionType,
};
use xva_core::mc_engine::ModelDynamics;
use xva_core::xva_engine::{Market, SolverParams, Trade};

use crate::CliError;

fn read(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: cannot read {what}: {e}", path.display())))
}

/// Parses a JSON file, anchoring any error at its line and column.
fn parse<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = read(path, what)?;
    serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        let msg = match msg.rfind(" at line ") {
            Some(i) => msg[..i].to_string(),
            None => msg,
        };
        CliError::Input(format!(
            "{}:{}:{}: {msg}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub enum CurveRef {
    Flat(f64),
    Inline(PiecewiseCurve),
    File(PathBuf),
}

impl CurveRef {
    fn resolve(&self, dir: &Path) -> Result<PiecewiseCurve, CliError> {
        match self {
            CurveRef::Flat(v) => Ok(PiecewiseCurve::flat(*v)),
            CurveRef::Inline(c) => Ok(c.clone()),
            CurveRef::File(p) => {
                let path = dir.join(p);
                parse::<PiecewiseCurve>(&path, "curve file")
            }
        }
    }
}

impl<'de> Deserialize<'de> for CurveRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct CurveVisitor;

        impl<'de> Visitor<'de> for CurveVisitor {
            type Value = CurveRef;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, an array of {time, value} records or a curve file path")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<CurveRef, E> {
                Ok(CurveRef::Flat(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<CurveRef, E> {
                Ok(CurveRef::Flat(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<CurveRef, E> {
                Ok(CurveRef::Flat(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<CurveRef, E> {
                Ok(CurveRef::File(PathBuf::from(v)))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<CurveRef, A::Error> {
                let mut nodes = Vec::new();
                while let Some(node) = seq.next_element::<CurveNode>()? {
                    nodes.push(node);
                }
                PiecewiseCurve::new(nodes)
                    .map(CurveRef::Inline)
                    .map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_any(CurveVisitor)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub recovery: f64,
    pub hazard: CurveRef,
    #[serde(default = "zero_curve")]
    pub basis: CurveRef,
}

fn zero_curve() -> CurveRef {
    CurveRef::Flat(0.0)
}

impl ProfileConfig {
    fn resolve(&self, dir: &Path, name: &str) -> Result<CounterpartyProfile, CliError> {
        CounterpartyProfile::new(
            self.recovery,
            self.hazard.resolve(dir)?,
            self.basis.resolve(dir)?,
        )
        .map_err(|e| CliError::Input(format!("{name}: {e}")))
    }
}

fn default_frequency() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// Fixed-rate bond: either generated from `coupon`, `maturity` and `frequency`,
/// or given by explicit `flows`.
#[derive(Debug, Clone, Deserialize)]
#[serde(try_from = "RawBond")]
pub struct BondConfig(pub CashflowSchedule);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBond {
    notional: f64,
    #[serde(default)]
    coupon: f64,
    maturity: Option<f64>,
    #[serde(default = "default_frequency")]
    frequency: usize,
    flows: Option<Vec<Cashflow>>,
}

impl TryFrom<RawBond> for BondConfig {
    type Error = String;

    fn try_from(raw: RawBond) -> Result<Self, String> {
        let schedule = match (raw.flows, raw.maturity) {
            (Some(flows), None) => CashflowSchedule::new(flows, raw.notional),
            (None, Some(m)) if raw.coupon == 0.0 => CashflowSchedule::zero_coupon(raw.notional, m),
            (None, Some(m)) => {
                CashflowSchedule::fixed_coupon(raw.notional, raw.coupon, m, raw.frequency)
            }
            (Some(_), Some(_)) => return Err("give either `flows` or `maturity`, not both".into()),
            (None, None) => return Err("bond needs `maturity` or `flows`".into()),
        };
        schedule.map(BondConfig).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(try_from = "RawInstrument")]
pub struct InstrumentConfig(pub Instrument);

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum RawInstrument {
    Bond {
        notional: f64,
        #[serde(default)]
        coupon: f64,
        maturity: Option<f64>,
        #[serde(default = "default_frequency")]
        frequency: usize,
        flows: Option<Vec<Cashflow>>,
        #[serde(default = "unit")]
        quantity: f64,
    },
    Forward {
        strike: f64,
        expiry: f64,
        #[serde(default = "unit")]
        quantity: f64,
    },
    EuropeanOption {
        option: OptionType,
        strike: f64,
        expiry: f64,
        #[serde(default = "unit")]
        quantity: f64,
    },
}

impl TryFrom<RawInstrument> for InstrumentConfig {
    type Error = String;

    fn try_from(raw: RawInstrument) -> Result<Self, String> {
        let (kind, quantity) = match raw {
            RawInstrument::Bond {
                notional,
                coupon,
                maturity,
                frequency,
                flows,
                quantity,
            } => {
                let BondConfig(schedule) = BondConfig::try_from(RawBond {
                    notional,
                    coupon,
                    maturity,
                    frequency,
                    flows,
                })?;
                (Instrument::bond(schedule).kind, quantity)
            }
            RawInstrument::Forward {
                strike,
                expiry,
                quantity,
            } => (InstrumentKind::Forward { strike, expiry }, quantity),
            RawInstrument::EuropeanOption {
                option,
                strike,
                expiry,
                quantity,
            } => (
                InstrumentKind::EuropeanOption {
                    option,
                    strike,
                    expiry,
                },
                quantity,
            ),
        };
        Instrument::new(kind, quantity)
            .map(InstrumentConfig)
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    ois: CurveRef,
    counterparty: ProfileConfig,
    bank: Option<ProfileConfig>,
    dynamics: Option<ModelDynamics>,
}

/// Market file: OIS curve, both profiles and the factor dynamics. A missing bank
/// is default-free; missing dynamics mean a flat spot of 1 with no volatility.
pub fn load_market(path: &Path) -> Result<Market, CliError> {
    let raw: RawMarket = parse(path, "market config")?;
    let dir = base_dir(path);
    let ois = raw.ois.resolve(&dir)?;
    let counterparty = raw.counterparty.resolve(&dir, "counterparty")?;
    let bank = match &raw.bank {
        Some(b) => b.resolve(&dir, "bank")?,
        None => CounterpartyProfile::default_free(),
    };
    let dynamics = match raw.dynamics {
        Some(d) => d,
        None => ModelDynamics::lognormal(1.0, ois.value_at(0.0), 0.0),
    };
    dynamics
        .validate()
        .map_err(|e| CliError::Input(format!("{}: dynamics: {e}", path.display())))?;
    Ok(Market {
        ois,
        counterparty,
        bank,
        dynamics,
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrade {
    instrument: InstrumentConfig,
    #[serde(default)]
    collateral: CollateralSpec,
    #[serde(default)]
    solver: SolverParams,
}

/// Trade file: instrument, collateral agreement and optional solver settings.
pub fn load_trade(path: &Path) -> Result<(Trade, SolverParams), CliError> {
    let raw: RawTrade = parse(path, "trade config")?;
    let collateral = CollateralSpec::new(raw.collateral.mode, raw.collateral.cure_period)
        .map_err(|e| CliError::Input(format!("{}: collateral: {e}", path.display())))?;
    Ok((
        Trade {
            instrument: raw.instrument.0,
            collateral,
        },
        raw.solver,
    ))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBondPrice {
    ois: CurveRef,
    issuer: ProfileConfig,
    bond: BondConfig,
    #[serde(default)]
    valuation_time: f64,
}

pub struct BondPriceInput {
    pub ois: PiecewiseCurve,
    pub issuer: CounterpartyProfile,
    pub bond: CashflowSchedule,
    pub valuation_time: f64,
}

pub fn load_bond_price(path: &Path) -> Result<BondPriceInput, CliError> {
    let raw: RawBondPrice = parse(path, "bond config")?;
    let dir = base_dir(path);
    Ok(BondPriceInput {
        ois: raw.ois.resolve(&dir)?,
        issuer: raw.issuer.resolve(&dir, "issuer")?,
        bond: raw.bond.0,
        valuation_time: raw.valuation_time,
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuote {
    bond: BondConfig,
    price: f64,
}

pub fn load_quotes(path: &Path) -> Result<Vec<BondQuote>, CliError> {
    let raw: Vec<RawQuote> = parse(path, "quotes file")?;
    Ok(raw
        .into_iter()
        .map(|q| BondQuote {
            bond: q.bond.0,
            market_price: q.price,
        })
        .collect())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIssuerCurves {
    ois: CurveRef,
    hazard: CurveRef,
    recovery: f64,
}

pub struct IssuerCurves {
    pub ois: PiecewiseCurve,
    pub hazard: PiecewiseCurve,
    pub recovery: f64,
}

pub fn load_issuer_curves(path: &Path) -> Result<IssuerCurves, CliError> {
    let raw: RawIssuerCurves = parse(path, "curves file")?;
    let dir = base_dir(path);
    Ok(IssuerCurves {
        ois: raw.ois.resolve(&dir)?,
        hazard: raw.hazard.resolve(&dir)?,
        recovery: raw.recovery,
    })
}
