//! Bond-consistent valuation adjustments for bilateral, partially collateralized trades.
//!
//! The bank and its counterparty each fund at OIS plus a CDS spread plus a
//! calibrated liquidity basis. Trade values are split into the collateralized
//! value, default adjustments and funding adjustments, and computed either by
//! Monte Carlo regression or by a one-factor backward PDE.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bond_pricer;
pub mod calibrator;
pub mod curves;
pub mod error;
pub mod instruments;
pub mod mc_engine;
mod numerics;
pub mod pde_engine;
pub mod xva_engine;

pub use error::{BucketResidual, Error, Result};
