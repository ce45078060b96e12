//! Pathwise default and funding legs on simulated paths and the regression-based
//! fixed-point iteration for the full value.

use rayon::prelude::*;

use super::regression::fit_and_predict;
use super::valuation::CollateralizedPricer;
use crate::curves::{CounterpartyProfile, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::instruments::{collateral_amount, CollateralSpec};
use crate::mc_engine::{Estimate, PathSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Counterparty,
    Bank,
}

/// Default event of one name on one path: time and its time-0 value.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DefaultLeg {
    pub tau: f64,
    pub pv: f64,
}

impl DefaultLeg {
    const NONE: Self = Self {
        tau: f64::INFINITY,
        pv: 0.0,
    };

    fn value_at(&self, t: f64, df: f64) -> f64 {
        if t < self.tau {
            self.pv / df
        } else {
            0.0
        }
    }
}

/// Collateralized values and collateral on the path grid, shared by every leg.
pub(crate) struct PathGrid<'a> {
    pub paths: &'a PathSet,
    pub pricer: &'a CollateralizedPricer,
    pub ois: &'a PiecewiseCurve,
    pub collateral: &'a CollateralSpec,
    pub df: Vec<f64>,
    pub vc: Vec<f64>,
    pub coll: Vec<f64>,
}

impl<'a> PathGrid<'a> {
    pub fn new(
        paths: &'a PathSet,
        pricer: &'a CollateralizedPricer,
        ois: &'a PiecewiseCurve,
        collateral: &'a CollateralSpec,
    ) -> Self {
        let m = paths.n_times();
        let times = paths.times();
        let df: Vec<f64> = times
            .iter()
            .map(|&t| (-ois.integral_unchecked(0.0, t)).exp())
            .collect();
        let vc: Vec<f64> = if pricer.instrument().depends_on_underlying() {
            (0..paths.n_paths() * m)
                .into_par_iter()
                .map(|i| {
                    let (p, k) = (i / m, i % m);
                    pricer.value(times[k], paths.spot(p)[k])
                })
                .collect()
        } else {
            let column: Vec<f64> = times.iter().map(|&t| pricer.value(t, 1.0)).collect();
            (0..paths.n_paths())
                .flat_map(|_| column.iter().copied())
                .collect()
        };
        let coll = vc
            .iter()
            .map(|&v| collateral_amount(collateral, v))
            .collect();
        Self {
            paths,
            pricer,
            ois,
            collateral,
            df,
            vc,
            coll,
        }
    }

    fn m(&self) -> usize {
        self.paths.n_times()
    }

    fn v_coll_at(&self, path: usize, t: f64) -> f64 {
        self.pricer.value(t, self.paths.state_at(path, t).s)
    }

    /// Close-out legs: `(V^c_{τ+Δ} − C(τ))^±` scaled by the loss given default.
    pub fn default_legs(&self, side: Side, recovery: f64) -> Vec<DefaultLeg> {
        let horizon = self.paths.horizon();
        let lgd = 1.0 - recovery;
        let cure = self.collateral.cure_period;
        (0..self.paths.n_paths())
            .into_par_iter()
            .map(|p| {
                let (tc, tb) = (self.paths.tau_c()[p], self.paths.tau_b()[p]);
                let tau = match side {
                    Side::Counterparty if tc <= tb && tc <= horizon => tc,
                    Side::Bank if tb < tc && tb <= horizon => tb,
                    _ => return DefaultLeg::NONE,
                };
                let held = collateral_amount(self.collateral, self.v_coll_at(p, tau));
                let claim = self.v_coll_at(p, (tau + cure).min(horizon)) - held;
                let loss = match side {
                    Side::Counterparty => claim.max(0.0),
                    Side::Bank => (-claim).max(0.0),
                };
                DefaultLeg {
                    tau,
                    pv: (-self.ois.integral_unchecked(0.0, tau)).exp() * lgd * loss,
                }
            })
            .collect()
    }

    /// End of the funding window on a path: first default or the horizon.
    fn funding_end(&self, p: usize) -> f64 {
        self.paths.tau_c()[p]
            .min(self.paths.tau_b()[p])
            .min(self.paths.horizon())
    }

    /// Trapezoid integrals `∫_{t_k}^{u} D(t_k, s) w_s ds` for every grid time, with
    /// `w` given on the grid and the last partial cell ending at `u`.
    fn tail_integrals(&self, u: f64, discounted_w: impl Fn(usize) -> f64, out: &mut [f64]) {
        let times = self.paths.times();
        let m = self.m();
        let mut acc = 0.0;
        out[m - 1] = 0.0;
        let mut next = discounted_w(m - 1);
        for j in (0..m - 1).rev() {
            let (a, b) = (times[j], times[j + 1]);
            let here = discounted_w(j);
            if u > a {
                let end = u.min(b);
                let g_end = here + (next - here) * (end - a) / (b - a);
                acc += 0.5 * (end - a) * (here + g_end);
            }
            next = here;
            out[j] = acc / self.df[j];
        }
    }

    /// Funding legs of one name given the full value `v` on the grid, path-major.
    pub fn funding_legs(&self, side: Side, basis: &PiecewiseCurve, v: &[f64]) -> Vec<f64> {
        let m = self.m();
        let times = self.paths.times();
        let gamma: Vec<f64> = times.iter().map(|&t| basis.value_at(t)).collect();
        let mut out = vec![0.0; v.len()];
        out.par_chunks_mut(m).enumerate().for_each(|(p, row)| {
            let u = self.funding_end(p);
            let base = p * m;
            let w = |j: usize| {
                let x = v[base + j] - self.coll[base + j];
                let e = match side {
                    Side::Counterparty => x.max(0.0),
                    Side::Bank => (-x).max(0.0),
                };
                self.df[j] * gamma[j] * e
            };
            self.tail_integrals(u, w, row);
        });
        out
    }

    /// `∫_0^u D(0,s) w(p, k) ds` per path, with a pathwise weight on the grid.
    pub fn path_integrals(&self, w: impl Fn(usize, usize) -> f64 + Sync) -> Vec<f64> {
        let m = self.m();
        (0..self.paths.n_paths())
            .into_par_iter()
            .map_init(
                || vec![0.0; m],
                |row, p| {
                    self.tail_integrals(self.funding_end(p), |j| self.df[j] * w(p, j), row);
                    row[0]
                },
            )
            .collect()
    }

    /// Regressed conditional expectation of `y` on the alive paths at every time.
    pub fn conditional_expectation(&self, y: &[f64]) -> Vec<f64> {
        let m = self.m();
        let n = self.paths.n_paths();
        let enabled = [self.pricer.instrument().depends_on_underlying(), true, true];
        let columns: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|k| {
                let t = self.paths.times()[k];
                let factors: Vec<[f64; 3]> = (0..n)
                    .map(|p| {
                        let s = self.paths.state(p, k);
                        [s.s, s.pi_c, s.pi_b]
                    })
                    .collect();
                let col: Vec<f64> = (0..n).map(|p| y[p * m + k]).collect();
                let mask: Vec<bool> = (0..n).map(|p| self.paths.alive(p, t)).collect();
                fit_and_predict(&factors, enabled, &col, &mask)
            })
            .collect();
        let mut out = vec![0.0; n * m];
        for (k, col) in columns.iter().enumerate() {
            for p in 0..n {
                out[p * m + k] = col[p];
            }
        }
        out
    }

    /// Remaining default adjustment `L^C − L^B` on the grid.
    pub fn default_adjustment(&self, legs_c: &[DefaultLeg], legs_b: &[DefaultLeg]) -> Vec<f64> {
        let m = self.m();
        let times = self.paths.times();
        let mut out = vec![0.0; self.vc.len()];
        out.par_chunks_mut(m).enumerate().for_each(|(p, row)| {
            for k in 0..m {
                row[k] = legs_c[p].value_at(times[k], self.df[k])
                    - legs_b[p].value_at(times[k], self.df[k]);
            }
        });
        out
    }
}

/// Sample estimates of the four adjustments at time 0.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Adjustments {
    pub cva: Estimate,
    pub dva: Estimate,
    pub cfva: Estimate,
    pub dfva: Estimate,
    pub total: Estimate,
}

pub(crate) fn summarize(
    grid: &PathGrid<'_>,
    legs_c: &[DefaultLeg],
    legs_b: &[DefaultLeg],
    funding_c: Option<&[f64]>,
    funding_b: Option<&[f64]>,
) -> Adjustments {
    let m = grid.m();
    let n = grid.paths.n_paths();
    let first = |f: Option<&[f64]>| -> Vec<f64> {
        match f {
            Some(f) => (0..n).map(|p| f[p * m]).collect(),
            None => vec![0.0; n],
        }
    };
    let cva: Vec<f64> = legs_c.iter().map(|l| l.pv).collect();
    let dva: Vec<f64> = legs_b.iter().map(|l| l.pv).collect();
    let cfva = first(funding_c);
    let dfva = first(funding_b);
    let total: Vec<f64> = (0..n)
        .map(|p| cva[p] - dva[p] + cfva[p] - dfva[p])
        .collect();
    Adjustments {
        cva: Estimate::from_samples(&cva),
        dva: Estimate::from_samples(&dva),
        cfva: Estimate::from_samples(&cfva),
        dfva: Estimate::from_samples(&dfva),
        total: Estimate::from_samples(&total),
    }
}

pub(crate) struct PicardOutcome {
    pub v: Vec<f64>,
    pub adjustments: Adjustments,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub(crate) struct PicardSettings {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

/// Fixed point of `V = V^c − E[L^C − L^B + F^C(V) − F^B(V)]`, starting from the
/// default-only value.
pub(crate) fn solve_recursive(
    grid: &PathGrid<'_>,
    counterparty: &CounterpartyProfile,
    bank: &CounterpartyProfile,
    settings: &PicardSettings,
) -> Result<PicardOutcome> {
    let legs_c = grid.default_legs(Side::Counterparty, counterparty.recovery());
    let legs_b = grid.default_legs(Side::Bank, bank.recovery());
    let defaults = grid.default_adjustment(&legs_c, &legs_b);
    let fitted = grid.conditional_expectation(&defaults);
    let mut v: Vec<f64> = grid.vc.iter().zip(&fitted).map(|(a, b)| a - b).collect();

    let mut residual = f64::INFINITY;
    let mut rising = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let fc = grid.funding_legs(Side::Counterparty, counterparty.basis(), &v);
        let fb = grid.funding_legs(Side::Bank, bank.basis(), &v);
        let y: Vec<f64> = (0..v.len()).map(|i| defaults[i] + fc[i] - fb[i]).collect();
        let fitted = grid.conditional_expectation(&y);
        let mut change: f64 = 0.0;
        for i in 0..v.len() {
            let target = grid.vc[i] - fitted[i];
            let next = v[i] + settings.damping * (target - v[i]);
            change = change.max((next - v[i]).abs());
            v[i] = next;
        }
        if change > residual {
            rising += 1;
            if rising >= 3 {
                return Err(Error::Divergence {
                    iteration: iterations,
                    residual: change,
                });
            }
        } else {
            rising = 0;
        }
        residual = change;
        if residual <= settings.tolerance {
            converged = true;
            break;
        }
    }
    let fc = grid.funding_legs(Side::Counterparty, counterparty.basis(), &v);
    let fb = grid.funding_legs(Side::Bank, bank.basis(), &v);
    let adjustments = summarize(grid, &legs_c, &legs_b, Some(&fc), Some(&fb));
    Ok(PicardOutcome {
        v,
        adjustments,
        iterations,
        residual,
        converged,
    })
}
