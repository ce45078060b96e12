//! Risk-neutral simulation of the underlying, both short CDS spreads and the two
//! default times, plus exposure profiles over the simulated paths.
//!
//! Every path draws from its own ChaCha8 stream keyed by the master seed and the
//! path index, so results do not depend on how paths are spread across threads.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{discount_factor, CounterpartyProfile, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::instruments::{collateral_amount, CollateralSpec};
use crate::numerics::csv_float;

const PSD_TOLERANCE: f64 = 1e-12;

/// Diffusion parameters of `(S, π^C, π^B)` under the pricing measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDynamics {
    pub s0: f64,
    /// Deterministic rate driving the drift `r − q` of `S`.
    pub rate: f64,
    #[serde(default)]
    pub dividend: f64,
    #[serde(default)]
    pub vol_s: f64,
    #[serde(default)]
    pub pi0_c: f64,
    #[serde(default)]
    pub pi0_b: f64,
    #[serde(default)]
    pub drift_c: f64,
    #[serde(default)]
    pub drift_b: f64,
    /// Normal (absolute) volatility of `π^C`.
    #[serde(default)]
    pub vol_c: f64,
    #[serde(default)]
    pub vol_b: f64,
    #[serde(default)]
    pub rho_sc: f64,
    #[serde(default)]
    pub rho_sb: f64,
    #[serde(default)]
    pub rho_cb: f64,
}

impl ModelDynamics {
    /// Lognormal underlying with constant, deterministic spreads.
    pub fn lognormal(s0: f64, rate: f64, vol_s: f64) -> Self {
        Self {
            s0,
            rate,
            dividend: 0.0,
            vol_s,
            pi0_c: 0.0,
            pi0_b: 0.0,
            drift_c: 0.0,
            drift_b: 0.0,
            vol_c: 0.0,
            vol_b: 0.0,
            rho_sc: 0.0,
            rho_sb: 0.0,
            rho_cb: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cholesky().map(|_| ())
    }

    /// Lower Cholesky factor of the correlation matrix; tolerates semi-definite input.
    pub fn cholesky(&self) -> Result<Matrix3<f64>> {
        let finite = [
            self.s0,
            self.rate,
            self.dividend,
            self.vol_s,
            self.pi0_c,
            self.pi0_b,
            self.drift_c,
            self.drift_b,
            self.vol_c,
            self.vol_b,
            self.rho_sc,
            self.rho_sb,
            self.rho_cb,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "model dynamics contain non-finite values".into(),
            ));
        }
        if !(self.s0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "s0 must be positive, got {}",
                self.s0
            )));
        }
        if self.vol_s < 0.0 || self.vol_c < 0.0 || self.vol_b < 0.0 {
            return Err(Error::InvalidInput(
                "volatilities must be nonnegative".into(),
            ));
        }
        for rho in [self.rho_sc, self.rho_sb, self.rho_cb] {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(Error::InvalidInput(format!(
                    "correlation {rho} outside [-1, 1]"
                )));
            }
        }
        #[rustfmt::skip]
        let corr = Matrix3::new(
            1.0, self.rho_sc, self.rho_sb,
            self.rho_sc, 1.0, self.rho_cb,
            self.rho_sb, self.rho_cb, 1.0,
        );
        let mut l = Matrix3::zeros();
        for j in 0..3 {
            let mut d = corr[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d < -PSD_TOLERANCE {
                return Err(Error::InvalidInput(
                    "correlation matrix is not positive semi-definite".into(),
                ));
            }
            let djj = d.max(0.0).sqrt();
            l[(j, j)] = djj;
            for i in j + 1..3 {
                let mut s = corr[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if djj > PSD_TOLERANCE.sqrt() {
                    l[(i, j)] = s / djj;
                } else if s.abs() > 1e-6 {
                    return Err(Error::InvalidInput(
                        "correlation matrix is not positive semi-definite".into(),
                    ));
                }
            }
        }
        Ok(l)
    }

    /// Same dynamics seen from the other side: counterparty and bank factors swap.
    pub fn mirrored(&self) -> Self {
        Self {
            pi0_c: self.pi0_b,
            pi0_b: self.pi0_c,
            drift_c: self.drift_b,
            drift_b: self.drift_c,
            vol_c: self.vol_b,
            vol_b: self.vol_c,
            rho_sc: self.rho_sb,
            rho_sb: self.rho_sc,
            ..self.clone()
        }
    }
}

/// Factor values on one path at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub s: f64,
    pub pi_c: f64,
    pub pi_b: f64,
}

/// Simulated trajectories on a uniform grid, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    times: Vec<f64>,
    n_paths: usize,
    spot: Vec<f64>,
    pi_c: Vec<f64>,
    pi_b: Vec<f64>,
    tau_c: Vec<f64>,
    tau_b: Vec<f64>,
    seed: u64,
    // names exchanged by `mirrored`; exponential draws follow the names
    swapped: bool,
}

impl PathSet {
    /// Assembles a path set from explicit trajectories (each `n_paths × times.len()`,
    /// path-major) and default times.
    pub fn from_parts(
        times: Vec<f64>,
        spot: Vec<f64>,
        pi_c: Vec<f64>,
        pi_b: Vec<f64>,
        tau_c: Vec<f64>,
        tau_b: Vec<f64>,
    ) -> Result<Self> {
        let m = times.len();
        let n = tau_c.len();
        if m < 2 || n == 0 {
            return Err(Error::InvalidInput(
                "path set needs at least two times and one path".into(),
            ));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "path times must start at 0 and increase".into(),
            ));
        }
        let dt = times[1] - times[0];
        if times
            .windows(2)
            .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0))
        {
            return Err(Error::InvalidInput("path times must be uniform".into()));
        }
        if spot.len() != n * m || pi_c.len() != n * m || pi_b.len() != n * m || tau_b.len() != n {
            return Err(Error::InvalidInput(
                "path arrays have inconsistent sizes".into(),
            ));
        }
        if spot.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput(
                "spot must be positive on every path".into(),
            ));
        }
        Ok(Self {
            times,
            n_paths: n,
            spot,
            pi_c,
            pi_b,
            tau_c,
            tau_b,
            seed: 0,
            swapped: false,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spot(&self, path: usize) -> &[f64] {
        let m = self.n_times();
        &self.spot[path * m..(path + 1) * m]
    }

    pub fn pi_c(&self, path: usize) -> &[f64] {
        let m = self.n_times();
        &self.pi_c[path * m..(path + 1) * m]
    }

    pub fn pi_b(&self, path: usize) -> &[f64] {
        let m = self.n_times();
        &self.pi_b[path * m..(path + 1) * m]
    }

    pub fn tau_c(&self) -> &[f64] {
        &self.tau_c
    }

    pub fn tau_b(&self) -> &[f64] {
        &self.tau_b
    }

    pub fn state(&self, path: usize, k: usize) -> State {
        let i = path * self.n_times() + k;
        State {
            s: self.spot[i],
            pi_c: self.pi_c[i],
            pi_b: self.pi_b[i],
        }
    }

    /// State at an arbitrary time: `S` interpolated log-linearly, spreads linearly,
    /// held at the horizon value beyond it.
    pub fn state_at(&self, path: usize, t: f64) -> State {
        let m = self.n_times();
        if t >= self.horizon() {
            return self.state(path, m - 1);
        }
        let dt = self.times[1];
        let k = ((t / dt).floor() as usize).min(m - 2);
        let w = ((t - self.times[k]) / dt).clamp(0.0, 1.0);
        let (a, b) = (self.state(path, k), self.state(path, k + 1));
        State {
            s: a.s * (b.s / a.s).powf(w),
            pi_c: a.pi_c + w * (b.pi_c - a.pi_c),
            pi_b: a.pi_b + w * (b.pi_b - a.pi_b),
        }
    }

    /// Role swap: counterparty and bank spreads and default times exchange places.
    pub fn mirrored(&self) -> Self {
        Self {
            pi_c: self.pi_b.clone(),
            pi_b: self.pi_c.clone(),
            tau_c: self.tau_b.clone(),
            tau_b: self.tau_c.clone(),
            swapped: !self.swapped,
            ..self.clone()
        }
    }

    pub(crate) fn alive(&self, path: usize, t: f64) -> bool {
        self.tau_c[path] > t && self.tau_b[path] > t
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn path_rng(key: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(path as u64);
    rng
}

fn uniform_grid(horizon: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps)
        .map(|k| {
            if k == n_steps {
                horizon
            } else {
                horizon * k as f64 / n_steps as f64
            }
        })
        .collect()
}

/// Simulates `n_paths` trajectories of `(S, π^C, π^B)` on `n_steps` uniform steps.
///
/// Spreads start at `pi0_c`, `pi0_b`. No defaults are sampled: both default times
/// are `+∞` until [`sample_default_times`] is applied.
pub fn simulate_paths(
    dynamics: &ModelDynamics,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    simulate_with_base(dynamics, None, horizon, n_steps, n_paths, seed)
}

/// As [`simulate_paths`], with each spread following `λ(t)(1 − R)` from the profile
/// plus the simulated deviation; the `pi0` fields are not used.
pub fn simulate_paths_for_profiles(
    dynamics: &ModelDynamics,
    counterparty: &CounterpartyProfile,
    bank: &CounterpartyProfile,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    let base = (counterparty.cds_spread(), bank.cds_spread());
    simulate_with_base(
        dynamics,
        Some((&base.0, &base.1)),
        horizon,
        n_steps,
        n_paths,
        seed,
    )
}

fn simulate_with_base(
    dynamics: &ModelDynamics,
    base: Option<(&PiecewiseCurve, &PiecewiseCurve)>,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    if n_steps == 0 || n_paths == 0 {
        return Err(Error::InvalidInput(
            "n_steps and n_paths must be at least 1".into(),
        ));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let chol = dynamics.cholesky()?;
    let times = uniform_grid(horizon, n_steps);
    let m = times.len();
    let dt = horizon / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let d = dynamics;
    let s_drift = (d.rate - d.dividend - 0.5 * d.vol_s * d.vol_s) * dt;
    // deterministic increments of the spread term structure on each step
    let base_steps: Option<(Vec<f64>, Vec<f64>)> = base.map(|(c, b)| {
        let inc = |curve: &PiecewiseCurve| -> Vec<f64> {
            times
                .windows(2)
                .map(|w| curve.value_at(w[1]) - curve.value_at(w[0]))
                .collect()
        };
        (inc(c), inc(b))
    });
    let (start_c, start_b) = match base {
        Some((c, b)) => (c.value_at(0.0), b.value_at(0.0)),
        None => (d.pi0_c, d.pi0_b),
    };

    let mut spot = vec![0.0; n_paths * m];
    let mut pi_c = vec![0.0; n_paths * m];
    let mut pi_b = vec![0.0; n_paths * m];
    let key = splitmix64(seed);
    spot.par_chunks_mut(m)
        .zip(pi_c.par_chunks_mut(m))
        .zip(pi_b.par_chunks_mut(m))
        .enumerate()
        .for_each(|(p, ((s, c), b))| {
            let mut rng = path_rng(key, p);
            s[0] = d.s0;
            c[0] = start_c.max(0.0);
            b[0] = start_b.max(0.0);
            for k in 0..m - 1 {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let w0 = chol[(0, 0)] * z0;
                let w1 = chol[(1, 0)] * z0 + chol[(1, 1)] * z1;
                let w2 = chol[(2, 0)] * z0 + chol[(2, 1)] * z1 + chol[(2, 2)] * z2;
                s[k + 1] = s[k] * (s_drift + d.vol_s * sqrt_dt * w0).exp();
                let (shift_c, shift_b) = match &base_steps {
                    Some((ic, ib)) => (ic[k], ib[k]),
                    None => (0.0, 0.0),
                };
                c[k + 1] = (c[k] + shift_c + d.drift_c * dt + d.vol_c * sqrt_dt * w1).max(0.0);
                b[k + 1] = (b[k] + shift_b + d.drift_b * dt + d.vol_b * sqrt_dt * w2).max(0.0);
            }
        });

    Ok(PathSet {
        times,
        n_paths,
        spot,
        pi_c,
        pi_b,
        tau_c: vec![f64::INFINITY; n_paths],
        tau_b: vec![f64::INFINITY; n_paths],
        seed,
        swapped: false,
    })
}

/// First time the left-endpoint integrated intensity reaches `threshold`; linear
/// within a step, extrapolated with the last intensity beyond the grid.
fn first_passage(times: &[f64], intensity: impl Fn(usize) -> f64, threshold: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..times.len() - 1 {
        let lambda = intensity(k);
        let next = acc + lambda * (times[k + 1] - times[k]);
        if next >= threshold && lambda > 0.0 {
            return times[k] + (threshold - acc) / lambda;
        }
        acc = next;
    }
    let last = intensity(times.len() - 1);
    if last > 0.0 {
        times[times.len() - 1] + (threshold - acc) / last
    } else {
        f64::INFINITY
    }
}

fn exponential_draws(seed: u64, seed_offset: u64, n_paths: usize) -> Vec<(f64, f64)> {
    let key =
        splitmix64(splitmix64(seed) ^ splitmix64(seed_offset.wrapping_add(0xD1B5_4A32_D192_ED03)));
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(key, p);
            (rng.sample(Exp1), rng.sample(Exp1))
        })
        .collect()
}

fn check_recovery(recovery: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&recovery) {
        return Err(Error::InvalidInput(format!(
            "default sampling needs recovery in [0, 1), got {recovery}"
        )));
    }
    Ok(1.0 - recovery)
}

/// Samples `τ^C`, `τ^B` as first passages of `∫ π^k/(1 − R_k)` through independent
/// unit exponentials (doubly stochastic given the spread paths).
pub fn sample_default_times(
    paths: &PathSet,
    recovery_c: f64,
    recovery_b: f64,
    seed_offset: u64,
) -> Result<PathSet> {
    let (lgd_c, lgd_b) = (check_recovery(recovery_c)?, check_recovery(recovery_b)?);
    sample_with(paths, seed_offset, |_, pi| pi / lgd_c, |_, pi| pi / lgd_b)
}

/// Samples default times from the bond-implied intensities `(π + γ)/(1 − R)`,
/// floored at zero. The same exponentials as [`sample_default_times`] are used for
/// equal `seed_offset`, so both samplings are pathwise coupled.
pub fn sample_bond_implied_default_times(
    paths: &PathSet,
    counterparty: &CounterpartyProfile,
    bank: &CounterpartyProfile,
    seed_offset: u64,
) -> Result<PathSet> {
    let lgd_c = check_recovery(counterparty.recovery())?;
    let lgd_b = check_recovery(bank.recovery())?;
    let (gc, gb) = (counterparty.basis(), bank.basis());
    sample_with(
        paths,
        seed_offset,
        |t, pi| ((pi + gc.value_at(t)) / lgd_c).max(0.0),
        |t, pi| ((pi + gb.value_at(t)) / lgd_b).max(0.0),
    )
}

fn sample_with(
    paths: &PathSet,
    seed_offset: u64,
    intensity_c: impl Fn(f64, f64) -> f64 + Sync,
    intensity_b: impl Fn(f64, f64) -> f64 + Sync,
) -> Result<PathSet> {
    let draws = exponential_draws(paths.seed, seed_offset, paths.n_paths);
    let times = &paths.times;
    let taus: Vec<(f64, f64)> = draws
        .par_iter()
        .enumerate()
        .map(|(p, &(e_c, e_b))| {
            let (e_c, e_b) = if paths.swapped {
                (e_b, e_c)
            } else {
                (e_c, e_b)
            };
            let (pc, pb) = (paths.pi_c(p), paths.pi_b(p));
            (
                first_passage(times, |k| intensity_c(times[k], pc[k]), e_c),
                first_passage(times, |k| intensity_b(times[k], pb[k]), e_b),
            )
        })
        .collect();
    let (tau_c, tau_b) = taus.into_iter().unzip();
    Ok(PathSet {
        tau_c,
        tau_b,
        ..paths.clone()
    })
}

/// Mean and standard error of an i.i.d. sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }

    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::exact(0.0);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self::exact(mean);
        }
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Self {
            value: mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

/// Expected positive and negative exposure of alive paths on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureProfile {
    pub times: Vec<f64>,
    pub epe: Vec<f64>,
    pub ene: Vec<f64>,
    pub discounted_epe: Vec<f64>,
    pub discounted_ene: Vec<f64>,
    pub epe_se: Vec<f64>,
    pub ene_se: Vec<f64>,
    pub discounted_epe_se: Vec<f64>,
    pub discounted_ene_se: Vec<f64>,
}

impl ExposureProfile {
    /// Comma-separated table with a header row; values at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "time,epe,ene,discounted_epe,discounted_ene,epe_se,ene_se,discounted_epe_se,discounted_ene_se\n",
        );
        for k in 0..self.times.len() {
            let row = [
                self.times[k],
                self.epe[k],
                self.ene[k],
                self.discounted_epe[k],
                self.discounted_ene[k],
                self.epe_se[k],
                self.ene_se[k],
                self.discounted_epe_se[k],
                self.discounted_ene_se[k],
            ];
            let fields: Vec<String> = row.iter().map(|&x| csv_float(x)).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Exposure profile of `valuation` with collateral computed from the same value.
pub fn exposure_profile(
    paths: &PathSet,
    ois: &PiecewiseCurve,
    valuation: impl Fn(f64, &State) -> f64 + Sync,
    collateral: &CollateralSpec,
) -> ExposureProfile {
    let m = paths.n_times();
    let values: Vec<f64> = (0..paths.n_paths * m)
        .into_par_iter()
        .map(|i| {
            let (p, k) = (i / m, i % m);
            valuation(paths.times[k], &paths.state(p, k))
        })
        .collect();
    exposure_from_grid(paths, ois, &values, &values, collateral)
}

/// Exposure profile from path-major grids of the value `v` and of the value that
/// drives collateral, `v_coll`.
pub fn exposure_from_grid(
    paths: &PathSet,
    ois: &PiecewiseCurve,
    v: &[f64],
    v_coll: &[f64],
    collateral: &CollateralSpec,
) -> ExposureProfile {
    let m = paths.n_times();
    let n = paths.n_paths;
    let columns: Vec<[Estimate; 4]> = (0..m)
        .into_par_iter()
        .map(|k| {
            let t = paths.times[k];
            let df = discount_factor(ois, 0.0, t).unwrap_or(1.0);
            let mut pos = Vec::with_capacity(n);
            let mut neg = Vec::with_capacity(n);
            for p in 0..n {
                let i = p * m + k;
                let x = if paths.alive(p, t) {
                    v[i] - collateral_amount(collateral, v_coll[i])
                } else {
                    0.0
                };
                pos.push(x.max(0.0));
                neg.push((-x).max(0.0));
            }
            let (epe, ene) = (Estimate::from_samples(&pos), Estimate::from_samples(&neg));
            let scale = |e: Estimate| Estimate {
                value: e.value * df,
                se: e.se * df,
            };
            [epe, ene, scale(epe), scale(ene)]
        })
        .collect();
    let col = |j: usize, se: bool| -> Vec<f64> {
        columns
            .iter()
            .map(|c| if se { c[j].se } else { c[j].value })
            .collect()
    };
    ExposureProfile {
        times: paths.times.clone(),
        epe: col(0, false),
        ene: col(1, false),
        discounted_epe: col(2, false),
        discounted_ene: col(3, false),
        epe_se: col(0, true),
        ene_se: col(1, true),
        discounted_epe_se: col(2, true),
        discounted_ene_se: col(3, true),
    }
}
