//! Backward finite-difference solver in the underlying for deterministic spreads.
//!
//! The collateralized value `V^c` and the four adjustments are carried as separate
//! unknowns on a common grid,
//!
//! ```text
//! V = V^c − A_cva + A_dva − A_cfva + A_dfva,
//! ```
//!
//! each obeying `∂A + L_S A − (c + λ^C + λ^B) A + source = 0`. Default sources are
//! driven by `V^c` and time-stepped with Crank–Nicolson; funding sources of the
//! recursive method depend on `V` itself and are taken from the later time level.
//! Two Rannacher start-up steps damp the payoff kink.

use serde::{Deserialize, Serialize};

use crate::curves::{bond_implied_hazard, CounterpartyProfile, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::instruments::{collateral_amount, CollateralSpec, Instrument};
use crate::mc_engine::ModelDynamics;
use crate::numerics::{csv_float, solve_tridiagonal};

/// Limit on `(|γ^C| + |γ^B|)·Δt` for the explicit funding sources.
pub const MAX_FUNDING_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub s_min: f64,
    pub s_max: f64,
    pub n_space: usize,
    pub n_time: usize,
    #[serde(default)]
    pub log_spaced: bool,
}

impl SpatialGrid {
    pub fn uniform(s_min: f64, s_max: f64, n_space: usize, n_time: usize) -> Result<Self> {
        let g = Self {
            s_min,
            s_max,
            n_space,
            n_time,
            log_spaced: false,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn log_spaced(s_min: f64, s_max: f64, n_space: usize, n_time: usize) -> Result<Self> {
        let g = Self {
            s_min,
            s_max,
            n_space,
            n_time,
            log_spaced: true,
        };
        g.validate()?;
        Ok(g)
    }

    /// Uniform grid on `[0, 4·max(S₀, K)]`; `S₀` falls on a node when
    /// `n_space − 1` is a multiple of 4 and `S₀ ≥ K`.
    pub fn for_spot(s0: f64, strike: Option<f64>, n_space: usize, n_time: usize) -> Result<Self> {
        let scale = strike.map_or(s0, |k| k.max(s0));
        Self::uniform(0.0, 4.0 * scale, n_space, n_time)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_space < 3 || self.n_time < 1 {
            return Err(Error::InvalidInput(
                "spatial grid needs n_space >= 3 and n_time >= 1".into(),
            ));
        }
        if !(self.s_min >= 0.0 && self.s_max > self.s_min && self.s_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "invalid spatial range [{}, {}]",
                self.s_min, self.s_max
            )));
        }
        if self.log_spaced && !(self.s_min > 0.0) {
            return Err(Error::InvalidInput(
                "log-spaced grid needs s_min > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.n_space - 1;
        (0..=n)
            .map(|i| {
                let w = i as f64 / n as f64;
                if i == n {
                    self.s_max
                } else if self.log_spaced {
                    self.s_min * (self.s_max / self.s_min).powf(w)
                } else {
                    self.s_min + (self.s_max - self.s_min) * w
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeMethod {
    /// Funding sources driven by the full value.
    Recursive,
    /// Funding sources driven by `V^c`.
    FirstOrder,
    /// No funding sources; defaults at the bond-implied intensities.
    BondImplied,
}

#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub instrument: Instrument,
    pub collateral: CollateralSpec,
    pub ois: PiecewiseCurve,
    pub counterparty: CounterpartyProfile,
    pub bank: CounterpartyProfile,
    pub dynamics: ModelDynamics,
    pub grid: SpatialGrid,
    pub method: PdeMethod,
}

/// Values of all unknowns at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub v: f64,
    pub v_coll: f64,
    pub cva: f64,
    pub dva: f64,
    pub cfva: f64,
    pub dfva: f64,
}

/// Solution on every time level, stored level-major.
#[derive(Debug, Clone)]
pub struct PdeSurface {
    times: Vec<f64>,
    nodes: Vec<f64>,
    v_coll: Vec<f64>,
    cva: Vec<f64>,
    dva: Vec<f64>,
    cfva: Vec<f64>,
    dfva: Vec<f64>,
    recovery_c: f64,
    recovery_b: f64,
}

impl PdeSurface {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn idx(&self, level: usize, i: usize) -> usize {
        level * self.nodes.len() + i
    }

    pub fn at_node(&self, level: usize, i: usize) -> Components {
        let j = self.idx(level, i);
        let (vc, cva, dva, cfva, dfva) = (
            self.v_coll[j],
            self.cva[j],
            self.dva[j],
            self.cfva[j],
            self.dfva[j],
        );
        Components {
            v: vc - cva + dva - cfva + dfva,
            v_coll: vc,
            cva,
            dva,
            cfva,
            dfva,
        }
    }

    pub fn value(&self, level: usize, i: usize) -> f64 {
        self.at_node(level, i).v
    }

    /// Quadratic interpolation through the three nodes nearest to `s`.
    pub fn at_spot(&self, level: usize, s: f64) -> Components {
        let n = self.nodes.len();
        let hit = self.nodes.partition_point(|&x| x < s);
        if hit < n && self.nodes[hit] == s {
            return self.at_node(level, hit);
        }
        let centre = hit.clamp(1, n - 2);
        let (i0, i1, i2) = (centre - 1, centre, centre + 1);
        let (x0, x1, x2) = (self.nodes[i0], self.nodes[i1], self.nodes[i2]);
        let w0 = (s - x1) * (s - x2) / ((x0 - x1) * (x0 - x2));
        let w1 = (s - x0) * (s - x2) / ((x1 - x0) * (x1 - x2));
        let w2 = (s - x0) * (s - x1) / ((x2 - x0) * (x2 - x1));
        let (a, b, c) = (
            self.at_node(level, i0),
            self.at_node(level, i1),
            self.at_node(level, i2),
        );
        let mix = |f: fn(&Components) -> f64| w0 * f(&a) + w1 * f(&b) + w2 * f(&c);
        Components {
            v: mix(|x| x.v),
            v_coll: mix(|x| x.v_coll),
            cva: mix(|x| x.cva),
            dva: mix(|x| x.dva),
            cfva: mix(|x| x.cfva),
            dfva: mix(|x| x.dfva),
        }
    }

    /// `∂V/∂S` and `∂V^c/∂S` at a node by three-point differences.
    pub fn delta(&self, level: usize, i: usize) -> (f64, f64) {
        let n = self.nodes.len();
        let (a, b, c) = if i == 0 {
            (0, 1, 2)
        } else if i == n - 1 {
            (n - 3, n - 2, n - 1)
        } else {
            (i - 1, i, i + 1)
        };
        let w = derivative_weights(self.nodes[a], self.nodes[b], self.nodes[c], self.nodes[i]);
        let d = |f: &dyn Fn(usize) -> f64| w[0] * f(a) + w[1] * f(b) + w[2] * f(c);
        (
            d(&|j| self.value(level, j)),
            d(&|j| self.at_node(level, j).v_coll),
        )
    }

    /// Rows `time,s,v,v_coll,cva,dva,cfva,dfva` at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,s,v,v_coll,cva,dva,cfva,dfva\n");
        for (level, &t) in self.times.iter().enumerate() {
            for (i, &s) in self.nodes.iter().enumerate() {
                let c = self.at_node(level, i);
                let row = [t, s, c.v, c.v_coll, c.cva, c.dva, c.cfva, c.dfva];
                let fields: Vec<String> = row.iter().map(|&x| csv_float(x)).collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
        out
    }
}

/// Weights of the first derivative at `x` from three nodes.
fn derivative_weights(x0: f64, x1: f64, x2: f64, x: f64) -> [f64; 3] {
    [
        ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2)),
        ((x - x0) + (x - x2)) / ((x1 - x0) * (x1 - x2)),
        ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1)),
    ]
}

/// Tridiagonal spatial operator `L_S = μ S ∂_S + ½ σ² S² ∂_SS`.
struct Operator {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

impl Operator {
    fn new(nodes: &[f64], drift: f64, vol: f64) -> Self {
        let n = nodes.len();
        let mut op = Self {
            lo: vec![0.0; n],
            di: vec![0.0; n],
            up: vec![0.0; n],
        };
        for i in 1..n - 1 {
            let (hm, hp) = (nodes[i] - nodes[i - 1], nodes[i + 1] - nodes[i]);
            let conv = drift * nodes[i];
            let diff = 0.5 * vol * vol * nodes[i] * nodes[i];
            op.lo[i] = conv * (-hp / (hm * (hm + hp))) + diff * 2.0 / (hm * (hm + hp));
            op.di[i] = conv * ((hp - hm) / (hm * hp)) - diff * 2.0 / (hm * hp);
            op.up[i] = conv * (hm / (hp * (hm + hp))) + diff * 2.0 / (hp * (hm + hp));
        }
        // S_min: convection only, one-sided; vanishes at S = 0
        let h0 = nodes[1] - nodes[0];
        let conv0 = drift * nodes[0] / h0;
        op.di[0] = -conv0;
        op.up[0] = conv0;
        // S_max: linear behaviour, V_SS = 0
        let hn = nodes[n - 1] - nodes[n - 2];
        let convn = drift * nodes[n - 1] / hn;
        op.lo[n - 1] = -convn;
        op.di[n - 1] = convn;
        op
    }

    /// `x + α (L − k) x`.
    fn apply(&self, alpha: f64, kill: f64, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut lx = self.di[i] * x[i];
            if i > 0 {
                lx += self.lo[i] * x[i - 1];
            }
            if i + 1 < n {
                lx += self.up[i] * x[i + 1];
            }
            out[i] = x[i] + alpha * (lx - kill * x[i]);
        }
    }

    /// Solves `(I − β (L − k)) x = rhs` in place.
    fn solve(&self, beta: f64, kill: f64, rhs: &mut [f64], work: &mut Work) {
        let n = rhs.len();
        work.lower.clear();
        work.diag.clear();
        work.upper.clear();
        for i in 0..n {
            work.lower.push(-beta * self.lo[i]);
            work.diag.push(1.0 - beta * (self.di[i] - kill));
            work.upper.push(-beta * self.up[i]);
        }
        solve_tridiagonal(&work.lower, &work.diag, &work.upper, rhs, &mut work.scratch);
    }
}

#[derive(Default)]
struct Work {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    scratch: Vec<f64>,
}

/// Piecewise-constant coefficients in force on one time step.
#[derive(Debug, Clone, Copy)]
struct StepCoefficients {
    rate: f64,
    lambda_c: f64,
    lambda_b: f64,
    gamma_c: f64,
    gamma_b: f64,
}

struct Level {
    vc: Vec<f64>,
    cva: Vec<f64>,
    dva: Vec<f64>,
    cfva: Vec<f64>,
    dfva: Vec<f64>,
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}

struct Stepper<'a> {
    op: Operator,
    problem: &'a PdeProblem,
    work: Work,
}

impl Stepper<'_> {
    /// One θ-step from the later level `old` over `dt`.
    fn step(&mut self, theta: f64, dt: f64, co: StepCoefficients, old: &Level) -> Level {
        let p = self.problem;
        let n = old.vc.len();
        let coll = &p.collateral;
        let (lgd_c, lgd_b) = (1.0 - p.counterparty.recovery(), 1.0 - p.bank.recovery());
        let explicit = (1.0 - theta) * dt;
        let implicit = theta * dt;

        let mut vc = vec![0.0; n];
        self.op.apply(explicit, co.rate, &old.vc, &mut vc);
        self.op.solve(implicit, co.rate, &mut vc, &mut self.work);

        let gap = |v: &[f64], vcs: &[f64], i: usize| v[i] - collateral_amount(coll, vcs[i]);
        let old_v: Vec<f64> = (0..n)
            .map(|i| old.vc[i] - old.cva[i] + old.dva[i] - old.cfva[i] + old.dfva[i])
            .collect();
        let kill = co.rate + co.lambda_c + co.lambda_b;
        let method = p.method;

        let mut advance = |x_old: &[f64], source: &dyn Fn(usize) -> f64| -> Vec<f64> {
            let mut x = vec![0.0; n];
            self.op.apply(explicit, kill, x_old, &mut x);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += source(i);
            }
            self.op.solve(implicit, kill, &mut x, &mut self.work);
            x
        };
        let averaged = |f: &dyn Fn(f64) -> f64, i: usize| {
            implicit * f(gap(&vc, &vc, i)) + explicit * f(gap(&old.vc, &old.vc, i))
        };

        let cva = advance(&old.cva, &|i| {
            averaged(&|x| co.lambda_c * lgd_c * pos(x), i)
        });
        let dva = advance(&old.dva, &|i| {
            averaged(&|x| co.lambda_b * lgd_b * neg(x), i)
        });
        let (cfva, dfva) = match method {
            PdeMethod::BondImplied => (vec![0.0; n], vec![0.0; n]),
            PdeMethod::FirstOrder => (
                advance(&old.cfva, &|i| averaged(&|x| co.gamma_c * pos(x), i)),
                advance(&old.dfva, &|i| averaged(&|x| co.gamma_b * neg(x), i)),
            ),
            PdeMethod::Recursive => (
                advance(&old.cfva, &|i| {
                    dt * co.gamma_c * pos(gap(&old_v, &old.vc, i))
                }),
                advance(&old.dfva, &|i| {
                    dt * co.gamma_b * neg(gap(&old_v, &old.vc, i))
                }),
            ),
        };
        Level {
            vc,
            cva,
            dva,
            cfva,
            dfva,
        }
    }
}

fn check_problem(problem: &PdeProblem) -> Result<()> {
    problem.grid.validate()?;
    problem.dynamics.validate()?;
    if problem.collateral.cure_period > 0.0 {
        return Err(Error::Unsupported(
            "cure periods are only available on the Monte Carlo backend".into(),
        ));
    }
    let d = &problem.dynamics;
    if d.vol_c != 0.0 || d.vol_b != 0.0 || d.drift_c != 0.0 || d.drift_b != 0.0 {
        return Err(Error::Unsupported(
            "the PDE backend takes deterministic spreads from the hazard curves; set spread vols and drifts to 0"
                .into(),
        ));
    }
    Ok(())
}

/// Merged time grid: uniform steps plus payment dates and every curve node.
fn time_grid(problem: &PdeProblem, hazards: (&PiecewiseCurve, &PiecewiseCurve)) -> Vec<f64> {
    let horizon = problem.instrument.maturity();
    let n = problem.grid.n_time;
    let mut times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    times.extend(problem.instrument.scaled_flows().iter().map(|f| f.time));
    for curve in [
        &problem.ois,
        hazards.0,
        hazards.1,
        problem.counterparty.basis(),
        problem.bank.basis(),
    ] {
        times.extend(curve.breakpoints_in(0.0, horizon));
    }
    times.retain(|&t| (0.0..=horizon).contains(&t));
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * horizon.max(1.0));
    *times.last_mut().unwrap() = horizon;
    times
}

/// Solves the valuation PDE backwards from maturity to time 0.
pub fn solve_final_pde(problem: &PdeProblem) -> Result<PdeSurface> {
    check_problem(problem)?;
    let (hazard_c, hazard_b) = match problem.method {
        PdeMethod::BondImplied => (
            bond_implied_hazard(&problem.counterparty)?.map(|l| l.max(0.0)),
            bond_implied_hazard(&problem.bank)?.map(|l| l.max(0.0)),
        ),
        _ => (
            problem.counterparty.hazard().clone(),
            problem.bank.hazard().clone(),
        ),
    };
    let nodes = problem.grid.nodes();
    let n = nodes.len();
    let times = time_grid(problem, (&hazard_c, &hazard_b));
    let horizon = *times.last().unwrap();
    let inst = &problem.instrument;
    let flows = inst.scaled_flows();

    let terminal: Vec<f64> = if inst.depends_on_underlying() {
        nodes.iter().map(|&s| inst.terminal_payoff(s)).collect()
    } else {
        let at_end: f64 = flows
            .iter()
            .filter(|f| f.time >= horizon)
            .map(|f| f.amount)
            .sum();
        vec![at_end; n]
    };
    let zeros = vec![0.0; n];
    let mut level = Level {
        vc: terminal,
        cva: zeros.clone(),
        dva: zeros.clone(),
        cfva: zeros.clone(),
        dfva: zeros,
    };

    let coefficients = |t: f64| StepCoefficients {
        rate: problem.ois.value_at(t),
        lambda_c: hazard_c.value_at(t),
        lambda_b: hazard_b.value_at(t),
        gamma_c: problem.counterparty.basis().value_at(t),
        gamma_b: problem.bank.basis().value_at(t),
    };
    if problem.method == PdeMethod::Recursive {
        for w in times.windows(2) {
            let co = coefficients(w[0]);
            let ratio = (co.gamma_c.abs() + co.gamma_b.abs()) * (w[1] - w[0]);
            if ratio > MAX_FUNDING_STEP {
                return Err(Error::StepTooLarge {
                    ratio,
                    limit: MAX_FUNDING_STEP,
                });
            }
        }
    }

    let d = &problem.dynamics;
    let mut stepper = Stepper {
        op: Operator::new(&nodes, d.rate - d.dividend, d.vol_s),
        problem,
        work: Work::default(),
    };
    let levels = times.len();
    let store = |lvl: &Level, out: &mut [Vec<f64>; 5], k: usize| {
        for (dst, src) in out
            .iter_mut()
            .zip([&lvl.vc, &lvl.cva, &lvl.dva, &lvl.cfva, &lvl.dfva])
        {
            dst[k * n..(k + 1) * n].copy_from_slice(src);
        }
    };
    let mut out: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; levels * n]);
    store(&level, &mut out, levels - 1);

    const RANNACHER_STEPS: usize = 2;
    for k in (0..levels - 1).rev() {
        let dt = times[k + 1] - times[k];
        let co = coefficients(times[k]);
        level = if levels - 1 - k <= RANNACHER_STEPS {
            let half = stepper.step(1.0, 0.5 * dt, co, &level);
            stepper.step(1.0, 0.5 * dt, co, &half)
        } else {
            stepper.step(0.5, dt, co, &level)
        };
        let coupon: f64 = flows
            .iter()
            .filter(|f| (f.time - times[k]).abs() < 1e-12 * horizon.max(1.0))
            .map(|f| f.amount)
            .sum();
        if coupon != 0.0 {
            level.vc.iter_mut().for_each(|v| *v += coupon);
        }
        store(&level, &mut out, k);
    }

    let [v_coll, cva, dva, cfva, dfva] = out;
    Ok(PdeSurface {
        times,
        nodes,
        v_coll,
        cva,
        dva,
        cfva,
        dfva,
        recovery_c: problem.counterparty.recovery(),
        recovery_b: problem.bank.recovery(),
    })
}

/// Sensitivities of the full value to a parallel shift of each short CDS spread,
/// on every node of the surface.
#[derive(Debug, Clone)]
pub struct SpreadDeltas {
    pub dv_dpi_c: Vec<f64>,
    pub dv_dpi_b: Vec<f64>,
}

impl SpreadDeltas {
    pub fn at(&self, surface: &PdeSurface, level: usize, i: usize) -> (f64, f64) {
        let j = surface.idx(level, i);
        (self.dv_dpi_c[j], self.dv_dpi_b[j])
    }
}

/// Bump-and-revalue spread deltas with a shift `bump` of `π = λ(1 − R)`.
pub fn spread_deltas(problem: &PdeProblem, bump: f64) -> Result<SpreadDeltas> {
    if !(bump > 0.0) {
        return Err(Error::InvalidInput("spread bump must be positive".into()));
    }
    let shifted = |profile: &CounterpartyProfile, h: f64| -> Result<CounterpartyProfile> {
        let lgd = 1.0 - profile.recovery();
        if lgd == 0.0 {
            return Err(Error::DivisionByZero(
                "spread delta with recovery = 1".into(),
            ));
        }
        CounterpartyProfile::new(
            profile.recovery(),
            profile.hazard().map(|l| l + h / lgd),
            profile.basis().clone(),
        )
    };
    let values = |pr: &PdeProblem| -> Result<Vec<f64>> {
        let s = solve_final_pde(pr)?;
        Ok((0..s.times.len() * s.nodes.len())
            .map(|j| s.v_coll[j] - s.cva[j] + s.dva[j] - s.cfva[j] + s.dfva[j])
            .collect())
    };
    let central = |which: bool| -> Result<Vec<f64>> {
        let profile = if which {
            &problem.counterparty
        } else {
            &problem.bank
        };
        let lgd = 1.0 - profile.recovery();
        let min_lambda = profile
            .hazard()
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let down_ok = min_lambda - bump / lgd.max(f64::MIN_POSITIVE) >= 0.0;
        let bumped = |h: f64| -> Result<Vec<f64>> {
            let mut pr = problem.clone();
            if which {
                pr.counterparty = shifted(&problem.counterparty, h)?;
            } else {
                pr.bank = shifted(&problem.bank, h)?;
            }
            values(&pr)
        };
        let up = bumped(bump)?;
        let (down, width) = if down_ok {
            (bumped(-bump)?, 2.0 * bump)
        } else {
            (values(problem)?, bump)
        };
        Ok(up.iter().zip(&down).map(|(u, d)| (u - d) / width).collect())
    };
    Ok(SpreadDeltas {
        dv_dpi_c: central(true)?,
        dv_dpi_b: central(false)?,
    })
}

/// Price and spread sensitivity of a hedging bond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BondSensitivity {
    pub price: f64,
    pub dprice_dpi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeInputs {
    /// `∂H/∂S` of the underlying hedge instrument.
    pub dh_ds: f64,
    pub bond_c: BondSensitivity,
    pub bond_b: BondSensitivity,
}

/// Replication weights in the underlying, both issuers' bonds and short bonds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HedgeWeights {
    pub alpha: f64,
    pub omega_c: f64,
    pub omega_b: f64,
    /// Short counterparty bond position, unit price.
    pub big_omega_c: f64,
    pub big_omega_b: f64,
    pub epsilon: f64,
    pub eta: f64,
}

pub fn hedge_weights(
    surface: &PdeSurface,
    deltas: &SpreadDeltas,
    inputs: &HedgeInputs,
    level: usize,
    node: usize,
) -> Result<HedgeWeights> {
    if level >= surface.times.len() || node >= surface.nodes.len() {
        return Err(Error::InvalidInput(
            "hedge point outside the surface".into(),
        ));
    }
    if inputs.dh_ds == 0.0 {
        return Err(Error::SingularHedge("∂H/∂S vanishes".into()));
    }
    if inputs.bond_c.dprice_dpi == 0.0 || inputs.bond_b.dprice_dpi == 0.0 {
        return Err(Error::SingularHedge(
            "a hedging bond has no spread sensitivity".into(),
        ));
    }
    let c = surface.at_node(level, node);
    let (dv_ds, _) = surface.delta(level, node);
    let (dv_dpi_c, dv_dpi_b) = deltas.at(surface, level, node);
    let (rc, rb) = (surface.recovery_c, surface.recovery_b);
    if rc == 1.0 || rb == 1.0 {
        return Err(Error::DivisionByZero(
            "hedge weights with recovery = 1".into(),
        ));
    }
    let (v_pos, v_neg) = (pos(c.v), neg(c.v));
    let jump_c = rc * pos(c.v_coll) - neg(c.v_coll) - c.v;
    let jump_b = pos(c.v_coll) - rb * neg(c.v_coll) - c.v;
    let omega_c = dv_dpi_c / inputs.bond_c.dprice_dpi;
    let omega_b = dv_dpi_b / inputs.bond_b.dprice_dpi;
    Ok(HedgeWeights {
        alpha: dv_ds / inputs.dh_ds,
        omega_c,
        omega_b,
        big_omega_c: v_pos - omega_c * inputs.bond_c.price,
        big_omega_b: -v_neg - omega_b * inputs.bond_b.price,
        epsilon: -v_pos - jump_c / (1.0 - rc),
        eta: v_neg - jump_b / (1.0 - rb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruments::{CashflowSchedule, InstrumentKind, OptionType};

    fn call_problem(n_space: usize, n_time: usize) -> PdeProblem {
        let instrument = Instrument::new(
            InstrumentKind::EuropeanOption {
                option: OptionType::Call,
                strike: 100.0,
                expiry: 1.0,
            },
            1.0,
        )
        .unwrap();
        PdeProblem {
            instrument,
            collateral: CollateralSpec::uncollateralized(),
            ois: PiecewiseCurve::flat(0.02),
            counterparty: CounterpartyProfile::flat(0.4, 0.0, 0.0).unwrap(),
            bank: CounterpartyProfile::flat(0.4, 0.0, 0.0).unwrap(),
            dynamics: ModelDynamics::lognormal(100.0, 0.02, 0.2),
            grid: SpatialGrid::for_spot(100.0, Some(100.0), n_space, n_time).unwrap(),
            method: PdeMethod::Recursive,
        }
    }

    #[test]
    fn zero_spread_call() {
        let s = solve_final_pde(&call_problem(401, 200)).unwrap();
        let c = s.at_spot(0, 100.0);
        assert!((c.v - 8.916).abs() < 0.01, "{}", c.v);
        assert_eq!(c.cva, 0.0);
        assert_eq!(c.v, c.v_coll);
    }

    #[test]
    fn zero_payoff_gives_zero_surface() {
        let mut p = call_problem(41, 20);
        p.instrument.quantity = 0.0;
        p.counterparty = CounterpartyProfile::flat(0.4, 0.05, 0.01).unwrap();
        let s = solve_final_pde(&p).unwrap();
        assert!((0..s.nodes().len()).all(|i| s.value(0, i) == 0.0));
    }

    #[test]
    fn default_free_bond_with_basis() {
        let bond = CashflowSchedule::zero_coupon(100.0, 1.0).unwrap();
        let mut p = call_problem(5, 200);
        p.instrument = Instrument::bond(bond);
        p.counterparty = CounterpartyProfile::flat(0.4, 0.0, 0.01).unwrap();
        p.bank = CounterpartyProfile::default_free();
        let s = solve_final_pde(&p).unwrap();
        let v = s.at_spot(0, 100.0).v;
        assert!((v - 100.0 * (-0.03f64).exp()).abs() < 1e-4, "{v}");
    }

    #[test]
    fn rejects_large_funding_steps_and_cure_periods() {
        let mut p = call_problem(41, 2);
        p.counterparty = CounterpartyProfile::flat(0.4, 0.0, 0.2).unwrap();
        assert!(matches!(
            solve_final_pde(&p),
            Err(Error::StepTooLarge { .. })
        ));
        let mut p = call_problem(41, 20);
        p.collateral = CollateralSpec::uncollateralized()
            .with_cure_period(0.1)
            .unwrap();
        assert!(matches!(solve_final_pde(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn derivative_weights_are_exact_for_quadratics() {
        let w = derivative_weights(0.0, 1.0, 3.0, 1.0);
        let f = |x: f64| 2.0 + 3.0 * x - x * x;
        let d = w[0] * f(0.0) + w[1] * f(1.0) + w[2] * f(3.0);
        assert!((d - 1.0).abs() < 1e-14);
    }
}
