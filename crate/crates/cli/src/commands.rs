use std::fs;
use std::path::Path;

use xva_core::bond_pricer::{price, RecoveryConvention};
use xva_core::calibrator::{bootstrap_basis, repricing_residuals};
use xva_core::xva_engine::{self, Approach, Backend, Status, XvaReport};

use crate::config;
use crate::report::{sig10, Report};
use crate::CliError;

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Input(format!("{}: cannot write: {e}", path.display())))
}

pub fn bond_price(
    config_path: &Path,
    convention: RecoveryConvention,
    report_path: &Path,
) -> Result<(), CliError> {
    let input = config::load_bond_price(config_path)?;
    let p = price(
        &input.bond,
        &input.ois,
        &input.issuer,
        input.valuation_time,
        convention,
    )?;
    let report = Report::default()
        .text("command", "bond_price")
        .text("convention", convention.to_string())
        .number("valuation_time", input.valuation_time)
        .number("notional", input.bond.notional())
        .number("maturity", input.bond.maturity())
        .number("price", p);
    write(report_path, &report.to_json())?;
    println!("{}", sig10(p));
    Ok(())
}

pub fn calibrate(
    quotes_path: &Path,
    curves_path: &Path,
    convention: RecoveryConvention,
    output: &Path,
) -> Result<(), CliError> {
    let quotes = config::load_quotes(quotes_path)?;
    let curves = config::load_issuer_curves(curves_path)?;
    let basis = bootstrap_basis(
        &quotes,
        &curves.ois,
        &curves.hazard,
        curves.recovery,
        convention,
    )?;
    let residuals = repricing_residuals(
        &quotes,
        &curves.ois,
        &curves.hazard,
        curves.recovery,
        &basis,
        convention,
    )?;
    let mut json = serde_json::to_string_pretty(&basis).expect("curves serialize");
    json.push('\n');
    write(output, &json)?;
    println!("maturity,gamma,residual");
    for r in residuals {
        println!("{},{},{:e}", r.maturity, r.gamma, r.residual);
    }
    Ok(())
}

pub struct XvaRequest<'a> {
    pub trade: &'a Path,
    pub market: &'a Path,
    pub approach: Approach,
    pub backend: Option<Backend>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub report: &'a Path,
    pub csv: &'a Path,
}

/// Serialized (snake-case) name of a report enum.
fn name<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

fn xva_report(r: &XvaReport, params: &xva_engine::SolverParams) -> Report {
    let mut out = Report::default()
        .text("method", name(&r.method))
        .text("backend", name(&r.backend))
        .number("v_coll", r.v_coll)
        .number("cva", r.cva)
        .number("dva", r.dva)
        .number("cfva", r.cfva)
        .number("dfva", r.dfva)
        .number("bfva", r.bfva)
        .number("fair_value", r.fair_value)
        .integer("iterations", r.iterations as u64)
        .number("residual", r.residual)
        .text("status", name(&r.status));
    if let Some(se) = &r.standard_errors {
        out = out
            .number("se_cva", se.cva)
            .number("se_dva", se.dva)
            .number("se_cfva", se.cfva)
            .number("se_dfva", se.dfva)
            .number("se_fair_value", se.fair_value)
            .integer("seed", params.seed)
            .integer("paths", params.n_paths as u64);
    }
    out.integer("steps", params.n_steps as u64)
}

pub fn xva(req: &XvaRequest<'_>) -> Result<(), CliError> {
    let (trade, mut params) = config::load_trade(req.trade)?;
    let market = config::load_market(req.market)?;
    if let Some(b) = req.backend {
        params.backend = b;
    }
    if let Some(s) = req.seed {
        params.seed = s;
    }
    if let Some(n) = req.paths {
        params.n_paths = n;
    }
    if let Some(n) = req.steps {
        params.n_steps = n;
    }
    let valuation = xva_engine::evaluate(&trade, &market, &params, req.approach)?;
    let report = xva_report(&valuation.report, &params);
    write(req.report, &report.to_json())?;
    if let Some(exposure) = &valuation.exposure {
        write(req.csv, &exposure.to_csv())?;
    } else if let Some(surface) = &valuation.surface {
        write(req.csv, &surface.to_csv())?;
    }
    print!("{}", report.to_json());
    if valuation.report.status == Status::NotConverged {
        return Err(CliError::Solver(format!(
            "fixed-point iteration did not converge in {} iterations: residual {:e}",
            valuation.report.iterations, valuation.report.residual
        )));
    }
    Ok(())
}

pub fn compare_conventions(
    trade_path: &Path,
    market_path: &Path,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
    report_path: &Path,
) -> Result<(), CliError> {
    let (trade, mut params) = config::load_trade(trade_path)?;
    let market = config::load_market(market_path)?;
    params.backend = Backend::Mc;
    params.seed = seed.unwrap_or(params.seed);
    params.n_paths = paths.unwrap_or(params.n_paths);
    params.n_steps = steps.unwrap_or(params.n_steps);
    let cmp = xva_engine::compare_conventions(&trade, &market, &params)?;

    let columns = [
        ("bond_consistent", cmp.bond_consistent),
        ("fva_zero", cmp.fva_zero),
        ("cva_full_fva", cmp.cva_full_fva),
        ("cva_dva_fca", cmp.cva_dva_fca),
    ];
    let terms = [
        ("cva", cmp.cva),
        ("dva", cmp.dva),
        ("cfva", cmp.cfva),
        ("dfva", cmp.dfva),
        ("fca", cmp.fca),
        ("fba", cmp.fba),
    ];
    let mut report = Report::default().number("v_coll", cmp.v_coll);
    for (k, e) in terms.iter().chain(columns.iter()) {
        report = report.number(k, e.value).number(&format!("se_{k}"), e.se);
    }
    for (k, gap) in cmp.gaps() {
        report = report.number(&format!("gap_{k}"), gap);
    }
    report = report
        .integer("seed", params.seed)
        .integer("paths", params.n_paths as u64);
    write(report_path, &report.to_json())?;

    println!(
        "{:<14} {:>16} {:>14} {:>16}",
        "convention", "value", "se", "gap_to_bond_consistent"
    );
    for (k, e) in columns {
        println!(
            "{:<14} {:>16} {:>14} {:>16}",
            k,
            sig10(e.value),
            sig10(e.se),
            sig10(e.value - cmp.bond_consistent.value)
        );
    }
    Ok(())
}
