//! One function per command. Each writes its CSV/field artifacts into the
//! output directory and returns a status plus a JSON payload; [`run`] wraps
//! that into the `report.json` bundle.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use carleman_core::carleman::{rellich_residual, GridWeight, TauSweepReport};
use carleman_core::expr::Expr;
use carleman_core::fields::{samples, validate_bounds, weight_bounds};
use carleman_core::grid::{make_bump, DivergenceOperator, GridDomain, Region};
use carleman_core::pseudoconvexity::characteristic_cross_check;
use carleman_core::solver::{assemble, default_max_iter, manufactured_check, solve, CoefficientField};
use carleman_core::three_sphere::{
    caccioppoli_ratio, harmonic_grid, harmonic_monomial, three_sphere_check, HarmonicTable,
};
use carleman_core::Error;
use serde::Serialize;
use serde_json::{json, Value};
use std::sync::Arc;

use crate::catalog;
use crate::config::{Command, RunConfig};
use crate::drivers;
use crate::io::{write_csv, write_field_csv, write_json, FieldRecord};
use crate::report::{float_bits_hash, json_hash, ReportBundle, Status, REPORT_VERSION};

/// Smallest acceptable observed order of the manufactured-solution check.
pub const SOLVER_MIN_ORDER: f64 = 1.8;
/// Smallest acceptable Rellich residual decrease per grid doubling.
pub const RELLICH_MIN_DECREASE: f64 = 1.6;
/// Residuals below this fraction of `∫|2⟨B,∇f⟩Δf|` are at rounding level.
pub const RELLICH_ROUNDOFF: f64 = 1e-12;
/// Largest relative gap between numeric and closed-form harmonic `C_emp`.
pub const HARMONIC_TOLERANCE: f64 = 0.02;
/// Perturbed runs may exceed the harmonic maximum by at most this factor.
pub const PERTURBED_FACTOR: f64 = 10.0;

pub struct Outcome {
    pub status: Status,
    pub payload: Value,
}

fn outcome(ok: bool, payload: Value) -> Outcome {
    Outcome {
        status: Status::from_bool(ok),
        payload,
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<ReportBundle> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let o = dispatch(cmd, cfg, out)?;
    let mut echo = cfg.clone();
    echo.command = Some(cmd);
    let config = echo.echo();
    let bundle = ReportBundle {
        version: REPORT_VERSION,
        command: cmd.name().to_string(),
        input_hash: json_hash(&config),
        config,
        status: o.status,
        payload_hash: json_hash(&o.payload),
        payload: o.payload,
        timing_ms: start.elapsed().as_millis(),
    };
    write_json(&out.join("report.json"), &bundle)?;
    Ok(bundle)
}

fn dispatch(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    match cmd {
        Command::Validate => validate(cfg),
        Command::Certify => certify(cfg),
        Command::MuSearch => mu_search(cfg),
        Command::Rellich => rellich(cfg, out),
        Command::CarlemanSweep => carleman_sweep(cfg, out),
        Command::Solve => solve_cmd(cfg, out),
        Command::ThreeSphere => three_sphere(cfg, out),
        Command::Suite => suite(cfg, out),
    }
}

pub fn validate(cfg: &RunConfig) -> Result<Outcome> {
    let metric = catalog::config_metric(cfg)?;
    let phi = catalog::config_weight(cfg, cfg.mu)?;
    let pts = drivers::annulus_samples(cfg, cfg.r_in, cfg.r_out);
    let spacing = (cfg.r_out - cfg.r_in) / (cfg.n_radial - 1) as f64;
    let pairs = samples::neighbour_pairs(&pts, 1.5 * spacing.max(cfg.r_out * std::f64::consts::TAU / cfg.n_angular as f64));
    let report = validate_bounds(metric.as_ref(), Some(phi.as_ref()), &pts, &pairs)?;
    let wb = weight_bounds(phi.as_ref(), &pts)?;
    Ok(outcome(report.passed(), json!({ "ellipticity": report, "weight": wb })))
}

pub fn certify(cfg: &RunConfig) -> Result<Outcome> {
    let metric = catalog::config_metric(cfg)?;
    let phi = catalog::config_weight(cfg, cfg.mu)?;
    let pts = drivers::annulus_samples(cfg, cfg.r_in, cfg.r_out);
    let cert = drivers::certify_par(metric.as_ref(), phi.as_ref(), &pts, cfg.margin)?;
    let cross = if cert.passed && cfg.cross_check_draws > 0 {
        Some(characteristic_cross_check(
            metric.as_ref(),
            phi.as_ref(),
            &cert,
            &pts,
            cfg.cross_check_draws,
            cfg.seed,
        )?)
    } else {
        None
    };
    let ok = cert.passed && cross.as_ref().map_or(true, |c| c.violations == 0);
    Ok(outcome(ok, json!({ "certificate": cert, "cross_check": cross })))
}

pub fn mu_search(cfg: &RunConfig) -> Result<Outcome> {
    let metric = catalog::config_metric(cfg)?;
    let psi = catalog::psi(&cfg.psi, cfg.dim)?;
    let pts = drivers::annulus_samples(cfg, cfg.r_in, cfg.r_out);
    match drivers::mu_search_par(metric.as_ref(), psi, &pts, cfg.mu_max, cfg.margin) {
        Ok(s) => Ok(outcome(
            true,
            json!({ "mu_min": s.mu_min, "certificate": s.certificate, "trace": s.trace }),
        )),
        Err(Error::SearchExhausted { mu_max, trace }) => Ok(outcome(
            false,
            json!({ "mu_min": null, "mu_max": mu_max, "trace": trace }),
        )),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct RellichRow {
    points_per_axis: usize,
    h: f64,
    lhs: f64,
    rhs: f64,
    residual: f64,
    scale: f64,
    /// `residual(previous) / residual`.
    decrease: Option<f64>,
    at_roundoff: bool,
}

pub fn rellich(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let metric = catalog::config_metric(cfg)?;
    let b = catalog::vector_field(&cfg.rellich_field, cfg.dim)?;
    let mut centre = vec![0.0; cfg.dim];
    centre[0] = 0.1 * cfg.r_out;
    centre[1] = -0.1 * cfg.r_out;
    let mut rows: Vec<RellichRow> = Vec::new();
    for &n in &cfg.rellich_sizes {
        let grid = Arc::new(GridDomain::new(cfg.dim, cfg.half_extent, n, Region::Ball { radius: cfg.r_out })?);
        let op = DivergenceOperator::new(metric.as_ref(), grid.clone())?;
        let f = make_bump(&grid, &centre, 0.6 * cfg.r_out, Some(cfg.seed))?;
        let r = rellich_residual(metric.as_ref(), &op, &b, &f)?;
        rows.push(RellichRow {
            points_per_axis: n,
            h: grid.h,
            lhs: r.lhs,
            rhs: r.rhs,
            residual: r.residual,
            scale: r.scale,
            decrease: rows.last().map(|p| p.residual / r.residual),
            at_roundoff: r.residual <= RELLICH_ROUNDOFF * r.scale,
        });
    }
    let ok = rows
        .iter()
        .all(|r| r.at_roundoff || r.decrease.map_or(true, |d| d >= RELLICH_MIN_DECREASE));
    write_csv(&out.join("rellich.csv"), &rows)?;
    Ok(outcome(ok, json!({ "field": cfg.rellich_field, "rows": rows })))
}

#[derive(Serialize)]
struct SweepRow<'a> {
    function_id: &'a str,
    tau: f64,
    lhs: f64,
    rhs: f64,
    ratio: f64,
}

/// JSON summary of a sweep; the full table goes to `sweep.csv`.
pub fn sweep_summary(r: &TauSweepReport, seeds: &[u64]) -> Value {
    let window: Vec<f64> = r
        .terms
        .iter()
        .flat_map(|row| row.iter().filter(|t| t.tau >= r.tau0_emp).map(|t| t.ratio))
        .collect();
    json!({
        "tau_grid": r.tau_grid,
        "test_function_ids": r.test_function_ids,
        "seeds": seeds,
        "growth": r.growth,
        "tau0_emp": r.tau0_emp,
        "k_emp": r.k_emp,
        "k_emp_bits": format!("{:016x}", r.k_emp.to_bits()),
        "tau0_emp_bits": format!("{:016x}", r.tau0_emp.to_bits()),
        "max_ratio_from_tau0": window.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "window_covers_4_tau0": r.tau_grid.last().is_some_and(|t| *t >= 4.0 * r.tau0_emp),
        "tau_trusted_max": r.tau_trusted_max,
        "ratio_bits_sha256": float_bits_hash(r.terms.iter().flatten().map(|t| &t.ratio)),
    })
}

pub fn carleman_sweep(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let metric = catalog::config_metric(cfg)?;
    let phi = catalog::config_weight(cfg, cfg.mu)?;
    let pts = drivers::annulus_samples(cfg, cfg.r_in, cfg.r_out);
    let cert = drivers::certify_par(metric.as_ref(), phi.as_ref(), &pts, cfg.margin)?;
    if !cert.passed {
        return Ok(outcome(false, json!({ "certificate": cert, "sweep": null })));
    }
    let grid = drivers::sweep_grid(cfg)?;
    let op = DivergenceOperator::new(metric.as_ref(), grid.clone())?;
    let gw = GridWeight::new(metric.as_ref(), phi.as_ref(), &op)?;
    let corpus = drivers::test_corpus(&grid, cfg)?;
    let seeds: Vec<u64> = (0..cfg.n_seeded as u64).map(|s| cfg.seed.wrapping_add(s)).collect();
    let report = match drivers::sweep_par(&op, &gw, &corpus, cfg) {
        Ok(r) => r,
        Err(e) => match e.downcast_ref::<Error>() {
            Some(Error::PlateauNotFound(msg)) => {
                return Ok(outcome(false, json!({ "certificate": cert, "sweep": null, "plateau_error": msg })))
            }
            _ => return Err(e),
        },
    };
    let rows: Vec<SweepRow> = report
        .test_function_ids
        .iter()
        .zip(&report.terms)
        .flat_map(|(id, row)| {
            row.iter().map(move |t| SweepRow {
                function_id: id,
                tau: t.tau,
                lhs: t.lhs,
                rhs: t.rhs,
                ratio: t.ratio,
            })
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &rows)?;
    let summary = sweep_summary(&report, &seeds);
    let ok = summary["max_ratio_from_tau0"].as_f64().is_some_and(|m| m <= report.k_emp) && report.k_emp.is_finite();
    Ok(outcome(ok, json!({ "certificate": cert, "sweep": summary })))
}

pub fn coefficients(cfg: &RunConfig) -> Result<CoefficientField> {
    let b = catalog::exprs(&cfg.solve_b)?;
    if b.len() != cfg.dim {
        bail!("solve_b has {} components for dimension {}", b.len(), cfg.dim);
    }
    let a = Expr::parse(&cfg.solve_a)?;
    Ok(CoefficientField::new(b, a, cfg.m1)?)
}

pub fn solve_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let metric = catalog::config_metric(cfg)?;
    let coeffs = coefficients(cfg)?;
    let exact = Expr::parse(&cfg.solve_exact)?;
    let table = manufactured_check(
        metric.as_ref(),
        &coeffs,
        &exact,
        cfg.half_extent,
        cfg.solve_radius,
        &cfg.solve_sizes,
        cfg.solver_tol,
    )?;
    write_csv(&out.join("convergence.csv"), &table.rows)?;
    if cfg.dump_field {
        let n = *cfg.solve_sizes.last().expect("validated non-empty");
        let grid = Arc::new(GridDomain::new(cfg.dim, cfg.half_extent, n, Region::Ball { radius: cfg.solve_radius })?);
        let system = assemble(metric.as_ref(), &coeffs, grid.clone(), &|x| exact.eval(x), None)?;
        let rep = solve(&system, cfg.solver_tol, default_max_iter(&grid))?;
        FieldRecord::from_field(&rep.solution).write(&out.join("solution.fld"))?;
        write_field_csv(&out.join("solution.csv"), &rep.solution)?;
    }
    let min_order = table.min_order();
    let ok = min_order.map_or(true, |o| o >= SOLVER_MIN_ORDER);
    Ok(outcome(ok, json!({ "convergence": table, "min_order": min_order })))
}

#[derive(Serialize)]
struct HarmonicCsvRow {
    k: u32,
    norm_r0: f64,
    norm_rho: f64,
    norm_1: f64,
    theta: f64,
    #[serde(rename = "C_emp_numeric")]
    c_emp_numeric: f64,
    #[serde(rename = "C_emp_analytic")]
    c_emp_analytic: f64,
}

/// Oracle agreement (resolved rows) and monotone decrease of `C_emp`.
pub fn harmonic_checks(t: &HarmonicTable) -> (bool, bool) {
    let agree = t
        .rows
        .iter()
        .filter(|r| !r.under_resolved)
        .all(|r| r.c_rel_error <= HARMONIC_TOLERANCE);
    let decreasing = t.rows.windows(2).all(|w| w[1].c_emp_numeric < w[0].c_emp_numeric);
    (agree, decreasing)
}

/// `μ0` from the config or from a μ-search on `B_1 \ B_{r0/8}`.
pub fn resolve_mu0(cfg: &RunConfig) -> Result<(f64, Value)> {
    if let Some(mu0) = cfg.mu0 {
        return Ok((mu0, json!({ "source": "config" })));
    }
    let metric = catalog::config_metric(cfg)?;
    let psi = catalog::psi(&cfg.psi, cfg.dim)?;
    let pts = drivers::annulus_samples(cfg, cfg.r0 / 8.0, 1.0);
    let s = drivers::mu_search_par(metric.as_ref(), psi, &pts, cfg.mu_max, cfg.margin)?;
    Ok((
        s.mu_min,
        json!({ "source": "mu-search", "annulus": [cfg.r0 / 8.0, 1.0], "c0": s.certificate.c0, "trace": s.trace }),
    ))
}

pub fn three_sphere(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    if cfg.dim != 2 {
        bail!("three-sphere experiments are two-dimensional");
    }
    let (mu0, mu0_info) = resolve_mu0(cfg)?;
    let metric = catalog::config_metric(cfg)?;
    let table = drivers::harmonic_par(cfg, mu0)?;
    let perturbed = drivers::perturbed_par(metric.as_ref(), cfg, mu0)?;

    // Reference field: the degree-one harmonic solution, for the branch
    // report and the Caccioppoli ratio.
    let grid = harmonic_grid(cfg.grid_n)?;
    let system = assemble(
        metric.as_ref(),
        &CoefficientField::zero(2),
        grid.clone(),
        &|x| harmonic_monomial(1, x),
        None,
    )?;
    let u = solve(&system, cfg.solver_tol, default_max_iter(&grid))?.solution;
    let reference = three_sphere_check(&u, cfg.r0, cfg.rho, mu0, cfg.tau_bar1, cfg.c_declared)?;
    let op = DivergenceOperator::new(metric.as_ref(), grid)?;
    let cacc = caccioppoli_ratio(&op, &u, (cfg.r0 / 4.0, cfg.r0 / 2.0), (cfg.r0 / 8.0, cfg.r0))?;

    let rows: Vec<HarmonicCsvRow> = table
        .rows
        .iter()
        .map(|r| HarmonicCsvRow {
            k: r.k,
            norm_r0: r.norm_r0,
            norm_rho: r.norm_rho,
            norm_1: r.norm_1,
            theta: r.theta,
            c_emp_numeric: r.c_emp_numeric,
            c_emp_analytic: r.c_emp_analytic,
        })
        .collect();
    write_csv(&out.join("three_sphere.csv"), &rows)?;
    write_csv(&out.join("perturbed.csv"), &perturbed.runs)?;

    let (agree, decreasing) = harmonic_checks(&table);
    let bounded = perturbed.max_c_emp.is_finite() && perturbed.max_c_emp <= PERTURBED_FACTOR * table.max_c_emp;
    let declared = reference.holds.unwrap_or(true);
    Ok(outcome(
        agree && decreasing && bounded && declared,
        json!({
            "mu0": mu0,
            "mu0_info": mu0_info,
            "harmonic": table,
            "harmonic_oracle_agrees": agree,
            "harmonic_decreasing": decreasing,
            "perturbed": perturbed,
            "perturbed_bounded": bounded,
            "reference": reference,
            "caccioppoli": cacc,
        }),
    ))
}

/// certify → carleman-sweep → three-sphere, stopping at the first failure.
pub fn suite(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut stages = Vec::new();
    let mut status = Status::Pass;
    for cmd in [Command::Certify, Command::CarlemanSweep, Command::ThreeSphere] {
        let o = dispatch(cmd, cfg, out)?;
        stages.push(json!({ "command": cmd.name(), "status": o.status, "payload": o.payload }));
        status = status.and(o.status);
        if o.status != Status::Pass {
            break;
        }
    }
    Ok(Outcome {
        status,
        payload: json!({ "stages": stages }),
    })
}
