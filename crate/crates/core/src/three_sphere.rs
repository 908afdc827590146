//! Three-sphere quantities for solutions on the unit ball: `L²` ball norms,
//! the exponent `θ` and the optimising `τ̃` of the radial weight
//! `φ̃(t) = e^{−μ₀t²}`, the empirical constant
//! `C = ‖u‖_ρ / (‖u‖_{r₀}^θ ‖u‖_1^{1−θ})`, a Caccioppoli ratio, and the
//! harmonic and perturbed-equation experiments.
//!
//! `θ` equalises the two terms of the interpolation bound at `τ = τ̃`:
//!
//! ```text
//! θ = (φ̃(ρ) − φ̃(1/2)) / (φ̃(r₀/4) − φ̃(1/2)),
//! τ̃ = ln(‖u‖²_1 / ‖u‖²_{r₀}) / (2 (φ̃(r₀/4) − φ̃(1/2))).
//! ```
//!
//! Only `r₀/2 < ρ < 1/2` is covered by that argument; other radii are refused.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::fields::MetricField;
use crate::grid::{DivergenceOperator, GridDomain, Region, ScalarField};
use crate::math::{self, exp, sqrt};
use crate::solver::{assemble_with, default_max_iter, solve, CoefficientField};
use crate::{Error, Result};

/// `sqrt(∫_{B_r} u²)` by masked quadrature.
pub fn ball_norm(u: &ScalarField, r: f64) -> Result<f64> {
    let w = u.grid.region_weights(&Region::Ball { radius: r })?;
    Ok(sqrt(u.values.iter().zip(&w).map(|(v, q)| v * v * q).sum::<f64>()))
}

fn check_radii(r0: f64, rho: f64, mu0: f64) -> Result<()> {
    if !(r0 > 0.0 && r0 < 0.5) {
        return Err(Error::invalid(format!("r0 = {r0} must lie in (0, 1/2)")));
    }
    if !(0.5 * r0 < rho && rho < 0.5) {
        return Err(Error::invalid(format!(
            "rho = {rho} outside the covered range ({}, 1/2)",
            0.5 * r0
        )));
    }
    if !(mu0 > 0.0) || !mu0.is_finite() {
        return Err(Error::invalid("mu0 must be positive"));
    }
    Ok(())
}

/// `φ̃(r₀/4) − φ̃(1/2)`.
pub fn weight_drop(r0: f64, mu0: f64) -> f64 {
    let a = r0 * r0 / 16.0;
    // e^{−μa} − e^{−μ/4} = −e^{−μa} (e^{−μ(1/4 − a)} − 1)
    -exp(-mu0 * a) * libm::expm1(-mu0 * (0.25 - a))
}

/// Interpolation exponent, evaluated in a form that keeps full relative
/// precision when both differences are tiny.
pub fn theta(r0: f64, rho: f64, mu0: f64) -> Result<f64> {
    check_radii(r0, rho, mu0)?;
    let a = r0 * r0 / 16.0;
    let p = rho * rho;
    Ok(exp(-mu0 * (p - a)) * libm::expm1(-mu0 * (0.25 - p)) / libm::expm1(-mu0 * (0.25 - a)))
}

pub fn tau_tilde(norm_r0: f64, norm_1: f64, r0: f64, mu0: f64) -> Result<f64> {
    if norm_r0 == 0.0 {
        return Err(Error::DegenerateSolution(String::from(
            "u vanishes on B_r0; tau_tilde is infinite",
        )));
    }
    if !(norm_r0 > 0.0 && norm_1 > 0.0) {
        return Err(Error::invalid("norms must be positive"));
    }
    if !(r0 > 0.0 && r0 < 0.5 && mu0 > 0.0) {
        return Err(Error::invalid("need 0 < r0 < 1/2 and mu0 > 0"));
    }
    Ok(2.0 * math::ln(norm_1 / norm_r0) / (2.0 * weight_drop(r0, mu0)))
}

/// Which half of the case split on `τ̃` applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `τ̃ ≥ τ̄₁`: the interpolation bound is used at `τ = τ̃`.
    LargeTau,
    /// `τ̃ < τ̄₁`: `‖u‖_1` is already controlled by `‖u‖_{r₀}`.
    SmallTau,
    /// No `τ̄₁` supplied; both bounds are reported.
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeSphereReport {
    pub r0: f64,
    pub rho: f64,
    pub mu0: f64,
    pub theta: f64,
    pub tau_tilde: f64,
    pub norm_r0: f64,
    pub norm_rho: f64,
    pub norm_1: f64,
    pub c_emp: f64,
    pub branch: Branch,
    pub tau_bar1: Option<f64>,
    /// `e^{τ̄₁ (φ̃(ρ) − φ̃(1/2))}`, the constant the small-`τ̃` case yields.
    pub small_tau_constant: Option<f64>,
    pub c_declared: Option<f64>,
    /// `C_emp ≤ C_declared` when a constant was supplied.
    pub holds: Option<bool>,
}

/// Norms, `θ`, `τ̃`, `C_emp` and the branch for `u` on a grid covering `B_1`.
pub fn three_sphere_check(
    u: &ScalarField,
    r0: f64,
    rho: f64,
    mu0: f64,
    tau_bar1: Option<f64>,
    c_declared: Option<f64>,
) -> Result<ThreeSphereReport> {
    if u.is_zero() {
        return Err(Error::invalid("three-sphere check needs a nonzero field"));
    }
    let th = theta(r0, rho, mu0)?;
    let norm_r0 = ball_norm(u, r0)?;
    let norm_rho = ball_norm(u, rho)?;
    let norm_1 = ball_norm(u, 1.0)?;
    let tt = tau_tilde(norm_r0, norm_1, r0, mu0)?;
    let c_emp = norm_rho / (math::pow(norm_r0, th) * math::pow(norm_1, 1.0 - th));
    let branch = match tau_bar1 {
        None => Branch::Unresolved,
        Some(t) if tt >= t => Branch::LargeTau,
        Some(_) => Branch::SmallTau,
    };
    let small_tau_constant = tau_bar1.map(|t| {
        let p = rho * rho;
        // φ̃(ρ) − φ̃(1/2) = −e^{−μρ²} expm1(−μ(1/4 − ρ²))
        exp(-t * exp(-mu0 * p) * libm::expm1(-mu0 * (0.25 - p)))
    });
    Ok(ThreeSphereReport {
        r0,
        rho,
        mu0,
        theta: th,
        tau_tilde: tt,
        norm_r0,
        norm_rho,
        norm_1,
        c_emp,
        branch,
        tau_bar1,
        small_tau_constant,
        c_declared,
        holds: c_declared.map(|c| c_emp <= c),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliReport {
    pub annulus_in: (f64, f64),
    pub annulus_out: (f64, f64),
    /// `∫_{inner} |∇_g u|²`.
    pub lhs: f64,
    /// `∫_{outer} u²`.
    pub rhs: f64,
    /// `r² lhs / rhs` with `r` the outer radius of the outer annulus.
    pub ratio: f64,
}

pub fn caccioppoli_ratio(
    op: &DivergenceOperator,
    u: &ScalarField,
    inner: (f64, f64),
    outer: (f64, f64),
) -> Result<CaccioppoliReport> {
    if !(0.0 < outer.0 && outer.0 < inner.0 && inner.0 < inner.1 && inner.1 < outer.1) {
        return Err(Error::invalid("inner annulus must sit strictly inside the outer one"));
    }
    let grid = op.grid();
    let wi = grid.region_weights(&Region::Annulus {
        inner: inner.0,
        outer: inner.1,
    })?;
    let wo = grid.region_weights(&Region::Annulus {
        inner: outer.0,
        outer: outer.1,
    })?;
    let g2 = op.grad_norm2(&u.values);
    let lhs: f64 = g2.iter().zip(&wi).map(|(a, q)| a * q).sum();
    let rhs: f64 = u.values.iter().zip(&wo).map(|(v, q)| v * v * q).sum();
    if rhs == 0.0 {
        return Err(Error::DegenerateSolution(String::from("u vanishes on the outer annulus")));
    }
    Ok(CaccioppoliReport {
        annulus_in: inner,
        annulus_out: outer,
        lhs,
        rhs,
        ratio: outer.1 * outer.1 * lhs / rhs,
    })
}

/// `Re (x₁ + i x₂)^k = r^k cos kθ`.
pub fn harmonic_monomial(k: u32, x: &[f64]) -> f64 {
    Complex64::new(x[0], x[1]).powu(k).re
}

/// `‖r^k cos kθ‖_{L²(B_R)} = sqrt(π R^{2k+2} / (2k+2))`.
pub fn harmonic_norm(k: u32, r: f64) -> f64 {
    let e = 2 * k as i32 + 2;
    sqrt(PI * math::powi(r, e) / e as f64)
}

/// Fewer than this many cells per oscillation at `|x| = 1` flags a row.
pub const CELLS_PER_OSCILLATION: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicRow {
    pub k: u32,
    pub norm_r0: f64,
    pub norm_rho: f64,
    pub norm_1: f64,
    pub theta: f64,
    pub c_emp_numeric: f64,
    pub c_emp_analytic: f64,
    /// Largest relative error of the three norms against the closed form.
    pub norm_rel_error: f64,
    pub c_rel_error: f64,
    pub under_resolved: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTable {
    pub r0: f64,
    pub rho: f64,
    pub mu0: f64,
    pub points_per_axis: usize,
    pub rows: Vec<HarmonicRow>,
    pub max_norm_rel_error: f64,
    pub max_c_emp: f64,
}

pub const MAX_HARMONIC_DEGREE: u32 = 10;

/// One row of the harmonic experiment: solve `Δ_g u = 0` (`g = I`) with data
/// `r^k cos kθ` and compare against the closed forms.
pub fn harmonic_row(
    op: &DivergenceOperator,
    k: u32,
    r0: f64,
    rho: f64,
    mu0: f64,
    tol: f64,
) -> Result<HarmonicRow> {
    let grid = op.grid();
    let system = assemble_with(op, &CoefficientField::zero(2), &|x| harmonic_monomial(k, x), None)?;
    let rep = solve(&system, tol, default_max_iter(grid))?;
    let report = three_sphere_check(&rep.solution, r0, rho, mu0, None, None)?;
    let analytic = math::pow(rho * math::pow(r0, -report.theta), (k + 1) as f64);
    let rel = |num: f64, r: f64| (num - harmonic_norm(k, r)).abs() / harmonic_norm(k, r);
    let norm_rel_error = rel(report.norm_r0, r0)
        .max(rel(report.norm_rho, rho))
        .max(rel(report.norm_1, 1.0));
    Ok(HarmonicRow {
        k,
        norm_r0: report.norm_r0,
        norm_rho: report.norm_rho,
        norm_1: report.norm_1,
        theta: report.theta,
        c_emp_numeric: report.c_emp,
        c_emp_analytic: analytic,
        norm_rel_error,
        c_rel_error: (report.c_emp - analytic).abs() / analytic,
        under_resolved: 2.0 * PI / (k as f64 * grid.h) < CELLS_PER_OSCILLATION,
        iterations: rep.iterations,
    })
}

pub fn harmonic_grid(points_per_axis: usize) -> Result<Arc<GridDomain>> {
    Ok(Arc::new(GridDomain::new(2, 1.0, points_per_axis, Region::Ball { radius: 1.0 })?))
}

impl HarmonicTable {
    pub fn from_rows(r0: f64, rho: f64, mu0: f64, points_per_axis: usize, rows: Vec<HarmonicRow>) -> Self {
        HarmonicTable {
            r0,
            rho,
            mu0,
            points_per_axis,
            max_norm_rel_error: rows.iter().map(|r| r.norm_rel_error).fold(0.0, f64::max),
            max_c_emp: rows.iter().map(|r| r.c_emp_numeric).fold(0.0, f64::max),
            rows,
        }
    }
}

/// Harmonic rows `k = 1..=k_max` on a 2D unit-ball grid.
pub fn harmonic_family_experiment(
    k_max: u32,
    r0: f64,
    rho: f64,
    mu0: f64,
    points_per_axis: usize,
    tol: f64,
) -> Result<HarmonicTable> {
    if k_max == 0 || k_max > MAX_HARMONIC_DEGREE {
        return Err(Error::invalid(format!("k_max must lie in 1..={MAX_HARMONIC_DEGREE}")));
    }
    check_radii(r0, rho, mu0)?;
    let grid = harmonic_grid(points_per_axis)?;
    let op = DivergenceOperator::new(&crate::fields::ConstantMetric::identity(2), grid)?;
    let rows = (1..=k_max)
        .map(|k| harmonic_row(&op, k, r0, rho, mu0, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(HarmonicTable::from_rows(r0, rho, mu0, points_per_axis, rows))
}

/// Degree of the random boundary data `Σ_{k ≤ D} c_k r^k cos(kθ + p_k)`.
pub const PERTURBED_DATA_DEGREE: u32 = 4;

/// Seeded coefficients `a = A cos(k·x + p)`, `b_i = B_i sin(k_i·x + p_i)`
/// with `|A| ≤ M₁` and `|B| ≤ M₁`, and seeded boundary data.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedDraw {
    pub seed: u64,
    pub coeffs: CoefficientField,
    /// `(c_k, p_k)` for `k = 0..=PERTURBED_DATA_DEGREE`.
    pub data: Vec<(f64, f64)>,
}

impl PerturbedDraw {
    pub fn new(dim: usize, m1: f64, seed: u64) -> Result<Self> {
        if !(m1 >= 0.0) {
            return Err(Error::invalid("M1 must be non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wave = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect() };
        let amp_a = m1 * rng.random_range(-1.0..1.0);
        let ka = wave(&mut rng);
        let pa = rng.random_range(0.0..2.0 * PI);
        let a = Expr::plane_wave(amp_a, &ka, pa, false);
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = m1 / sqrt(dim as f64);
        let b = raw
            .iter()
            .map(|amp| {
                let k = wave(&mut rng);
                let p = rng.random_range(0.0..2.0 * PI);
                Expr::plane_wave(scale * amp, &k, p, true)
            })
            .collect();
        let data = (0..=PERTURBED_DATA_DEGREE)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI)))
            .collect();
        Ok(PerturbedDraw {
            seed,
            coeffs: CoefficientField::new(b, a, m1)?,
            data,
        })
    }

    pub fn boundary_value(&self, x: &[f64]) -> f64 {
        let z = Complex64::new(x[0], x[1]);
        self.data
            .iter()
            .enumerate()
            .map(|(k, (c, p))| c * (z.powu(k as u32) * Complex64::new(math::cos(*p), math::sin(*p))).re)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRun {
    pub seed: u64,
    pub c_emp: f64,
    pub norm_r0: f64,
    pub norm_rho: f64,
    pub norm_1: f64,
    pub tau_tilde: f64,
    pub iterations: usize,
    pub peclet_max: f64,
}

/// Solves `Δ_g u = ⟨b, ∇_g u⟩ + a u` for one draw and checks it.
pub fn perturbed_run(
    op: &DivergenceOperator,
    draw: &PerturbedDraw,
    r0: f64,
    rho: f64,
    mu0: f64,
    tol: f64,
) -> Result<PerturbedRun> {
    let system = assemble_with(op, &draw.coeffs, &|x| draw.boundary_value(x), None)?;
    let rep = solve(&system, tol, default_max_iter(op.grid()))?;
    let r = three_sphere_check(&rep.solution, r0, rho, mu0, None, None)?;
    Ok(PerturbedRun {
        seed: draw.seed,
        c_emp: r.c_emp,
        norm_r0: r.norm_r0,
        norm_rho: r.norm_rho,
        norm_1: r.norm_1,
        tau_tilde: r.tau_tilde,
        iterations: rep.iterations,
        peclet_max: system.peclet_max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedReport {
    pub runs: Vec<PerturbedRun>,
    pub max_c_emp: f64,
}

impl PerturbedReport {
    pub fn from_runs(runs: Vec<PerturbedRun>) -> Self {
        PerturbedReport {
            max_c_emp: runs.iter().map(|r| r.c_emp).fold(0.0, f64::max),
            runs,
        }
    }
}

/// `n_runs` draws with seeds `seed, seed + 1, …`.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_experiment(
    metric: &dyn MetricField,
    points_per_axis: usize,
    r0: f64,
    rho: f64,
    mu0: f64,
    m1: f64,
    n_runs: usize,
    seed: u64,
    tol: f64,
) -> Result<PerturbedReport> {
    check_radii(r0, rho, mu0)?;
    let op = DivergenceOperator::new(metric, harmonic_grid(points_per_axis)?)?;
    let runs = (0..n_runs as u64)
        .map(|i| perturbed_run(&op, &PerturbedDraw::new(2, m1, seed.wrapping_add(i))?, r0, rho, mu0, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbedReport::from_runs(runs))
}

/// Ball-norm data of a field sampled from a closure, for tests and the CLI.
pub fn sampled(grid: &Arc<GridDomain>, f: impl Fn(&[f64]) -> f64) -> ScalarField {
    ScalarField::from_fn(grid.clone(), f)
}
