//! Finite-difference solution of `Δ_g u − ⟨b, ∇_g u⟩ − a u = f` on a ball
//! with Dirichlet data, and a manufactured-solution convergence harness.
//!
//! Unknowns are the nodes strictly inside the ball that are not on the box
//! faces. Every other node a stencil touches carries Dirichlet data and is
//! moved to the right-hand side. Rows are scaled by the cell volume `hⁿ`.
//! `⟨b, ∇_g u⟩_g = b · ∇u`, so the convection term uses plain centered
//! differences.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::fields::{metric_eval, MetricField};
use crate::grid::{DivergenceOperator, GridDomain, Region, ScalarField};
use crate::math::{self, sqrt};
use crate::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Cell Péclet number `|b_i| h / g^{ii}` at which centered convection is
/// flagged.
pub const PECLET_LIMIT: f64 = 2.0;

/// Lower-order coefficients `b` (vector) and `a` (scalar) with a declared
/// bound `M₁` on both sup norms.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub b: Vec<Expr>,
    pub a: Expr,
    pub m1_bound: f64,
}

impl CoefficientField {
    pub fn new(b: Vec<Expr>, a: Expr, m1_bound: f64) -> Result<Self> {
        let n = b.len();
        if b.iter().chain(core::iter::once(&a)).any(|e| e.arity() > n) {
            return Err(Error::invalid("coefficient references a variable beyond its dimension"));
        }
        if !(m1_bound >= 0.0) {
            return Err(Error::invalid("coefficient bound must be non-negative"));
        }
        Ok(CoefficientField { b, a, m1_bound })
    }

    pub fn zero(dim: usize) -> Self {
        CoefficientField {
            b: vec![Expr::Const(0.0); dim],
            a: Expr::Const(0.0),
            m1_bound: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `b ≡ 0`, in which case the assembled matrix is symmetric.
    pub fn is_convection_free(&self) -> bool {
        self.b.iter().all(|e| e.constant() == Some(0.0))
    }

    pub fn b_at(&self, x: &[f64]) -> Vec<f64> {
        self.b.iter().map(|e| e.eval(x)).collect()
    }

    pub fn a_at(&self, x: &[f64]) -> f64 {
        self.a.eval(x)
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().expect("entry pushed for this column") += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|(c, _)| *c == i).map_or(0.0, |e| e.1))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |e| e.1)
    }

    pub fn is_symmetric(&self, rtol: f64) -> bool {
        (0..self.n).all(|i| {
            self.row(i).all(|(j, v)| {
                let t = self.get(j, i);
                (v - t).abs() <= rtol * v.abs().max(t.abs())
            })
        })
    }
}

#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub grid: Arc<GridDomain>,
    /// `hⁿ(Δ_h − b·D − a)` restricted to the unknowns.
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Grid index of each unknown.
    pub unknowns: Vec<usize>,
    /// Dirichlet data at every node (unused at unknowns).
    pub boundary: Vec<f64>,
    pub symmetric: bool,
    pub peclet_max: f64,
    pub warnings: Vec<String>,
}

impl LinearSystem {
    pub fn len(&self) -> usize {
        self.unknowns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unknowns.is_empty()
    }

    /// Full grid field from values at the unknowns plus Dirichlet data.
    pub fn expand(&self, u: &[f64]) -> ScalarField {
        let mut values = self.boundary.clone();
        for (k, idx) in self.unknowns.iter().enumerate() {
            values[*idx] = u[k];
        }
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Assembles `Δ_g u − ⟨b, ∇_g u⟩ − a u = f` with Dirichlet data from
/// `dirichlet` at every non-unknown node. `source` is `f` at grid nodes.
pub fn assemble(
    metric: &dyn MetricField,
    coeffs: &CoefficientField,
    grid: Arc<GridDomain>,
    dirichlet: &dyn Fn(&[f64]) -> f64,
    source: Option<&[f64]>,
) -> Result<LinearSystem> {
    let op = DivergenceOperator::new(metric, grid.clone())?;
    assemble_with(&op, coeffs, dirichlet, source)
}

/// [`assemble`] with a prebuilt operator.
pub fn assemble_with(
    op: &DivergenceOperator,
    coeffs: &CoefficientField,
    dirichlet: &dyn Fn(&[f64]) -> f64,
    source: Option<&[f64]>,
) -> Result<LinearSystem> {
    let grid = op.grid().clone();
    let n = grid.dim;
    let Region::Ball { radius } = grid.mask else {
        return Err(Error::invalid("the solver needs a ball mask (annuli are not simply connected)"));
    };
    if coeffs.dim() != n {
        return Err(Error::invalid("coefficient and grid dimensions differ"));
    }
    if let Some(f) = source {
        if f.len() != grid.len() {
            return Err(Error::invalid("source length does not match grid"));
        }
    }
    let len = grid.len();
    let mut index_of = vec![usize::MAX; len];
    let mut unknowns = Vec::new();
    for idx in 0..len {
        if !grid.is_edge(idx) && math::norm(&grid.point(idx)) < radius {
            index_of[idx] = unknowns.len();
            unknowns.push(idx);
        }
    }
    if unknowns.is_empty() {
        return Err(Error::invalid("no interior unknowns"));
    }
    let boundary: Vec<f64> = (0..len)
        .map(|idx| if index_of[idx] == usize::MAX { dirichlet(&grid.point(idx)) } else { 0.0 })
        .collect();

    let cell = math::powi(grid.h, n as i32);
    let inv2h = 1.0 / (2.0 * grid.h);
    let mut rows = Vec::with_capacity(unknowns.len());
    let mut rhs = Vec::with_capacity(unknowns.len());
    let mut peclet_max = 0.0f64;
    let mut sup_b = 0.0f64;
    let mut sup_a = 0.0f64;
    for &idx in &unknowns {
        let x = grid.point(idx);
        let b = coeffs.b_at(&x);
        let a = coeffs.a_at(&x);
        sup_a = sup_a.max(a.abs());
        sup_b = sup_b.max(math::norm(&b));
        let mut entries = op.stencil(idx);
        entries.push((idx, -a));
        for d in 0..n {
            if b[d] != 0.0 {
                let s = grid.stride(d);
                entries.push((idx + s, -b[d] * inv2h));
                entries.push((idx - s, b[d] * inv2h));
                peclet_max = peclet_max.max(b[d].abs() * grid.h / op.g_inv_at(idx, d, d));
            }
        }
        let mut row = Vec::with_capacity(entries.len());
        let mut r = source.map_or(0.0, |f| f[idx]) * cell;
        for (col, v) in entries {
            if index_of[col] == usize::MAX {
                r -= v * cell * boundary[col];
            } else {
                row.push((index_of[col], v * cell));
            }
        }
        rows.push(row);
        rhs.push(r);
    }
    let tol = 1e-12 * coeffs.m1_bound.max(1.0);
    if sup_a > coeffs.m1_bound + tol || sup_b > coeffs.m1_bound + tol {
        return Err(Error::invalid(format!(
            "sampled coefficient sup norms |a| = {sup_a:.4}, |b| = {sup_b:.4} exceed the declared bound {}",
            coeffs.m1_bound
        )));
    }
    let mut warnings = Vec::new();
    if peclet_max >= PECLET_LIMIT {
        warnings.push(format!(
            "cell Peclet number {peclet_max:.3} reaches {PECLET_LIMIT}; centered convection may oscillate"
        ));
    }
    Ok(LinearSystem {
        grid,
        matrix: CsrMatrix::from_rows(rows),
        rhs,
        unknowns,
        boundary,
        symmetric: coeffs.is_convection_free(),
        peclet_max,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrylovMethod {
    ConjugateGradient,
    BiCgStab,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final `‖rhs − A u‖ / ‖rhs‖`.
    pub residual_norm: f64,
    pub h: f64,
    pub method: KrylovMethod,
    pub solution: ScalarField,
    pub warnings: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    math::dot(a, b)
}

fn nrm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Jacobi-preconditioned conjugate gradients for SPD `k`. Returns the
/// relative residual trace.
fn conjugate_gradient(k: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> (bool, Vec<f64>) {
    let n = k.n;
    let inv_d: Vec<f64> = k.diagonal().iter().map(|d| 1.0 / d).collect();
    let bn = nrm(b);
    let mut r = vec![0.0; n];
    k.mul_vec_into(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut kp = vec![0.0; n];
    let mut trace = vec![nrm(&r) / bn];
    if trace[0] <= tol {
        return (true, trace);
    }
    for _ in 0..max_iter {
        k.mul_vec_into(&p, &mut kp);
        let alpha = rz / dot(&p, &kp);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        let res = nrm(&r) / bn;
        trace.push(res);
        if res <= tol {
            return (true, trace);
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (false, trace)
}

/// Jacobi-preconditioned BiCGStab.
fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> (bool, Vec<f64>) {
    let n = a.n;
    let inv_d: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let bn = nrm(b);
    let mut r = vec![0.0; n];
    a.mul_vec_into(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut trace = vec![nrm(&r) / bn];
    if trace[0] <= tol {
        return (true, trace);
    }
    for _ in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_d[i];
        }
        a.mul_vec_into(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if nrm(&s) / bn <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            a.mul_vec_into(x, &mut t);
            let res = nrm(&b.iter().zip(&t).map(|(p, q)| p - q).collect::<Vec<_>>()) / bn;
            trace.push(res);
            if res <= tol {
                return (true, trace);
            }
            for i in 0..n {
                r[i] = b[i] - t[i];
            }
            continue;
        }
        for i in 0..n {
            zz[i] = s[i] * inv_d[i];
        }
        a.mul_vec_into(&zz, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = nrm(&r) / bn;
        trace.push(res);
        if res <= tol {
            // Confirm against the true residual; recursion drift would
            // otherwise report success early.
            a.mul_vec_into(x, &mut t);
            let true_res = nrm(&b.iter().zip(&t).map(|(p, q)| p - q).collect::<Vec<_>>()) / bn;
            if true_res <= tol {
                return (true, trace);
            }
            for i in 0..n {
                r[i] = b[i] - t[i];
            }
        }
    }
    (false, trace)
}

/// Solves the assembled system to relative residual `tol`.
pub fn solve(system: &LinearSystem, tol: f64, max_iter: usize) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let n = system.len();
    let mut u = vec![0.0; n];
    let bn = nrm(&system.rhs);
    let (method, iterations, residual) = if bn == 0.0 {
        let m = if system.symmetric {
            KrylovMethod::ConjugateGradient
        } else {
            KrylovMethod::BiCgStab
        };
        (m, 0, 0.0)
    } else if system.symmetric {
        // −A is positive definite for a ≥ 0.
        let neg = CsrMatrix {
            vals: system.matrix.vals.iter().map(|v| -v).collect(),
            ..system.matrix.clone()
        };
        let b: Vec<f64> = system.rhs.iter().map(|v| -v).collect();
        let (ok, trace) = conjugate_gradient(&neg, &b, &mut u, tol, max_iter);
        let last = *trace.last().expect("trace holds the initial residual");
        if !ok {
            return Err(Error::NonConvergence {
                iterations: trace.len() - 1,
                residual: last,
                trace,
            });
        }
        (KrylovMethod::ConjugateGradient, trace.len() - 1, last)
    } else {
        let (ok, trace) = bicgstab(&system.matrix, &system.rhs, &mut u, tol, max_iter);
        let last = *trace.last().expect("trace holds the initial residual");
        if !ok {
            return Err(Error::NonConvergence {
                iterations: trace.len() - 1,
                residual: last,
                trace,
            });
        }
        (KrylovMethod::BiCgStab, trace.len() - 1, last)
    };
    Ok(SolveReport {
        iterations,
        residual_norm: residual,
        h: system.grid.h,
        method,
        solution: system.expand(&u),
        warnings: system.warnings.clone(),
    })
}

/// Default iteration cap: generous multiple of the grid size.
pub fn default_max_iter(grid: &GridDomain) -> usize {
    20 * grid.points_per_axis * grid.dim + 1000
}

/// `Δ_g u − b·∇u − a u` for an expression `u`, using exact derivatives of
/// `u` and the metric's (possibly finite-difference) derivatives.
pub fn apply_continuous<'a>(
    metric: &'a dyn MetricField,
    coeffs: &'a CoefficientField,
    exact: &'a Expr,
) -> Result<impl Fn(&[f64]) -> Result<f64> + 'a> {
    let n = coeffs.dim();
    if metric.dim() != n {
        return Err(Error::invalid("metric and coefficient dimensions differ"));
    }
    let grad = exact.gradient(n);
    let hess: Vec<Vec<Expr>> = grad.iter().map(|g| g.gradient(n)).collect();
    Ok(move |x: &[f64]| {
        let m = metric_eval(metric, x)?;
        let du: Vec<f64> = grad.iter().map(|e| e.eval(x)).collect();
        let mut lap = 0.0;
        for i in 0..n {
            for j in 0..n {
                lap += m.g_inv[(i, j)] * hess[i][j].eval(x) + m.dg_inv[i][(i, j)] * du[j];
            }
        }
        Ok(lap - math::dot(&coeffs.b_at(x), &du) - coeffs.a_at(x) * exact.eval(x))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub points_per_axis: usize,
    pub h: f64,
    pub l2_error: f64,
    pub max_error: f64,
    /// `log₂(e(previous h) / e(h))`; absent on the coarsest grid.
    pub order: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub exact: String,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn min_order(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.order).reduce(f64::min)
    }
}

/// Solves with the source and boundary data of `exact` on each grid size
/// (ball of radius `radius` in `[−L, L]ⁿ`) and tabulates the errors.
pub fn manufactured_check(
    metric: &dyn MetricField,
    coeffs: &CoefficientField,
    exact: &Expr,
    half_extent: f64,
    radius: f64,
    sizes: &[usize],
    tol: f64,
) -> Result<ConvergenceTable> {
    let rhs_fn = apply_continuous(metric, coeffs, exact)?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &np in sizes {
        let grid = Arc::new(GridDomain::new(coeffs.dim(), half_extent, np, Region::Ball { radius })?);
        let source = (0..grid.len())
            .map(|i| rhs_fn(&grid.point(i)))
            .collect::<Result<Vec<_>>>()?;
        let system = assemble(metric, coeffs, grid.clone(), &|x| exact.eval(x), Some(&source))?;
        let rep = solve(&system, tol, default_max_iter(&grid))?;
        let err: Vec<f64> = (0..grid.len())
            .map(|i| rep.solution.values[i] - exact.eval(&grid.point(i)))
            .collect();
        let l2 = grid.norm(&err);
        let max = system.unknowns.iter().map(|i| err[*i].abs()).fold(0.0, f64::max);
        let order = rows.last().map(|p| math::log2(p.l2_error / l2));
        rows.push(ConvergenceRow {
            points_per_axis: np,
            h: grid.h,
            l2_error: l2,
            max_error: max,
            order,
            iterations: rep.iterations,
        });
    }
    Ok(ConvergenceTable {
        exact: format!("{exact}"),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ConstantMetric;
    use approx::assert_relative_eq;

    fn ball(n: usize) -> Arc<GridDomain> {
        Arc::new(GridDomain::new(2, 1.0, n, Region::Ball { radius: 1.0 }).unwrap())
    }

    fn e(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    #[test]
    fn csr_accumulates_duplicates() {
        let m = CsrMatrix::from_rows(vec![vec![(1, 2.0), (0, 1.0), (1, 3.0)], vec![(1, 4.0)]]);
        assert_eq!(m.cols, vec![0, 1, 1]);
        assert_eq!(m.vals, vec![1.0, 5.0, 4.0]);
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![6.0, 4.0]);
        assert_eq!(m.diagonal(), vec![1.0, 4.0]);
        assert!(!m.is_symmetric(1e-12));
    }

    #[test]
    fn laplacian_system_is_five_point_and_symmetric() {
        let g = ball(17);
        let id = ConstantMetric::identity(2);
        let sys = assemble(&id, &CoefficientField::zero(2), g.clone(), &|_| 0.0, None).unwrap();
        assert!(sys.symmetric);
        assert!(sys.matrix.is_symmetric(1e-14));
        let mid = sys.unknowns.iter().position(|i| *i == 8 * 17 + 8).unwrap();
        let row: Vec<(usize, f64)> = sys.matrix.row(mid).filter(|e| e.1 != 0.0).collect();
        assert_eq!(row.len(), 5);
        let cell = g.h * g.h;
        assert_relative_eq!(sys.matrix.get(mid, mid), -4.0 / (g.h * g.h) * cell, max_relative = 1e-14);
        // Interior rows away from the boundary sum to zero.
        let s: f64 = sys.matrix.row(mid).map(|e| e.1).sum();
        assert!(s.abs() < 1e-12);

        let shifted = CoefficientField::new(vec![e("0"), e("0")], e("-1"), 1.0).unwrap();
        let sys2 = assemble(&id, &shifted, g.clone(), &|_| 0.0, None).unwrap();
        assert_relative_eq!(sys2.matrix.get(mid, mid) - sys.matrix.get(mid, mid), cell, max_relative = 1e-12);
    }

    #[test]
    fn assemble_rejects_annulus_and_excess_coefficients() {
        let id = ConstantMetric::identity(2);
        let ann = Arc::new(GridDomain::new(2, 1.0, 65, Region::Annulus { inner: 0.25, outer: 1.0 }).unwrap());
        assert!(assemble(&id, &CoefficientField::zero(2), ann, &|_| 0.0, None).is_err());
        let big = CoefficientField::new(vec![e("2"), e("0")], e("0"), 1.0).unwrap();
        assert!(assemble(&id, &big, ball(17), &|_| 0.0, None).is_err());
    }

    #[test]
    fn peclet_warning() {
        let id = ConstantMetric::identity(2);
        let strong = CoefficientField::new(vec![e("200"), e("0")], e("0"), 200.0).unwrap();
        let sys = assemble(&id, &strong, ball(33), &|_| 0.0, None).unwrap();
        assert!(sys.peclet_max >= PECLET_LIMIT);
        assert_eq!(sys.warnings.len(), 1);
        let mild = CoefficientField::new(vec![e("1"), e("0")], e("0"), 1.0).unwrap();
        assert!(assemble(&id, &mild, ball(33), &|_| 0.0, None).unwrap().warnings.is_empty());
    }

    #[test]
    fn zero_data_gives_zero() {
        let id = ConstantMetric::identity(2);
        let sys = assemble(&id, &CoefficientField::zero(2), ball(33), &|_| 0.0, None).unwrap();
        let rep = solve(&sys, 1e-10, 1000).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.solution.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn affine_and_quadratic_data_reproduced() {
        let id = ConstantMetric::identity(2);
        for u in ["x1", "x1^2 - x2^2", "3"] {
            let ex = e(u);
            let sys = assemble(&id, &CoefficientField::zero(2), ball(65), &|x| ex.eval(x), None).unwrap();
            let rep = solve(&sys, 1e-12, 5000).unwrap();
            let err = sys
                .unknowns
                .iter()
                .map(|i| (rep.solution.values[*i] - ex.eval(&sys.grid.point(*i))).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{u}: {err}");
        }
    }

    #[test]
    fn bicgstab_matches_cg_on_symmetric_problem() {
        let id = ConstantMetric::identity(2);
        let ex = e("exp(x1)*cos(x2)");
        let mut sys = assemble(&id, &CoefficientField::zero(2), ball(33), &|x| ex.eval(x), None).unwrap();
        let cg = solve(&sys, 1e-12, 5000).unwrap();
        sys.symmetric = false;
        let bi = solve(&sys, 1e-12, 5000).unwrap();
        assert_eq!(bi.method, KrylovMethod::BiCgStab);
        for (a, b) in cg.solution.values.iter().zip(&bi.solution.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_convergence_reports_trace() {
        let id = ConstantMetric::identity(2);
        let ex = e("exp(x1)*cos(x2)");
        let sys = assemble(&id, &CoefficientField::zero(2), ball(65), &|x| ex.eval(x), None).unwrap();
        match solve(&sys, 1e-12, 3) {
            Err(Error::NonConvergence { iterations, trace, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(trace.len(), 4);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn continuous_operator_on_sin_sin() {
        let id = ConstantMetric::identity(2);
        let ex = e("sin(x1)*sin(x2)");
        let coeffs = CoefficientField::zero(2);
        let f = apply_continuous(&id, &coeffs, &ex).unwrap();
        let x = [0.3, -0.7];
        assert_relative_eq!(f(&x).unwrap(), -2.0 * ex.eval(&x), max_relative = 1e-14);
    }

    #[test]
    fn manufactured_sin_sin_is_second_order() {
        let id = ConstantMetric::identity(2);
        let t = manufactured_check(
            &id,
            &CoefficientField::zero(2),
            &e("sin(x1)*sin(x2)"),
            1.0,
            1.0,
            &[33, 65],
            1e-12,
        )
        .unwrap();
        let order = t.rows[1].order.unwrap();
        assert!((order - 2.0).abs() < 0.3, "{t:?}");
    }

    #[test]
    fn max_principle_with_nonnegative_absorption() {
        let id = ConstantMetric::identity(2);
        let coeffs = CoefficientField::new(vec![e("0"), e("0")], e("1 + 0.5*sin(3*x1)"), 1.5).unwrap();
        let data = e("cos(2*x1) + x2");
        let sys = assemble(&id, &coeffs, ball(65), &|x| data.eval(x), None).unwrap();
        let rep = solve(&sys, 1e-12, 5000).unwrap();
        let (lo, hi) = (0..sys.grid.len())
            .filter(|i| !sys.unknowns.contains(i) && math::norm(&sys.grid.point(*i)) < 1.0 + 2.0 * sys.grid.h)
            .map(|i| sys.boundary[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        for i in &sys.unknowns {
            let v = rep.solution.values[*i];
            assert!(v <= hi.max(0.0) + 1e-10 && v >= lo.min(0.0) - 1e-10);
        }
    }
}
