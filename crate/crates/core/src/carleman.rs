//! The conjugated operator `P_τ v = e^{τφ} Δ_g (e^{−τφ} v)`, its symmetric
//! and antisymmetric parts, the Rellich identity on grids, and empirical
//! Carleman ratios over `τ`.
//!
//! All exponential weights are shifted by the largest `φ` on the relevant
//! support, so nothing overflows and additive constants in `φ` cancel.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::fields::{metric_eval, MetricField, WeightFunction};
use crate::grid::{DivergenceOperator, ScalarField};
use crate::math::{self, exp};
use crate::pseudoconvexity::PointFrame;
use crate::{Error, Result};

/// Largest `τ (max φ − min φ)` accepted before the unshifted factor
/// `e^{−τφ}` would leave the double range.
pub const MAX_WEIGHT_EXPONENT: f64 = 650.0;

/// Weight data sampled at grid nodes.
#[derive(Clone, Debug)]
pub struct GridWeight {
    pub phi: Vec<f64>,
    /// `∇_gφ`, `dim` entries per node.
    pub grad_g: Vec<f64>,
    /// `|∇_gφ|²_g`.
    pub norm2: Vec<f64>,
    /// `Δ_gφ`.
    pub laplace: Vec<f64>,
}

impl GridWeight {
    pub fn new(metric: &dyn MetricField, phi: &dyn WeightFunction, op: &DivergenceOperator) -> Result<Self> {
        let grid = op.grid();
        let n = grid.dim;
        let len = grid.len();
        let mut out = GridWeight {
            phi: vec![0.0; len],
            grad_g: vec![0.0; len * n],
            norm2: vec![0.0; len],
            laplace: vec![0.0; len],
        };
        for idx in 0..len {
            let x = grid.point(idx);
            let f = PointFrame::new(metric, phi, &x)?;
            out.phi[idx] = phi.value(&x);
            out.grad_g[idx * n..idx * n + n].copy_from_slice(&f.grad_g_phi);
            out.norm2[idx] = f.norm_g_phi * f.norm_g_phi;
            out.laplace[idx] = f.laplace_phi();
        }
        Ok(out)
    }

    /// The same weight plus a constant.
    pub fn shifted(&self, c: f64) -> Self {
        GridWeight {
            phi: self.phi.iter().map(|p| p + c).collect(),
            ..self.clone()
        }
    }

    fn extremes_where(&self, active: impl Fn(usize) -> bool) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, p) in self.phi.iter().enumerate() {
            if active(i) {
                lo = lo.min(*p);
                hi = hi.max(*p);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// `w · D v` per node, with `D` the centered gradient.
fn weight_dot_grad(op: &DivergenceOperator, gw: &GridWeight, v: &[f64]) -> Vec<f64> {
    let n = op.grid().dim;
    let dv = op.euclid_gradient(v);
    (0..v.len())
        .map(|i| (0..n).map(|d| gw.grad_g[i * n + d] * dv[i * n + d]).sum())
        .collect()
}

fn stencil_reach(op: &DivergenceOperator, values: &[f64]) -> Vec<bool> {
    let grid = op.grid();
    let n = grid.dim;
    let mut offsets: Vec<isize> = Vec::new();
    for a in 0..n {
        let sa = grid.stride(a) as isize;
        offsets.extend([sa, -sa]);
        for b in a + 1..n {
            let sb = grid.stride(b) as isize;
            offsets.extend([sa + sb, sa - sb, -sa + sb, -sa - sb]);
        }
    }
    // Support dilated by one stencil step (over-inclusive at box faces).
    let mut active: Vec<bool> = values.iter().map(|v| *v != 0.0).collect();
    for (idx, v) in values.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        for o in &offsets {
            let j = idx as isize + o;
            if j >= 0 && (j as usize) < values.len() {
                active[j as usize] = true;
            }
        }
    }
    active
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConjugatedApplication {
    pub tau: f64,
    /// `e^{τφ} Δ_h(e^{−τφ} v)`.
    pub direct: ScalarField,
    /// `S_τ v + A_τ v`.
    pub expanded: ScalarField,
    /// `Δ_h v + τ²|∇_gφ|² v`.
    pub s_part: ScalarField,
    /// `−2τ⟨∇_gφ, ∇_h v⟩ − τ(Δ_gφ) v`.
    pub a_part: ScalarField,
}

/// `S_τ v`.
pub fn symmetric_part(op: &DivergenceOperator, gw: &GridWeight, v: &[f64], tau: f64) -> Vec<f64> {
    let lap = op.apply(v);
    lap.iter()
        .zip(v)
        .zip(&gw.norm2)
        .map(|((l, vi), w2)| l + tau * tau * w2 * vi)
        .collect()
}

/// `A_τ v`.
pub fn antisymmetric_part(op: &DivergenceOperator, gw: &GridWeight, v: &[f64], tau: f64) -> Vec<f64> {
    let wd = weight_dot_grad(op, gw, v);
    wd.iter()
        .zip(v)
        .zip(&gw.laplace)
        .map(|((d, vi), lp)| -2.0 * tau * d - tau * lp * vi)
        .collect()
}

pub fn conjugate(op: &DivergenceOperator, gw: &GridWeight, v: &ScalarField, tau: f64) -> Result<ConjugatedApplication> {
    if !tau.is_finite() {
        return Err(Error::invalid("tau must be finite"));
    }
    let grid = op.grid().clone();
    let reach = stencil_reach(op, &v.values);
    let (lo, hi) = gw.extremes_where(|i| reach[i]).unwrap_or((0.0, 0.0));
    let exponent = tau.abs() * (hi - lo);
    if exponent > MAX_WEIGHT_EXPONENT {
        return Err(Error::WeightOverflow { exponent });
    }
    // Shift so that the larger of e^{±τφ} stays ≤ 1 on the stencil reach.
    let shift = if tau >= 0.0 { hi } else { lo };
    let z: Vec<f64> = v
        .values
        .iter()
        .zip(&gw.phi)
        .map(|(vi, p)| if *vi == 0.0 { 0.0 } else { vi * exp(-tau * (p - shift)) })
        .collect();
    let lap_z = op.apply(&z);
    let direct: Vec<f64> = lap_z
        .iter()
        .zip(&gw.phi)
        .map(|(l, p)| if *l == 0.0 { 0.0 } else { l * exp(tau * (p - shift)) })
        .collect();
    let s = symmetric_part(op, gw, &v.values, tau);
    let a = antisymmetric_part(op, gw, &v.values, tau);
    let expanded: Vec<f64> = s.iter().zip(&a).map(|(x, y)| x + y).collect();
    Ok(ConjugatedApplication {
        tau,
        direct: ScalarField { grid: grid.clone(), values: direct },
        expanded: ScalarField { grid: grid.clone(), values: expanded },
        s_part: ScalarField { grid: grid.clone(), values: s },
        a_part: ScalarField { grid, values: a },
    })
}

/// Vector field given componentwise by expressions.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprVectorField {
    components: Vec<Expr>,
    jacobian: Vec<Vec<Expr>>,
}

impl ExprVectorField {
    pub fn new(components: Vec<Expr>) -> Result<Self> {
        let n = components.len();
        if components.iter().any(|c| c.arity() > n) {
            return Err(Error::invalid("vector field references a variable beyond its dimension"));
        }
        let jacobian = components.iter().map(|c| c.gradient(n)).collect();
        Ok(ExprVectorField { components, jacobian })
    }

    pub fn parse(components: &[&str]) -> Result<Self> {
        Self::new(components.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// `J[k][i] = ∂_i B^k`.
    pub fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.jacobian.iter().map(|row| row.iter().map(|e| e.eval(x)).collect()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RellichReport {
    /// `∫ 2⟨B, ∇_g f⟩ Δ_g f`.
    pub lhs: f64,
    /// `∫ div B |∇_g f|² − 2 ∂_iB^k g^{ij} ∂_j f ∂_k f + B^k ∂_k g^{ij} ∂_i f ∂_j f`.
    pub rhs: f64,
    pub residual: f64,
    /// `∫ |2⟨B, ∇_g f⟩ Δ_g f|`, the size the residual is compared against.
    pub scale: f64,
}

/// Integrated Rellich identity for compactly supported `f`; the divergence
/// term drops out.
pub fn rellich_residual(
    metric: &dyn MetricField,
    op: &DivergenceOperator,
    b: &ExprVectorField,
    f: &ScalarField,
) -> Result<RellichReport> {
    let grid = op.grid();
    let n = grid.dim;
    if b.dim() != n {
        return Err(Error::invalid("vector field and grid dimensions differ"));
    }
    if !grid.is_compactly_supported(&f.values) {
        return Err(Error::invalid("rellich check needs a compactly supported field"));
    }
    let lap = op.apply(&f.values);
    let df = op.euclid_gradient(&f.values);
    let q = grid.weights();
    let (mut lhs, mut rhs, mut scale) = (0.0, 0.0, 0.0);
    for idx in 0..grid.len() {
        let d = &df[idx * n..idx * n + n];
        if lap[idx] == 0.0 && d.iter().all(|v| *v == 0.0) {
            continue;
        }
        let x = grid.point(idx);
        let bv = b.eval(&x);
        let jac = b.jacobian(&x);
        let m = metric_eval(metric, &x)?;
        let term = 2.0 * math::dot(&bv, d) * lap[idx];
        lhs += term * q[idx];
        scale += term.abs() * q[idx];
        let div_b: f64 = (0..n).map(|k| jac[k][k]).sum();
        let grad2 = m.g_inv.bilinear(d, d);
        let mut cross = 0.0;
        for i in 0..n {
            for k in 0..n {
                let gjd: f64 = (0..n).map(|j| m.g_inv[(i, j)] * d[j]).sum();
                cross += jac[k][i] * gjd * d[k];
            }
        }
        let transport: f64 = (0..n).map(|k| bv[k] * m.dg_inv[k].bilinear(d, d)).sum();
        rhs += (div_b * grad2 - 2.0 * cross + transport) * q[idx];
    }
    Ok(RellichReport {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        scale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioTerms {
    pub tau: f64,
    /// `τ ∫ (|∇_g u|² + τ² u²) e^{2τφ}`.
    pub lhs: f64,
    /// `∫ |Δ_g u|² e^{2τφ}`.
    pub rhs: f64,
    /// `lhs / rhs`, `+∞` when `rhs = 0 < lhs`.
    pub ratio: f64,
}

/// Both sides of the Carleman inequality for `u` at `τ`, with the weight
/// shifted by its maximum over the stencil reach of `u`.
pub fn carleman_ratio(op: &DivergenceOperator, gw: &GridWeight, u: &ScalarField, tau: f64) -> Result<RatioTerms> {
    if u.is_zero() {
        return Err(Error::invalid("carleman ratio needs a nonzero field"));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid("tau must be positive"));
    }
    let grid = op.grid();
    let reach = stencil_reach(op, &u.values);
    let (_, hi) = gw.extremes_where(|i| reach[i]).expect("nonzero field has support");
    let lap = op.apply(&u.values);
    let g2 = op.grad_norm2(&u.values);
    let q = grid.weights();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for idx in 0..grid.len() {
        if !reach[idx] {
            continue;
        }
        let e = exp(2.0 * tau * (gw.phi[idx] - hi));
        let ui = u.values[idx];
        lhs += (g2[idx] + tau * tau * ui * ui) * e * q[idx];
        rhs += lap[idx] * lap[idx] * e * q[idx];
    }
    lhs *= tau;
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(RatioTerms { tau, lhs, rhs, ratio })
}

/// Relative per-doubling growth of the sweep maximum above which `τ` is
/// not yet in the plateau.
pub const PLATEAU_GROWTH: f64 = 0.05;

/// `n` points from `lo` to `hi`, equally spaced in `ln τ`.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || n == 0 || (n == 1 && hi != lo) {
        return Err(Error::invalid("tau grid needs 0 < tau_min <= tau_max and n >= 1"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let step = math::ln(hi / lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|k| if k + 1 == n { hi } else { lo * exp(step * k as f64) })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSweepReport {
    pub tau_grid: Vec<f64>,
    pub test_function_ids: Vec<String>,
    /// `terms[f][k]` for function `f` at `tau_grid[k]`.
    pub terms: Vec<Vec<RatioTerms>>,
    /// Per-doubling growth of the maximum ratio between consecutive taus.
    pub growth: Vec<f64>,
    pub tau0_emp: f64,
    pub k_emp: f64,
    /// Largest tau with `τ h ≤ trust_factor`.
    pub tau_trusted_max: f64,
}

impl TauSweepReport {
    /// Plateau detection and `K_emp` from a filled ratio table.
    pub fn from_terms(
        tau_grid: Vec<f64>,
        test_function_ids: Vec<String>,
        terms: Vec<Vec<RatioTerms>>,
        h: f64,
        trust_factor: f64,
    ) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("sweep needs at least one test function"));
        }
        let nt = tau_grid.len();
        if terms.iter().any(|row| row.len() != nt) {
            return Err(Error::invalid("ratio table does not match tau grid"));
        }
        let maxima: Vec<f64> = (0..nt)
            .map(|k| terms.iter().map(|row| row[k].ratio).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        if maxima.iter().any(|m| !m.is_finite()) {
            return Err(Error::PlateauNotFound(format!(
                "non-finite ratio in sweep maxima {maxima:?}; a test function lies in the discrete kernel"
            )));
        }
        let growth: Vec<f64> = (0..nt.saturating_sub(1))
            .map(|k| {
                let doublings = math::log2(tau_grid[k + 1] / tau_grid[k]);
                math::pow(maxima[k + 1] / maxima[k], 1.0 / doublings) - 1.0
            })
            .collect();
        let start = match growth.iter().rposition(|g| *g >= PLATEAU_GROWTH) {
            None => 0,
            Some(last_bad) if last_bad + 1 < growth.len() => last_bad + 1,
            Some(_) => {
                return Err(Error::PlateauNotFound(format!(
                    "maximum ratio still grows by {:.1}% per doubling at tau = {}; maxima {maxima:?}",
                    100.0 * growth[nt - 2],
                    tau_grid[nt - 1]
                )))
            }
        };
        let k_emp = maxima[start..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(TauSweepReport {
            tau0_emp: tau_grid[start],
            tau_grid,
            test_function_ids,
            terms,
            growth,
            k_emp,
            tau_trusted_max: trust_factor / h,
        })
    }

    pub fn ratios(&self) -> Vec<Vec<f64>> {
        self.terms.iter().map(|r| r.iter().map(|t| t.ratio).collect()).collect()
    }
}

/// Ratios of every test function at every `τ` of a geometric grid.
#[allow(clippy::too_many_arguments)]
pub fn tau_sweep(
    op: &DivergenceOperator,
    gw: &GridWeight,
    test_functions: &[(String, ScalarField)],
    tau_min: f64,
    tau_max: f64,
    n_tau: usize,
    trust_factor: f64,
) -> Result<TauSweepReport> {
    if test_functions.is_empty() {
        return Err(Error::invalid("sweep needs at least one test function"));
    }
    let taus = geometric_grid(tau_min, tau_max, n_tau)?;
    let terms = test_functions
        .iter()
        .map(|(_, u)| taus.iter().map(|t| carleman_ratio(op, gw, u, *t)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    TauSweepReport::from_terms(
        taus,
        test_functions.iter().map(|(id, _)| id.clone()).collect(),
        terms,
        op.grid().h,
        trust_factor,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ConstantMetric, ExpWeight, ExprMetric, ExprWeight};
    use crate::grid::{make_bump, make_cutoff, GridDomain, Region};
    use alloc::sync::Arc;
    use approx::assert_relative_eq;

    fn setup(n: usize, metric: &dyn MetricField, phi: &dyn WeightFunction) -> (DivergenceOperator, GridWeight) {
        let grid = Arc::new(GridDomain::new(2, 1.0, n, Region::Ball { radius: 1.0 }).unwrap());
        let op = DivergenceOperator::new(metric, grid).unwrap();
        let gw = GridWeight::new(metric, phi, &op).unwrap();
        (op, gw)
    }

    fn radial_weight(mu: f64) -> ExpWeight {
        ExpWeight::new(Arc::new(ExprWeight::neg_abs2(2)), mu).unwrap()
    }

    #[test]
    fn tau_zero_is_plain_operator() {
        let g = ConstantMetric::identity(2);
        let (op, gw) = setup(65, &g, &radial_weight(8.0));
        let v = make_bump(op.grid(), &[0.1, 0.2], 0.5, Some(3)).unwrap();
        let c = conjugate(&op, &gw, &v, 0.0).unwrap();
        assert_eq!(c.direct.values, op.apply(&v.values));
        assert!(c.a_part.values.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn linear_weight_on_plateau() {
        let g = ConstantMetric::identity(2);
        let phi = ExprWeight::linear(&[1.0, 0.0]).unwrap();
        let (op, gw) = setup(129, &g, &phi);
        let eta = make_cutoff(0.2).unwrap();
        let grid = op.grid().clone();
        let v = ScalarField::from_fn(grid.clone(), |x| libm::exp(x[0]) * eta.value(x));
        let h = grid.h;
        for tau in [0.5, 2.0, 4.0] {
            let c = conjugate(&op, &gw, &v, tau).unwrap();
            let mut checked = 0;
            for idx in 0..grid.len() {
                let x = grid.point(idx);
                let r = math::norm(&x);
                if r > 0.1 + 3.0 * h && r < 0.5 - 3.0 * h {
                    let want = (1.0 - tau) * (1.0 - tau) * libm::exp(x[0]);
                    assert_relative_eq!(c.direct.values[idx], want, max_relative = 1e-3);
                    assert_relative_eq!(c.expanded.values[idx], want, max_relative = 1e-3);
                    checked += 1;
                }
            }
            assert!(checked > 1000);
        }
    }

    #[test]
    fn split_sums_and_pythagoras() {
        let g = ExprMetric::sin_perturbed(2, 0.1).unwrap();
        let (op, gw) = setup(65, &g, &radial_weight(4.0));
        let v = make_bump(op.grid(), &[-0.2, 0.1], 0.6, Some(9)).unwrap();
        let c = conjugate(&op, &gw, &v, 5.0).unwrap();
        for i in 0..v.values.len() {
            assert_eq!(c.expanded.values[i], c.s_part.values[i] + c.a_part.values[i]);
        }
        let q = op.grid().weights();
        let (mut p2, mut s2, mut a2, mut sa) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..v.values.len() {
            let (s, a) = (c.s_part.values[i], c.a_part.values[i]);
            p2 += (s + a) * (s + a) * q[i];
            s2 += s * s * q[i];
            a2 += a * a * q[i];
            sa += s * a * q[i];
        }
        assert_relative_eq!(p2, s2 + a2 + 2.0 * sa, max_relative = 1e-12);
    }

    #[test]
    fn discrete_adjointness_defects() {
        let g = ExprMetric::sin_perturbed(2, 0.1).unwrap();
        let mut defects = Vec::new();
        for n in [65, 129] {
            let (op, gw) = setup(n, &g, &radial_weight(4.0));
            let grid = op.grid();
            let v = make_bump(grid, &[0.1, 0.1], 0.5, Some(1)).unwrap();
            let w = make_bump(grid, &[-0.1, 0.0], 0.5, Some(2)).unwrap();
            let tau = 3.0;
            let s = |u: &[f64]| symmetric_part(&op, &gw, u, tau);
            let a = |u: &[f64]| antisymmetric_part(&op, &gw, u, tau);
            let scale = grid.norm(&v.values) * grid.norm(&w.values);
            let ds = (grid.inner(&s(&v.values), &w.values) - grid.inner(&v.values, &s(&w.values))).abs();
            let da = (grid.inner(&a(&v.values), &w.values) + grid.inner(&v.values, &a(&w.values))).abs();
            assert!(ds <= 1e-10 * scale * tau * tau, "S defect {ds}");
            assert!(da <= 10.0 * grid.h * tau * scale, "A defect {da}");
            defects.push(da);
        }
        assert!(defects[1] < defects[0]);
    }

    #[test]
    fn large_exponent_is_refused() {
        let g = ConstantMetric::identity(2);
        let phi = ExprWeight::linear(&[1.0, 0.0]).unwrap();
        let (op, gw) = setup(33, &g, &phi);
        let v = make_bump(op.grid(), &[0.0, 0.0], 0.8, None).unwrap();
        assert!(conjugate(&op, &gw, &v, 100.0).is_ok());
        assert!(matches!(conjugate(&op, &gw, &v, 1000.0), Err(Error::WeightOverflow { .. })));
    }

    #[test]
    fn rellich_trivial_and_constant_field() {
        let g = ConstantMetric::identity(2);
        let (op, _) = setup(65, &g, &radial_weight(1.0));
        let f = make_bump(op.grid(), &[0.1, -0.1], 0.6, Some(4)).unwrap();
        let zero = ExprVectorField::parse(&["0", "0"]).unwrap();
        let r = rellich_residual(&g, &op, &zero, &f).unwrap();
        assert_eq!((r.lhs, r.rhs, r.residual), (0.0, 0.0, 0.0));
        let b = ExprVectorField::parse(&["0.7", "-1.3"]).unwrap();
        let r = rellich_residual(&g, &op, &b, &f).unwrap();
        assert!(r.residual <= 1e-12 * r.scale, "{r:?}");
        let dense = ScalarField::from_fn(op.grid().clone(), |_| 1.0);
        assert!(rellich_residual(&g, &op, &b, &dense).is_err());
    }

    #[test]
    fn rellich_position_field_converges() {
        let g = ConstantMetric::identity(2);
        let b = ExprVectorField::parse(&["x1", "x2"]).unwrap();
        let res: Vec<f64> = [65, 129, 257]
            .iter()
            .map(|n| {
                let (op, _) = setup(*n, &g, &radial_weight(1.0));
                let f = make_bump(op.grid(), &[0.1, -0.1], 0.6, Some(4)).unwrap();
                rellich_residual(&g, &op, &b, &f).unwrap().residual
            })
            .collect();
        assert!(res[0] / res[1] >= 1.6 && res[1] / res[2] >= 1.6, "{res:?}");
    }

    #[test]
    fn ratio_invariances() {
        let g = ConstantMetric::identity(2);
        let phi = radial_weight(8.0);
        let grid = Arc::new(GridDomain::new(2, 1.0, 129, Region::Annulus { inner: 0.5, outer: 1.0 }).unwrap());
        let op = DivergenceOperator::new(&g, grid.clone()).unwrap();
        let gw = GridWeight::new(&g, &phi, &op).unwrap();
        let u = make_bump(&grid, &[0.75, 0.0], 0.2, Some(5)).unwrap();
        for tau in [4.0, 32.0, 128.0] {
            let base = carleman_ratio(&op, &gw, &u, tau).unwrap();
            assert!(base.ratio.is_finite() && base.ratio > 0.0);
            let scaled = carleman_ratio(&op, &gw, &u.scaled(-3.7), tau).unwrap();
            assert_relative_eq!(scaled.ratio, base.ratio, max_relative = 1e-12);
            let shifted = carleman_ratio(&op, &gw.shifted(12.5), &u, tau).unwrap();
            assert_relative_eq!(shifted.ratio, base.ratio, max_relative = 1e-12);
        }
        assert!(carleman_ratio(&op, &gw, &u.scaled(0.0), 4.0).is_err());
        assert!(carleman_ratio(&op, &gw, &u, 0.0).is_err());
    }

    #[test]
    fn sweep_edge_cases() {
        let g = ConstantMetric::identity(2);
        let (op, gw) = setup(65, &g, &radial_weight(8.0));
        let u = make_bump(op.grid(), &[0.5, 0.0], 0.3, None).unwrap();
        assert!(tau_sweep(&op, &gw, &[], 1.0, 2.0, 2, 1.0).is_err());
        let one = [(String::from("bump"), u)];
        let r = tau_sweep(&op, &gw, &one, 7.0, 7.0, 1, 1.0).unwrap();
        assert_eq!(r.tau0_emp, 7.0);
        assert_eq!(r.k_emp, r.terms[0][0].ratio);
        assert!(r.growth.is_empty());
        assert_relative_eq!(r.tau_trusted_max, 32.0, max_relative = 1e-12);
    }

    #[test]
    fn plateau_detection() {
        let terms = |ms: &[f64]| {
            alloc::vec![ms
                .iter()
                .enumerate()
                .map(|(k, m)| RatioTerms { tau: k as f64, lhs: *m, rhs: 1.0, ratio: *m })
                .collect::<Vec<_>>()]
        };
        let taus = geometric_grid(1.0, 16.0, 5).unwrap();
        assert_relative_eq!(taus[2], 4.0, max_relative = 1e-14);
        let id = alloc::vec![String::from("f")];
        let r = TauSweepReport::from_terms(taus.clone(), id.clone(), terms(&[1.0, 2.0, 3.0, 3.05, 3.0]), 0.1, 1.0).unwrap();
        assert_eq!(r.tau0_emp, 4.0);
        assert_eq!(r.k_emp, 3.05);
        let bad = TauSweepReport::from_terms(taus.clone(), id.clone(), terms(&[1.0, 1.0, 1.0, 1.0, 2.0]), 0.1, 1.0);
        assert!(matches!(bad, Err(Error::PlateauNotFound(_))));
        let inf = TauSweepReport::from_terms(taus, id, terms(&[1.0, f64::INFINITY, 1.0, 1.0, 1.0]), 0.1, 1.0);
        assert!(matches!(inf, Err(Error::PlateauNotFound(_))));
    }
}
