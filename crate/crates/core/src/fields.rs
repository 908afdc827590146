//! Metrics `g(x)` and weight functions `φ(x)` evaluated pointwise, plus
//! sample-based checks of the ellipticity, Lipschitz and gradient bounds.
//!
//! Bounds produced here are certificates over the supplied samples only; they
//! say nothing about points between samples.

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::linalg::Matrix;
use crate::math::{self, sqrt};
use crate::{Error, Result};

/// Step of the central differences used when a metric has no analytic
/// derivative.
pub const METRIC_FD_STEP: f64 = 1e-5;

/// Declared structural constants: eigenvalues of `g` in `[1/λ, λ]` and
/// `Σ_ij |g_ij(x) - g_ij(y)| ≤ Λ |x - y|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBounds {
    pub lambda: f64,
    pub lipschitz: f64,
}

pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    /// Covariant matrix `g_ij(x)`.
    fn eval(&self, x: &[f64]) -> Matrix;

    /// `∂_s g_ij(x)` for `s = 0..dim`, when known analytically.
    fn grad_eval(&self, _x: &[f64]) -> Option<Vec<Matrix>> {
        None
    }

    fn bounds(&self) -> MetricBounds;
}

/// A metric that does not depend on `x`.
#[derive(Clone, Debug)]
pub struct ConstantMetric {
    g: Matrix,
    bounds: MetricBounds,
}

impl ConstantMetric {
    pub fn identity(dim: usize) -> Self {
        ConstantMetric {
            g: Matrix::identity(dim),
            bounds: MetricBounds {
                lambda: 1.0,
                lipschitz: 0.0,
            },
        }
    }

    pub fn diag(entries: &[f64]) -> Result<Self> {
        if entries.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid("diagonal metric entries must be positive"));
        }
        let lambda = entries
            .iter()
            .fold(1.0f64, |m, a| m.max(*a).max(1.0 / a));
        Ok(ConstantMetric {
            g: Matrix::from_diag(entries),
            bounds: MetricBounds {
                lambda,
                lipschitz: 0.0,
            },
        })
    }

    pub fn new(g: Matrix) -> Result<Self> {
        if !g.is_symmetric(1e-12) {
            return Err(Error::invalid("metric matrix must be symmetric"));
        }
        let eig = g.sym_eigen();
        let lo = eig.values[0];
        if !(lo > 0.0) {
            return Err(Error::DegenerateMetric { at: Vec::new() });
        }
        let lambda = eig.values[g.dim() - 1].max(1.0 / lo).max(1.0);
        Ok(ConstantMetric {
            g,
            bounds: MetricBounds {
                lambda,
                lipschitz: 0.0,
            },
        })
    }
}

impl MetricField for ConstantMetric {
    fn dim(&self) -> usize {
        self.g.dim()
    }

    fn eval(&self, _x: &[f64]) -> Matrix {
        self.g.clone()
    }

    fn grad_eval(&self, _x: &[f64]) -> Option<Vec<Matrix>> {
        Some(vec![Matrix::zeros(self.g.dim()); self.g.dim()])
    }

    fn bounds(&self) -> MetricBounds {
        self.bounds
    }
}

/// Metric whose entries are expressions in `x1..xn`; derivatives come from
/// the grammar.
#[derive(Clone, Debug)]
pub struct ExprMetric {
    dim: usize,
    entries: Vec<Expr>,
    derivs: Vec<Vec<Expr>>,
    bounds: MetricBounds,
}

impl ExprMetric {
    /// `upper` holds the entries `g_ij` for `i ≤ j` in row order
    /// (`g11, g12, .., g1n, g22, ..`). The lower triangle mirrors it.
    pub fn from_upper(dim: usize, upper: Vec<Expr>, bounds: MetricBounds) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("metric dimension must be at least 2"));
        }
        if upper.len() != dim * (dim + 1) / 2 {
            return Err(Error::invalid(format!(
                "expected {} upper-triangle entries, got {}",
                dim * (dim + 1) / 2,
                upper.len()
            )));
        }
        if let Some(e) = upper.iter().find(|e| e.arity() > dim) {
            return Err(Error::invalid(format!(
                "entry '{e}' references a coordinate beyond x{dim}"
            )));
        }
        let mut entries = vec![Expr::Const(0.0); dim * dim];
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                entries[i * dim + j] = upper[k].clone();
                entries[j * dim + i] = upper[k].clone();
                k += 1;
            }
        }
        let derivs = (0..dim)
            .map(|s| entries.iter().map(|e| e.diff(s)).collect())
            .collect();
        Ok(ExprMetric {
            dim,
            entries,
            derivs,
            bounds,
        })
    }

    /// `g = I + eps·sin(x1) e1⊗e1`.
    pub fn sin_perturbed(dim: usize, eps: f64) -> Result<Self> {
        if !(eps.abs() < 1.0) {
            return Err(Error::invalid("sin-perturbed metric needs |eps| < 1"));
        }
        let mut upper = Vec::new();
        for i in 0..dim {
            for j in i..dim {
                upper.push(if i != j {
                    Expr::Const(0.0)
                } else if i == 0 {
                    Expr::parse(&format!("1 + {eps}*sin(x1)"))?
                } else {
                    Expr::Const(1.0)
                });
            }
        }
        let bounds = MetricBounds {
            lambda: 1.0 / (1.0 - eps.abs()),
            lipschitz: eps.abs(),
        };
        Self::from_upper(dim, upper, bounds)
    }
}

impl MetricField for ExprMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Matrix {
        Matrix::from_row_major(self.dim, self.entries.iter().map(|e| e.eval(x)).collect())
    }

    fn grad_eval(&self, x: &[f64]) -> Option<Vec<Matrix>> {
        Some(
            self.derivs
                .iter()
                .map(|d| Matrix::from_row_major(self.dim, d.iter().map(|e| e.eval(x)).collect()))
                .collect(),
        )
    }

    fn bounds(&self) -> MetricBounds {
        self.bounds
    }
}

/// Everything the quadratic forms need from the metric at one point.
#[derive(Clone, Debug)]
pub struct MetricEval {
    pub g: Matrix,
    pub g_inv: Matrix,
    /// `dg[s] = ∂_s g_ij`.
    pub dg: Vec<Matrix>,
    /// `dg_inv[s] = ∂_s g^{ij} = -g^{-1} (∂_s g) g^{-1}`.
    pub dg_inv: Vec<Matrix>,
}

pub fn metric_eval(metric: &dyn MetricField, x: &[f64]) -> Result<MetricEval> {
    let n = metric.dim();
    if x.len() != n || x.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("point must be finite with metric dimension"));
    }
    let g = metric.eval(x);
    let g_inv = g
        .inverse_spd()
        .ok_or_else(|| Error::DegenerateMetric { at: x.to_vec() })?;
    let dg = match metric.grad_eval(x) {
        Some(d) => d,
        None => {
            let mut xp = x.to_vec();
            (0..n)
                .map(|s| {
                    xp[s] = x[s] + METRIC_FD_STEP;
                    let gp = metric.eval(&xp);
                    xp[s] = x[s] - METRIC_FD_STEP;
                    let gm = metric.eval(&xp);
                    xp[s] = x[s];
                    gp.sub(&gm).scaled(0.5 / METRIC_FD_STEP)
                })
                .collect()
        }
    };
    let dg_inv = dg
        .iter()
        .map(|d| g_inv.mul(d).mul(&g_inv).scaled(-1.0))
        .collect();
    Ok(MetricEval {
        g,
        g_inv,
        dg,
        dg_inv,
    })
}

/// `∇_g f = g⁻¹ ∇f`.
pub fn g_gradient(metric: &dyn MetricField, x: &[f64], euclid_grad: &[f64]) -> Result<Vec<f64>> {
    let g = metric.eval(x);
    let g_inv = g
        .inverse_spd()
        .ok_or_else(|| Error::DegenerateMetric { at: x.to_vec() })?;
    Ok(g_inv.mul_vec(euclid_grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub declared: MetricBounds,
    pub lambda_emp: f64,
    pub lipschitz_emp: f64,
    /// Smallest sampled `|∇φ|` when a weight was supplied.
    pub min_grad_phi: Option<f64>,
    pub worst_lambda_point: Vec<f64>,
    pub worst_lipschitz_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub worst_grad_point: Option<Vec<f64>>,
    pub pass_lambda: bool,
    pub pass_lipschitz: bool,
    /// `|∇φ| > 0` on every sample; `None` without a weight.
    pub pass_grad: Option<bool>,
    pub n_samples: usize,
    pub n_pairs: usize,
}

impl EllipticityReport {
    pub fn passed(&self) -> bool {
        self.pass_lambda && self.pass_lipschitz && self.pass_grad.unwrap_or(true)
    }
}

/// Empirical `λ` and `Λ` over samples, compared with the declared bounds.
pub fn validate_bounds(
    metric: &dyn MetricField,
    weight: Option<&dyn WeightFunction>,
    samples: &[Vec<f64>],
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<EllipticityReport> {
    if samples.is_empty() {
        return Err(Error::invalid("validate_bounds needs at least one sample"));
    }
    let mut lambda_emp = 0.0f64;
    let mut worst_lambda_point = samples[0].clone();
    for x in samples {
        let g = metric.eval(x);
        if !g.is_symmetric(1e-12) {
            return Err(Error::DegenerateMetric { at: x.clone() });
        }
        let eig = g.sym_eigen();
        let lo = eig.values[0];
        if !(lo > 0.0) {
            return Err(Error::DegenerateMetric { at: x.clone() });
        }
        let local = eig.values[eig.values.len() - 1].max(1.0 / lo);
        if local > lambda_emp {
            lambda_emp = local;
            worst_lambda_point = x.clone();
        }
    }

    let mut lipschitz_emp = 0.0f64;
    let mut worst_pair = None;
    for (x, y) in pairs {
        let d = math::dist(x, y);
        if d == 0.0 {
            continue;
        }
        let q = metric.eval(x).sub(&metric.eval(y)).sum_abs() / d;
        if q > lipschitz_emp {
            lipschitz_emp = q;
            worst_pair = Some((x.clone(), y.clone()));
        }
    }

    let (min_grad_phi, worst_grad_point) = match weight {
        Some(w) => {
            let b = weight_bounds(w, samples)?;
            (Some(b.m), Some(b.argmin))
        }
        None => (None, None),
    };

    let declared = metric.bounds();
    // A hair of slack so analytic extremes hit exactly by a sample still pass.
    let slack = 1e-12;
    Ok(EllipticityReport {
        declared,
        lambda_emp,
        lipschitz_emp,
        min_grad_phi,
        worst_lambda_point,
        worst_lipschitz_pair: worst_pair,
        worst_grad_point,
        pass_lambda: lambda_emp <= declared.lambda * (1.0 + slack),
        pass_lipschitz: lipschitz_emp <= declared.lipschitz * (1.0 + slack) + slack,
        pass_grad: min_grad_phi.map(|m| m > 0.0),
        n_samples: samples.len(),
        n_pairs: pairs.len(),
    })
}

pub trait WeightFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Symmetric matrix of second derivatives `∂²_{jk}φ`.
    fn hessian(&self, x: &[f64]) -> Matrix;

    /// `(φ / e^s, s)` with `φ / e^s` of order one near `x`, for weights whose
    /// values can leave the double range. `None` means `φ` is used as is.
    fn normalized_at(&self, _x: &[f64]) -> Option<(Arc<dyn WeightFunction>, f64)> {
        None
    }
}

impl<W: WeightFunction + ?Sized> WeightFunction for Arc<W> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (**self).gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> Matrix {
        (**self).hessian(x)
    }
    fn normalized_at(&self, x: &[f64]) -> Option<(Arc<dyn WeightFunction>, f64)> {
        (**self).normalized_at(x)
    }
}

impl<W: WeightFunction + ?Sized> WeightFunction for Box<W> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (**self).gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> Matrix {
        (**self).hessian(x)
    }
    fn normalized_at(&self, x: &[f64]) -> Option<(Arc<dyn WeightFunction>, f64)> {
        (**self).normalized_at(x)
    }
}

/// A weight (or `ψ`) given by an expression.
#[derive(Clone, Debug)]
pub struct ExprWeight {
    dim: usize,
    expr: Expr,
    grad: Vec<Expr>,
    hess: Vec<Expr>,
}

impl ExprWeight {
    pub fn new(dim: usize, expr: Expr) -> Result<Self> {
        if expr.arity() > dim {
            return Err(Error::invalid(format!(
                "weight '{expr}' references a coordinate beyond x{dim}"
            )));
        }
        let grad = expr.gradient(dim);
        let hess = (0..dim)
            .flat_map(|j| {
                let gj = grad[j].clone();
                (0..dim).map(move |k| gj.diff(k))
            })
            .collect();
        Ok(ExprWeight {
            dim,
            expr,
            grad,
            hess,
        })
    }

    pub fn parse(dim: usize, src: &str) -> Result<Self> {
        Self::new(dim, Expr::parse(src)?)
    }

    /// `ψ(x) = -|x|²`.
    pub fn neg_abs2(dim: usize) -> Self {
        let mut src = alloc::string::String::from("-(");
        for i in 0..dim {
            if i > 0 {
                src.push('+');
            }
            src.push_str(&format!("x{}^2", i + 1));
        }
        src.push(')');
        Self::parse(dim, &src).expect("generated expression parses")
    }

    /// `ψ(x) = ⟨d, x⟩`.
    pub fn linear(direction: &[f64]) -> Result<Self> {
        let dim = direction.len();
        if dim < 2 {
            return Err(Error::invalid("linear weight needs dimension >= 2"));
        }
        let mut e = Expr::Const(0.0);
        for (i, d) in direction.iter().enumerate() {
            e = Expr::Add(
                Box::new(e),
                Box::new(Expr::Mul(Box::new(Expr::Const(*d)), Box::new(Expr::Var(i)))),
            );
        }
        Self::new(dim, e)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

impl WeightFunction for ExprWeight {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|e| e.eval(x)).collect()
    }
    fn hessian(&self, x: &[f64]) -> Matrix {
        Matrix::from_row_major(self.dim, self.hess.iter().map(|e| e.eval(x)).collect()).symmetrized()
    }
}

/// `φ = e^{μψ}` with
/// `∂_jφ = μ ∂_jψ e^{μψ}` and `∂²_{jk}φ = (μ ∂²_{jk}ψ + μ² ∂_jψ ∂_kψ) e^{μψ}`.
#[derive(Clone)]
pub struct ExpWeight {
    pub psi: Arc<dyn WeightFunction>,
    pub mu: f64,
}

impl ExpWeight {
    pub fn new(psi: Arc<dyn WeightFunction>, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid("mu must be positive and finite"));
        }
        Ok(ExpWeight { psi, mu })
    }
}

impl WeightFunction for ExpWeight {
    fn dim(&self) -> usize {
        self.psi.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        math::exp(self.mu * self.psi.value(x))
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let e = self.value(x);
        self.psi.gradient(x).iter().map(|d| self.mu * d * e).collect()
    }
    fn hessian(&self, x: &[f64]) -> Matrix {
        let e = self.value(x);
        let dpsi = self.psi.gradient(x);
        let hpsi = self.psi.hessian(x);
        let mu = self.mu;
        Matrix::from_fn(self.dim(), |j, k| (mu * hpsi[(j, k)] + mu * mu * dpsi[j] * dpsi[k]) * e)
    }

    /// `e^{μ(ψ − ψ(x))}` and `s = μψ(x)`.
    fn normalized_at(&self, x: &[f64]) -> Option<(Arc<dyn WeightFunction>, f64)> {
        let p = self.psi.value(x);
        let shifted = ShiftedWeight {
            inner: self.psi.clone(),
            shift: -p,
        };
        Some((Arc::new(ExpWeight::new(Arc::new(shifted), self.mu).ok()?), self.mu * p))
    }
}

/// `φ + c`; used to check that ratios do not depend on additive constants.
#[derive(Clone)]
pub struct ShiftedWeight {
    pub inner: Arc<dyn WeightFunction>,
    pub shift: f64,
}

impl WeightFunction for ShiftedWeight {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) + self.shift
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.inner.gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> Matrix {
        self.inner.hessian(x)
    }
}

/// Sampled `m = min |∇φ|` and `M = ‖φ‖_{C²}` (max over samples of
/// `max(|φ|, max_i |∂_iφ|, max_jk |∂²_jkφ|)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    pub m: f64,
    pub big_m: f64,
    pub argmin: Vec<f64>,
    /// Set when some sample has `∇φ = 0`.
    pub zero_gradient: bool,
}

pub fn weight_bounds(phi: &dyn WeightFunction, samples: &[Vec<f64>]) -> Result<WeightBounds> {
    if samples.is_empty() {
        return Err(Error::invalid("weight_bounds needs at least one sample"));
    }
    let mut m = f64::INFINITY;
    let mut argmin = samples[0].clone();
    let mut big_m = 0.0f64;
    for x in samples {
        let grad = phi.gradient(x);
        let gn = math::norm(&grad);
        if gn < m {
            m = gn;
            argmin = x.clone();
        }
        let c2 = phi
            .value(x)
            .abs()
            .max(grad.iter().fold(0.0f64, |a, b| a.max(b.abs())))
            .max(phi.hessian(x).max_abs());
        big_m = big_m.max(c2);
    }
    Ok(WeightBounds {
        m,
        big_m,
        argmin,
        zero_gradient: m == 0.0,
    })
}

/// A weight together with its sampled bounds.
#[derive(Clone)]
pub struct BoundedWeight {
    pub weight: Arc<dyn WeightFunction>,
    pub bounds: WeightBounds,
}

/// Ingredients of `φ = e^{μψ}`: `min |∇_g ψ| ≥ m₀`, `‖ψ‖_{C²} ≤ M₀` (both
/// sampled) and `Φ₀ = min ψ`.
#[derive(Clone)]
pub struct WeightRecipe {
    pub psi: Arc<dyn WeightFunction>,
    pub mu: f64,
    pub m0: f64,
    pub big_m0: f64,
    pub phi0: f64,
}

impl WeightRecipe {
    pub fn sampled(
        psi: Arc<dyn WeightFunction>,
        mu: f64,
        metric: &dyn MetricField,
        samples: &[Vec<f64>],
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("recipe needs samples"));
        }
        let mut m0 = f64::INFINITY;
        let mut phi0 = f64::INFINITY;
        for x in samples {
            let grad = psi.gradient(x);
            let g_inv = metric
                .eval(x)
                .inverse_spd()
                .ok_or_else(|| Error::DegenerateMetric { at: x.clone() })?;
            // |∇_g ψ|_g² = ∇ψ · g⁻¹ ∇ψ
            m0 = m0.min(sqrt(g_inv.bilinear(&grad, &grad)));
            phi0 = phi0.min(psi.value(x));
        }
        let big_m0 = weight_bounds(psi.as_ref(), samples)?.big_m;
        Ok(WeightRecipe {
            psi,
            mu,
            m0,
            big_m0,
            phi0,
        })
    }
}

/// Builds `φ = e^{μψ}` and samples its bounds.
pub fn exp_weight(recipe: &WeightRecipe, samples: &[Vec<f64>]) -> Result<BoundedWeight> {
    let w = ExpWeight::new(recipe.psi.clone(), recipe.mu)?;
    for x in samples {
        if recipe.psi.gradient(x).iter().all(|d| *d == 0.0) {
            return Err(Error::ZeroGradient { at: x.clone() });
        }
    }
    let bounds = weight_bounds(&w, samples)?;
    Ok(BoundedWeight {
        weight: Arc::new(w),
        bounds,
    })
}

/// Sample point generators.
pub mod samples {
    use super::*;
    use core::f64::consts::PI;

    /// Points on `n_radial` shells `r_in..=r_out` (endpoints included). In 2D
    /// each shell carries `n_angular` equally spaced angles; in 3D a
    /// Fibonacci lattice of `n_angular` points.
    pub fn annulus(dim: usize, r_in: f64, r_out: f64, n_radial: usize, n_angular: usize) -> Vec<Vec<f64>> {
        assert!(dim == 2 || dim == 3, "annulus samples support dim 2 or 3");
        assert!(n_radial >= 1 && n_angular >= 1);
        let mut out = Vec::with_capacity(n_radial * n_angular);
        for i in 0..n_radial {
            let r = if n_radial == 1 {
                r_in
            } else {
                r_in + (r_out - r_in) * i as f64 / (n_radial - 1) as f64
            };
            for k in 0..n_angular {
                if dim == 2 {
                    let t = 2.0 * PI * k as f64 / n_angular as f64;
                    out.push(vec![r * math::cos(t), r * math::sin(t)]);
                } else {
                    let golden = PI * (3.0 - sqrt(5.0));
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n_angular as f64;
                    let rho = sqrt(1.0 - z * z);
                    let t = golden * k as f64;
                    out.push(vec![r * rho * math::cos(t), r * rho * math::sin(t), r * z]);
                }
            }
        }
        out
    }

    /// Tensor grid of `n` points per axis on `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
        assert!(n >= 2);
        let total = n.pow(dim as u32);
        (0..total)
            .map(|mut idx| {
                let mut x = vec![0.0; dim];
                for d in (0..dim).rev() {
                    x[d] = lo + (hi - lo) * (idx % n) as f64 / (n - 1) as f64;
                    idx /= n;
                }
                x
            })
            .collect()
    }

    /// All pairs of distinct samples closer than `max_dist`.
    pub fn neighbour_pairs(points: &[Vec<f64>], max_dist: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = math::dist(&points[i], &points[j]);
                if d > 0.0 && d <= max_dist {
                    out.push((points[i].clone(), points[j].clone()));
                }
            }
        }
        out
    }
}
