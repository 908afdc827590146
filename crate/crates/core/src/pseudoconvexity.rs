//! The quadratic forms `q(x, ϑ)` and `Q(x, ξ, τ)` of a weight `φ` under a
//! metric `g`, certification of the strong pseudoconvexity condition, the
//! `μ` threshold of `φ = e^{μψ}`, and the pointwise quantities used when the
//! condition is turned into a positive quadratic form in `(X, Y, Z)`.
//!
//! Pseudoconvexity is checked in its reduced form: for every sample `x` and
//! every g-unit `t` that is g-orthogonal to `N_g = ∇_gφ / |∇_gφ|`,
//!
//! ```text
//! q(x, t) + q(x, N_g) ≥ 2 c0.
//! ```
//!
//! By degree-2 homogeneity of `q` this is equivalent to the condition on the
//! characteristic set `P(x, ξ + iτ∇φ) = 0`. The minimum over `t` is the
//! smallest eigenvalue of `q` restricted to a g-orthonormal basis of the
//! tangent space, so no direction sampling is involved.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fields::{metric_eval, ExpWeight, MetricEval, MetricField, WeightFunction};
use crate::linalg::Matrix;
use crate::math::{self, sqrt};
use crate::{Error, Result};

pub const CERTIFICATE_VERSION: u32 = 1;

/// Metric and weight data at one point, shared by all forms.
#[derive(Clone, Debug)]
pub struct PointFrame {
    pub x: Vec<f64>,
    pub metric: MetricEval,
    pub grad_phi: Vec<f64>,
    pub hess_phi: Matrix,
    /// `∇_gφ = g⁻¹∇φ`.
    pub grad_g_phi: Vec<f64>,
    /// `|∇_gφ|_g`.
    pub norm_g_phi: f64,
    q_matrix: Matrix,
}

impl PointFrame {
    pub fn new(metric: &dyn MetricField, phi: &dyn WeightFunction, x: &[f64]) -> Result<Self> {
        let m = metric_eval(metric, x)?;
        let grad_phi = phi.gradient(x);
        let hess_phi = phi.hessian(x);
        let w = m.g_inv.mul_vec(&grad_phi);
        let norm_g_phi = sqrt(math::dot(&w, &grad_phi).max(0.0));
        let q_matrix = q_matrix(&m, &hess_phi, &w);
        Ok(PointFrame {
            x: x.to_vec(),
            metric: m,
            grad_phi,
            hess_phi,
            grad_g_phi: w,
            norm_g_phi,
            q_matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `⟨a, b⟩ = g_ij a_i b_j`.
    pub fn g_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.metric.g.bilinear(a, b)
    }

    pub fn g_norm(&self, a: &[f64]) -> f64 {
        sqrt(self.g_inner(a, a).max(0.0))
    }

    /// `N_g = ∇_gφ / |∇_gφ|`.
    pub fn normal(&self) -> Result<Vec<f64>> {
        if !(self.norm_g_phi > 0.0) {
            return Err(Error::ZeroGradient { at: self.x.clone() });
        }
        Ok(self.grad_g_phi.iter().map(|a| a / self.norm_g_phi).collect())
    }

    /// Symmetric matrix of `q(x, ·)`.
    pub fn q_matrix(&self) -> &Matrix {
        &self.q_matrix
    }

    pub fn q(&self, theta: &[f64]) -> f64 {
        self.q_matrix.bilinear(theta, theta)
    }

    /// `Δ_gφ = g^{ij}∂²_{ij}φ + (∂_i g^{ij}) ∂_jφ`.
    pub fn laplace_phi(&self) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.metric.g_inv[(i, j)] * self.hess_phi[(i, j)]
                    + self.metric.dg_inv[i][(i, j)] * self.grad_phi[j];
            }
        }
        acc
    }

    /// g-orthonormal basis of `{t : ⟨t, N_g⟩ = 0}` by Gram–Schmidt in the g
    /// inner product, seeded with `N_g` followed by the coordinate axes.
    pub fn tangent_basis(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.dim();
        if n < 2 {
            return Err(Error::invalid("tangent space is empty in dimension 1"));
        }
        let normal = self.normal()?;
        let mut basis: Vec<Vec<f64>> = vec![normal];
        for axis in 0..n {
            if basis.len() == n {
                break;
            }
            let mut v = vec![0.0; n];
            v[axis] = 1.0;
            for _pass in 0..2 {
                for b in &basis {
                    let c = self.g_inner(&v, b);
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= c * bi;
                    }
                }
            }
            let len = self.g_norm(&v);
            if len > 1e-8 {
                basis.push(v.iter().map(|a| a / len).collect());
            }
        }
        if basis.len() != n {
            return Err(Error::invalid("could not complete tangent basis"));
        }
        basis.remove(0);
        Ok(basis)
    }

    /// Projects `v` onto the g-orthogonal complement of `N_g`.
    pub fn tangential_part(&self, v: &[f64]) -> Result<Vec<f64>> {
        let nrm = self.normal()?;
        let c = self.g_inner(v, &nrm);
        Ok(v.iter().zip(&nrm).map(|(a, b)| a - c * b).collect())
    }
}

fn q_matrix(m: &MetricEval, hess: &Matrix, w: &[f64]) -> Matrix {
    let n = w.len();
    // -4 (∂_s g_kh) w_k ϑ_h ϑ_s  ->  A[h][s] = Σ_k w_k ∂_s g_kh
    let a = Matrix::from_fn(n, |h, s| (0..n).map(|k| w[k] * m.dg[s][(k, h)]).sum());
    // 2 (∂_s g_tw) w_s ϑ_t ϑ_w  ->  C = Σ_s w_s ∂_s g
    let c = Matrix::from_fn(n, |t, u| (0..n).map(|s| w[s] * m.dg[s][(t, u)]).sum());
    hess.scaled(4.0)
        .sub(&a.add(&a.transpose()).scaled(2.0))
        .add(&c.scaled(2.0))
        .symmetrized()
}

/// `N_g` at `x`.
pub fn normal_direction(metric: &dyn MetricField, phi: &dyn WeightFunction, x: &[f64]) -> Result<Vec<f64>> {
    PointFrame::new(metric, phi, x)?.normal()
}

/// `q(x, ϑ) = 4 ∂²_{jk}φ ϑ_jϑ_k − 4 (∂_s g_kh)(∇_gφ)_k ϑ_h ϑ_s
///           + 2 (∂_s g_tw)(∇_gφ)_s ϑ_t ϑ_w`, summed term by term.
pub fn q_form(metric: &dyn MetricField, phi: &dyn WeightFunction, x: &[f64], theta: &[f64]) -> Result<f64> {
    let f = PointFrame::new(metric, phi, x)?;
    let n = f.dim();
    let w = &f.grad_g_phi;
    let dg = &f.metric.dg;
    let mut acc = 4.0 * f.hess_phi.bilinear(theta, theta);
    for s in 0..n {
        for k in 0..n {
            for h in 0..n {
                acc -= 4.0 * dg[s][(k, h)] * w[k] * theta[h] * theta[s];
                acc += 2.0 * dg[s][(k, h)] * w[s] * theta[k] * theta[h];
            }
        }
    }
    Ok(acc)
}

/// `Q(x, ξ, τ)` in its explicit polynomial form, with `ξ^{(g)} = g⁻¹ξ`;
/// defined for every real `τ`, including 0.
#[allow(non_snake_case)]
pub fn Q_form(metric: &dyn MetricField, phi: &dyn WeightFunction, x: &[f64], xi: &[f64], tau: f64) -> Result<f64> {
    let f = PointFrame::new(metric, phi, x)?;
    Ok(big_q(&f, xi, tau))
}

fn big_q(f: &PointFrame, xi: &[f64], tau: f64) -> f64 {
    let n = f.dim();
    let xg = f.metric.g_inv.mul_vec(xi);
    let w = &f.grad_g_phi;
    let dg = &f.metric.dg;
    let t2 = tau * tau;
    let mut acc = 4.0 * (f.hess_phi.bilinear(&xg, &xg) + t2 * f.hess_phi.bilinear(w, w));
    for s in 0..n {
        for k in 0..n {
            for h in 0..n {
                let d = dg[s][(k, h)];
                acc -= 4.0 * d * w[k] * xg[h] * xg[s];
                acc += 2.0 * d * xg[k] * xg[h] * w[s];
                acc -= 2.0 * t2 * d * w[k] * w[h] * w[s];
            }
        }
    }
    acc
}

/// Principal symbol `P(x, ξ + iτ∇φ) = |ξ^{(g)}|² − τ²|∇_gφ|² + 2iτ⟨ξ^{(g)}, ∇_gφ⟩`.
pub fn symbol(metric: &dyn MetricField, phi: &dyn WeightFunction, x: &[f64], xi: &[f64], tau: f64) -> Result<Complex64> {
    let m = metric_eval(metric, x)?;
    let grad = phi.gradient(x);
    let re = m.g_inv.bilinear(xi, xi) - tau * tau * m.g_inv.bilinear(&grad, &grad);
    let im = 2.0 * tau * m.g_inv.bilinear(xi, &grad);
    Ok(Complex64::new(re, im))
}

/// Minimum of `q(x, t)` over g-unit tangents, with its minimiser.
pub fn tangent_min(frame: &PointFrame) -> Result<(f64, Vec<f64>)> {
    let basis = frame.tangent_basis()?;
    let k = basis.len();
    let qm = frame.q_matrix();
    let restricted = Matrix::from_fn(k, |a, b| qm.bilinear(&basis[a], &basis[b]));
    let eig = restricted.sym_eigen();
    let coeffs = &eig.vectors[0];
    let n = frame.dim();
    let mut t = vec![0.0; n];
    for (c, b) in coeffs.iter().zip(&basis) {
        for i in 0..n {
            t[i] += c * b[i];
        }
    }
    // Re-evaluate so the witness reproduces the value exactly.
    Ok((frame.q(&t), t))
}

/// Pseudoconvexity data at one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCertificate {
    pub x: Vec<f64>,
    /// `½ (min_t q(x, t) + q(x, N_g))`.
    pub c0: f64,
    pub tangent: Vec<f64>,
    pub q_normal: f64,
    pub tangent_min: f64,
    /// `c0 = c0_scaled · e^{log_scale}`; `c0_scaled` keeps the sign and
    /// magnitude when `c0` itself under- or overflows.
    pub c0_scaled: f64,
    pub log_scale: f64,
}

impl PointCertificate {
    /// `ln |c0|`, finite whenever `c0_scaled ≠ 0`.
    pub fn ln_abs_c0(&self) -> f64 {
        math::ln(self.c0_scaled.abs()) + self.log_scale
    }

    /// Strict order on the true `c0`, exact in sign even when `c0` is not
    /// representable.
    pub fn below(&self, other: &PointCertificate) -> bool {
        let (sa, sb) = (sign(self.c0_scaled), sign(other.c0_scaled));
        if sa != sb {
            return sa < sb;
        }
        match sa {
            0 => false,
            s if s > 0 => self.ln_abs_c0() < other.ln_abs_c0(),
            _ => self.ln_abs_c0() > other.ln_abs_c0(),
        }
    }

    /// `c0 > margin`, decided on the scaled value.
    pub fn exceeds(&self, margin: f64) -> bool {
        if margin == 0.0 {
            self.c0_scaled > 0.0
        } else {
            self.c0_scaled > 0.0 && self.ln_abs_c0() > math::ln(margin)
        }
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Weights that provide [`WeightFunction::normalized_at`] are evaluated in
/// normalised form; `q` is linear in `φ`, so the sign of `c0` is unaffected.
pub fn pointwise(metric: &dyn MetricField, phi: &dyn WeightFunction, x: &[f64]) -> Result<PointCertificate> {
    let (local, log_scale) = match phi.normalized_at(x) {
        Some((w, s)) => (Some(w), s),
        None => (None, 0.0),
    };
    let f = PointFrame::new(metric, local.as_deref().unwrap_or(phi), x)?;
    let normal = f.normal()?;
    let q_normal = f.q(&normal);
    let (tmin, tangent) = tangent_min(&f)?;
    let c0_scaled = 0.5 * (tmin + q_normal);
    let scale = math::exp(log_scale);
    Ok(PointCertificate {
        x: x.to_vec(),
        c0: c0_scaled * scale,
        tangent,
        q_normal: q_normal * scale,
        tangent_min: tmin * scale,
        c0_scaled,
        log_scale,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoconvexityCertificate {
    pub version: u32,
    pub c0: f64,
    /// `log10 |c0|`, meaningful when `c0` underflows.
    pub c0_log10: f64,
    pub argmin_point: Vec<f64>,
    pub argmin_tangent: Vec<f64>,
    pub n_samples: usize,
    /// Dimension of the tangent eigenproblem solved exactly at each sample.
    pub tangent_resolution: usize,
    pub margin: f64,
    pub passed: bool,
    pub failure: Option<String>,
}

impl PseudoconvexityCertificate {
    /// Reduces pointwise results in sample order. Ties keep the first
    /// minimiser, so the outcome does not depend on how the points were
    /// computed.
    pub fn reduce<I>(dim: usize, points: I, margin: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<f64>, Result<PointCertificate>)>,
    {
        let mut best: Option<PointCertificate> = None;
        let mut n = 0usize;
        for (x, res) in points {
            n += 1;
            match res {
                Ok(p) => {
                    if best.as_ref().map_or(true, |b| p.below(b)) {
                        best = Some(p);
                    }
                }
                Err(Error::ZeroGradient { .. }) => {
                    return Ok(PseudoconvexityCertificate {
                        version: CERTIFICATE_VERSION,
                        c0: f64::NEG_INFINITY,
                        c0_log10: f64::INFINITY,
                        argmin_point: x.clone(),
                        argmin_tangent: vec![0.0; dim],
                        n_samples: 0,
                        tangent_resolution: dim.saturating_sub(1),
                        margin,
                        passed: false,
                        failure: Some(format!("weight gradient vanishes at {x:?}")),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let best = best.ok_or_else(|| Error::invalid("certify needs at least one sample"))?;
        let passed = best.exceeds(margin);
        Ok(PseudoconvexityCertificate {
            version: CERTIFICATE_VERSION,
            c0: best.c0,
            c0_log10: best.ln_abs_c0() / core::f64::consts::LN_10,
            argmin_point: best.x,
            argmin_tangent: best.tangent,
            n_samples: n,
            tangent_resolution: dim.saturating_sub(1),
            margin,
            passed,
            failure: (!passed).then(|| format!("c0 = {:.6e} does not exceed margin {margin}", best.c0)),
        })
    }
}

/// `c0 = min over samples of ½(min_t q(x,t) + q(x,N_g))`; passes iff
/// `c0 > margin`. A vanishing gradient fails the certificate rather than
/// erroring.
pub fn certify(
    metric: &dyn MetricField,
    phi: &dyn WeightFunction,
    samples: &[Vec<f64>],
    margin: f64,
) -> Result<PseudoconvexityCertificate> {
    if samples.is_empty() {
        return Err(Error::invalid("certify needs at least one sample"));
    }
    if margin < 0.0 {
        return Err(Error::invalid("margin must be non-negative"));
    }
    PseudoconvexityCertificate::reduce(
        metric.dim(),
        samples.iter().map(|x| (x.clone(), pointwise(metric, phi, x))),
        margin,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckReport {
    pub draws: usize,
    pub violations: usize,
    /// Smallest `Q − c0(|ξ^{(g)}|² + τ²|∇_gφ|²)` seen.
    pub min_slack: f64,
    pub worst_point: Vec<f64>,
    pub seed: u64,
}

/// Absolute slack allowed below `c0(|ξ^{(g)}|² + τ²|∇_gφ|²)`.
pub const CROSS_CHECK_SLACK: f64 = 1e-9;

/// Draws random characteristic directions (`ξ^{(g)}` g-orthogonal to `∇_gφ`
/// with `|ξ^{(g)}| = |τ||∇_gφ|`, `τ ≠ 0`) at random samples and checks
/// `Q(x, ξ, τ) ≥ c0 (|ξ^{(g)}|² + τ²|∇_gφ|²)` against the full form.
pub fn characteristic_cross_check(
    metric: &dyn MetricField,
    phi: &dyn WeightFunction,
    certificate: &PseudoconvexityCertificate,
    samples: &[Vec<f64>],
    n_random: usize,
    seed: u64,
) -> Result<CrossCheckReport> {
    if !(certificate.c0 > 0.0) {
        return Err(Error::invalid("cross-check needs a certificate with c0 > 0"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("cross-check needs samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames: Vec<Option<(PointFrame, Vec<Vec<f64>>)>> = vec![None; samples.len()];
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    let mut worst_point = samples[0].clone();
    for _ in 0..n_random {
        let i = rng.random_range(0..samples.len());
        if frames[i].is_none() {
            let f = PointFrame::new(metric, phi, &samples[i])?;
            let basis = f.tangent_basis()?;
            frames[i] = Some((f, basis));
        }
        let (f, basis) = frames[i].as_ref().expect("frame cached above");
        let n = f.dim();
        let mut t = vec![0.0; n];
        loop {
            let coeffs: Vec<f64> = basis.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = math::norm(&coeffs);
            if norm < 1e-3 {
                continue;
            }
            for (c, b) in coeffs.iter().zip(basis) {
                for k in 0..n {
                    t[k] += c / norm * b[k];
                }
            }
            break;
        }
        let magnitude: f64 = rng.random_range(0.1..10.0);
        let tau = if rng.random::<bool>() { magnitude } else { -magnitude };
        let scale = tau.abs() * f.norm_g_phi;
        let xi_g: Vec<f64> = t.iter().map(|a| a * scale).collect();
        let xi = f.metric.g.mul_vec(&xi_g);
        let lhs = big_q(f, &xi, tau);
        let rhs = certificate.c0 * (f.g_inner(&xi_g, &xi_g) + tau * tau * f.norm_g_phi * f.norm_g_phi);
        let slack = lhs - rhs;
        if slack < -CROSS_CHECK_SLACK {
            violations += 1;
        }
        if slack < min_slack {
            min_slack = slack;
            worst_point = samples[i].clone();
        }
    }
    Ok(CrossCheckReport {
        draws: n_random,
        violations,
        min_slack,
        worst_point,
        seed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuSearch {
    pub mu_min: f64,
    pub certificate: PseudoconvexityCertificate,
    /// `(μ, c0)` for every probe in evaluation order.
    pub trace: Vec<(f64, f64)>,
}

pub const MU_BISECTION_STEPS: usize = 30;

/// Smallest `μ ≤ mu_max` for which `e^{μψ}` certifies, found by doubling
/// from `μ = 1` and then bisecting the last bracket.
pub fn mu_search(
    metric: &dyn MetricField,
    psi: Arc<dyn WeightFunction>,
    samples: &[Vec<f64>],
    mu_max: f64,
    margin: f64,
) -> Result<MuSearch> {
    mu_search_with(psi, mu_max, |w| certify(metric, w, samples, margin))
}

/// [`mu_search`] with a caller-supplied certifier (e.g. a parallel one).
pub fn mu_search_with<F>(psi: Arc<dyn WeightFunction>, mu_max: f64, mut certify_at: F) -> Result<MuSearch>
where
    F: FnMut(&ExpWeight) -> Result<PseudoconvexityCertificate>,
{
    if !(mu_max > 0.0) {
        return Err(Error::invalid("mu_max must be positive"));
    }
    let mut trace = Vec::new();
    let mut probe = |mu: f64, trace: &mut Vec<(f64, f64)>| -> Result<PseudoconvexityCertificate> {
        let w = ExpWeight::new(psi.clone(), mu)?;
        let cert = certify_at(&w)?;
        trace.push((mu, cert.c0));
        Ok(cert)
    };

    let mut lo: Option<f64> = None;
    let mut mu = 1.0f64.min(mu_max);
    let (mut hi, mut hi_cert) = loop {
        let cert = probe(mu, &mut trace)?;
        if cert.passed {
            break (mu, cert);
        }
        lo = Some(mu);
        if mu >= mu_max {
            return Err(Error::SearchExhausted { mu_max, trace });
        }
        mu = (2.0 * mu).min(mu_max);
    };

    if let Some(mut lo) = lo {
        for _ in 0..MU_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            let cert = probe(mid, &mut trace)?;
            if cert.passed {
                hi = mid;
                hi_cert = cert;
            } else {
                lo = mid;
            }
        }
    }
    Ok(MuSearch {
        mu_min: hi,
        certificate: hi_cert,
        trace,
    })
}

/// `α̃(x)` pinned so that `q(x, N_g) + 2α̃ = 3c0/8`, the middle of
/// `[c0/4, c0/2]`, and `γ = α̃ − Δ_gφ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    pub alpha_tilde: f64,
    pub gamma: f64,
    pub q_normal: f64,
}

pub fn alpha_select(certificate: &PseudoconvexityCertificate, frame: &PointFrame) -> Result<AlphaEntry> {
    if !(certificate.c0 > 0.0) {
        return Err(Error::invalid("alpha selection needs c0 > 0"));
    }
    let q_normal = frame.q(&frame.normal()?);
    let alpha_tilde = 0.5 * (0.375 * certificate.c0 - q_normal);
    Ok(AlphaEntry {
        alpha_tilde,
        gamma: alpha_tilde - frame.laplace_phi(),
        q_normal,
    })
}

/// `α̃` and `γ` over a sample set with the empirical Lipschitz seminorm of `α̃`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub points: Vec<Vec<f64>>,
    pub entries: Vec<AlphaEntry>,
    pub c2_emp: f64,
}

pub fn alpha_selection(
    certificate: &PseudoconvexityCertificate,
    metric: &dyn MetricField,
    phi: &dyn WeightFunction,
    samples: &[Vec<f64>],
    pair_radius: f64,
) -> Result<AlphaSelection> {
    let entries = samples
        .iter()
        .map(|x| alpha_select(certificate, &PointFrame::new(metric, phi, x)?))
        .collect::<Result<Vec<_>>>()?;
    let mut c2 = 0.0f64;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let d = math::dist(&samples[i], &samples[j]);
            if d > 0.0 && d <= pair_radius {
                c2 = c2.max((entries[i].alpha_tilde - entries[j].alpha_tilde).abs() / d);
            }
        }
    }
    Ok(AlphaSelection {
        points: samples.to_vec(),
        entries,
        c2_emp: c2,
    })
}

/// `sup |q_matrix·N_g · T|` over g-unit tangents `T`: the constant bounding
/// the cross term `2 q_hl N_h T_l ⟨∇_g v, N_g⟩ ≥ −2 C1 X Y` at `x`.
pub fn cross_term_constant(frame: &PointFrame) -> Result<f64> {
    let v = frame.q_matrix().mul_vec(&frame.normal()?);
    let basis = frame.tangent_basis()?;
    Ok(sqrt(basis.iter().map(|t| math::powi(math::dot(&v, t), 2)).sum()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinorReport {
    pub tau: f64,
    /// Row-major 3×3 matrix of the form `F_α(X, Y, Z)`.
    pub m_matrix: [[f64; 3]; 3],
    /// Leading principal minors of orders 1, 2, 3.
    pub minors: [f64; 3],
    pub c1: f64,
    /// `c0² m² / (2λ)`.
    pub det_lower: f64,
    /// Smallest `τ` on the geometric grid with `det M ≥ det_lower`.
    pub tau1_emp: f64,
}

/// Geometric grid `2^{k/4}` searched for `τ1`.
fn tau_grid() -> impl Iterator<Item = f64> {
    (-40..=240).map(|k| math::pow(2.0, k as f64 / 4.0))
}

fn form_matrix(c0: f64, c1: f64, frame: &PointFrame, alpha: &AlphaEntry, tau: f64) -> [[f64; 3]; 3] {
    let s = alpha.q_normal + 2.0 * alpha.alpha_tilde;
    let w2 = frame.norm_g_phi * frame.norm_g_phi;
    [
        [4.0 * tau * w2 + alpha.q_normal - 2.0 * alpha.alpha_tilde, -c1, 0.0],
        [-c1, c0 - s, 0.0],
        [0.0, 0.0, s],
    ]
}

fn leading_minors(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let m1 = m[0][0];
    let m2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let m3 = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    [m1, m2, m3]
}

/// The matrix of `F_α̃` at `x` and `τ`, its minors, and the pointwise `τ1`.
/// `m` is the weight's gradient bound and `lambda` the ellipticity constant.
#[allow(clippy::too_many_arguments)]
pub fn minor_report(
    certificate: &PseudoconvexityCertificate,
    frame: &PointFrame,
    tau: f64,
    c1: f64,
    m: f64,
    lambda: f64,
) -> Result<MinorReport> {
    let alpha = alpha_select(certificate, frame)?;
    let c0 = certificate.c0;
    let mm = form_matrix(c0, c1, frame, &alpha, tau);
    let det_lower = c0 * c0 * m * m / (2.0 * lambda);
    let tau1_emp = tau_grid()
        .find(|t| leading_minors(&form_matrix(c0, c1, frame, &alpha, *t))[2] >= det_lower)
        .unwrap_or(f64::INFINITY);
    Ok(MinorReport {
        tau,
        m_matrix: mm,
        minors: leading_minors(&mm),
        c1,
        det_lower,
        tau1_emp,
    })
}

/// Sample-wide `C1` and `τ1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinorSurvey {
    pub c1_emp: f64,
    pub tau1_emp: f64,
    pub det_lower: f64,
    pub worst_point: Vec<f64>,
}

pub fn minor_survey(
    certificate: &PseudoconvexityCertificate,
    metric: &dyn MetricField,
    phi: &dyn WeightFunction,
    samples: &[Vec<f64>],
    m: f64,
    lambda: f64,
) -> Result<MinorSurvey> {
    let frames = samples
        .iter()
        .map(|x| PointFrame::new(metric, phi, x))
        .collect::<Result<Vec<_>>>()?;
    let mut c1 = 0.0f64;
    for f in &frames {
        c1 = c1.max(cross_term_constant(f)?);
    }
    let mut tau1 = 0.0f64;
    let mut worst = samples.first().cloned().unwrap_or_default();
    let mut det_lower = 0.0;
    for f in &frames {
        let r = minor_report(certificate, f, 1.0, c1, m, lambda)?;
        det_lower = r.det_lower;
        if r.tau1_emp > tau1 {
            tau1 = r.tau1_emp;
            worst = f.x.clone();
        }
    }
    Ok(MinorSurvey {
        c1_emp: c1,
        tau1_emp: tau1,
        det_lower,
        worst_point: worst,
    })
}

/// `X = |⟨∇_g v, N_g⟩|`, `Y = |T_g|`, `Z = τ|∇_gφ| v` with
/// `T_g = ∇_g v − ⟨∇_g v, N_g⟩ N_g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProofDiagnostics {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t_g: Vec<f64>,
}

pub fn tangential_split(frame: &PointFrame, grad_v: &[f64], tau: f64, v_val: f64) -> Result<ProofDiagnostics> {
    let gv = frame.metric.g_inv.mul_vec(grad_v);
    let nrm = frame.normal()?;
    let normal_part = frame.g_inner(&gv, &nrm);
    let t_g: Vec<f64> = gv.iter().zip(&nrm).map(|(a, b)| a - normal_part * b).collect();
    Ok(ProofDiagnostics {
        x: normal_part.abs(),
        y: frame.g_norm(&t_g),
        z: tau * frame.norm_g_phi * v_val,
        t_g,
    })
}
