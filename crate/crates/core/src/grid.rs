//! Cartesian grids on `[-L, L]ⁿ` with ball or annulus masks, masked
//! quadrature, the face-flux Laplace–Beltrami operator, centered gradients,
//! radial cutoffs and compactly supported bump fields.
//!
//! Node `(i_1, …, i_n)` sits at `x_d = −L + i_d h`, `h = 2L/(N−1)`, and is
//! stored row-major with the last axis fastest. Nodes on the outer faces of
//! the box ("edge nodes") have no full stencil; operators return 0 there.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fields::{metric_eval, MetricField};
use crate::math::{self, sqrt};
use crate::{Error, Result};

pub const MIN_POINTS_PER_AXIS: usize = 16;
/// Width, in cells, of the zero band kept inside the mask boundary by
/// compactly supported fields.
pub const COLLAR_CELLS: f64 = 2.0;
/// Cells across the inner hole of an annulus mask (`2 r_in / h`).
pub const MIN_HOLE_CELLS: f64 = 8.0;

/// Radial region centred at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        let r = math::norm(x);
        match *self {
            Region::Ball { radius } => r < radius,
            Region::Annulus { inner, outer } => inner < r && r < outer,
        }
    }

    pub fn outer(&self) -> f64 {
        match *self {
            Region::Ball { radius } => radius,
            Region::Annulus { outer, .. } => outer,
        }
    }

    pub fn inner(&self) -> f64 {
        match *self {
            Region::Ball { .. } => 0.0,
            Region::Annulus { inner, .. } => inner,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Region::Ball { radius } => radius > 0.0 && radius.is_finite(),
            Region::Annulus { inner, outer } => 0.0 < inner && inner < outer && outer.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("region radii must satisfy 0 < inner < outer"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    pub dim: usize,
    pub half_extent: f64,
    pub points_per_axis: usize,
    pub h: f64,
    pub mask: Region,
    #[serde(skip)]
    weights: Vec<f64>,
}

impl GridDomain {
    pub fn new(dim: usize, half_extent: f64, points_per_axis: usize, mask: Region) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::invalid("grids are 2- or 3-dimensional"));
        }
        if points_per_axis < MIN_POINTS_PER_AXIS {
            return Err(Error::invalid(alloc::format!(
                "need at least {MIN_POINTS_PER_AXIS} points per axis, got {points_per_axis}"
            )));
        }
        if !(half_extent > 0.0) || !half_extent.is_finite() {
            return Err(Error::invalid("half extent must be positive"));
        }
        mask.validate()?;
        let h = 2.0 * half_extent / (points_per_axis - 1) as f64;
        if mask.outer() > half_extent * (1.0 + 1e-12) {
            return Err(Error::invalid(alloc::format!(
                "mask radius {} exceeds grid half extent {half_extent}",
                mask.outer()
            )));
        }
        if let Region::Annulus { inner, .. } = mask {
            if 2.0 * inner / h < MIN_HOLE_CELLS {
                return Err(Error::invalid(alloc::format!(
                    "annulus hole of radius {inner} spans {:.2} cells; need {MIN_HOLE_CELLS}",
                    2.0 * inner / h
                )));
            }
        }
        let mut grid = GridDomain {
            dim,
            half_extent,
            points_per_axis,
            h,
            mask,
            weights: Vec::new(),
        };
        grid.weights = grid.region_weights(&mask)?;
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Offset between neighbours along axis `d`.
    #[inline]
    pub fn stride(&self, d: usize) -> usize {
        self.points_per_axis.pow((self.dim - 1 - d) as u32)
    }

    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.points_per_axis;
        let mut out = [0; 3];
        let mut rem = idx;
        for d in (0..self.dim).rev() {
            out[d] = rem % n;
            rem /= n;
        }
        out
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_extent + i as f64 * self.h
    }

    /// Coordinates of node `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let m = self.multi_index(idx);
        (0..self.dim).map(|d| self.coord(m[d])).collect()
    }

    /// `true` for nodes on the outer faces of the box.
    #[inline]
    pub fn is_edge(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.dim).any(|d| m[d] == 0 || m[d] == self.points_per_axis - 1)
    }

    /// Quadrature weights of the mask region.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node weights `hⁿ · (fraction of the 3ⁿ subsamples x + {−h/3, 0, h/3}ⁿ
    /// lying in the region)`.
    pub fn region_weights(&self, region: &Region) -> Result<Vec<f64>> {
        region.validate()?;
        if region.outer() > self.half_extent * (1.0 + 1e-12) {
            return Err(Error::invalid(alloc::format!(
                "region radius {} exceeds grid half extent {}",
                region.outer(),
                self.half_extent
            )));
        }
        let cell = math::powi(self.h, self.dim as i32);
        let offsets = [-self.h / 3.0, 0.0, self.h / 3.0];
        let n_sub = 3usize.pow(self.dim as u32);
        let reach = self.h * sqrt(self.dim as f64) / 3.0;
        let mut out = vec![0.0; self.len()];
        let mut y = [0.0; 3];
        for (idx, w) in out.iter_mut().enumerate() {
            let x = self.point(idx);
            let r = math::norm(&x);
            // Away from the boundary all subsamples agree with the node.
            let clear = (r - region.outer()).abs() > reach && (region.inner() == 0.0 || (r - region.inner()).abs() > reach);
            if clear {
                if region.contains(&x) {
                    *w = cell;
                }
                continue;
            }
            let mut inside = 0usize;
            for s in 0..n_sub {
                let mut rem = s;
                for d in 0..self.dim {
                    y[d] = x[d] + offsets[rem % 3];
                    rem /= 3;
                }
                if region.contains(&y[..self.dim]) {
                    inside += 1;
                }
            }
            *w = cell * inside as f64 / n_sub as f64;
        }
        Ok(out)
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.point(i))).collect()
    }

    /// `Σ values · weights`, over the mask.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        dot_weighted(values, &self.weights)
    }

    /// `⟨a, b⟩_h` over the mask.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| x * y * w).sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        sqrt(self.inner(a, a).max(0.0))
    }

    /// Whether every node with nonzero value keeps `COLLAR_CELLS` cells away
    /// from the mask boundary.
    pub fn is_compactly_supported(&self, values: &[f64]) -> bool {
        let collar = COLLAR_CELLS * self.h;
        values.iter().enumerate().all(|(i, v)| {
            if *v == 0.0 {
                return true;
            }
            let r = math::norm(&self.point(i));
            r <= self.mask.outer() - collar && (self.mask.inner() == 0.0 || r >= self.mask.inner() + collar)
        })
    }
}

pub fn make_grid(dim: usize, half_extent: f64, points_per_axis: usize, mask: Region) -> Result<GridDomain> {
    GridDomain::new(dim, half_extent, points_per_axis, mask)
}

fn dot_weighted(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// Grid values bound to their grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Arc<GridDomain>,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<GridDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("field length does not match grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field values must be finite"));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Arc<GridDomain>) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Arc<GridDomain>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = grid.sample(f);
        ScalarField { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// `∫ values · weight` over the mask, with an optional pointwise weight.
    pub fn integrate(&self, weight: Option<&[f64]>) -> f64 {
        match weight {
            None => self.grid.integrate(&self.values),
            Some(w) => self
                .values
                .iter()
                .zip(w)
                .zip(self.grid.weights())
                .map(|((v, p), q)| v * p * q)
                .sum(),
        }
    }
}

/// Face-flux discretisation of `Δ_g u = ∂_i(g^{ij}∂_j u)`.
///
/// Diagonal terms use `g^{dd}` at face midpoints and one-sided differences
/// across the face. Off-diagonal terms use `D_a(g^{ab} D_b u) + D_b(g^{ab} D_a u)`
/// with centered `D` and `g^{ab}` at nodes. Both pieces are exactly
/// symmetric on fields that vanish near the box faces, and for `g = I` the
/// operator is the standard `2n+1`-point Laplacian.
#[derive(Clone, Debug)]
pub struct DivergenceOperator {
    grid: Arc<GridDomain>,
    /// `face[d][idx] = g^{dd}(x_idx + h/2 e_d)`.
    face: Vec<Vec<f64>>,
    /// `g⁻¹` at nodes, `dim²` entries per node.
    g_inv: Vec<f64>,
}

impl DivergenceOperator {
    pub fn new(metric: &dyn MetricField, grid: Arc<GridDomain>) -> Result<Self> {
        let n = grid.dim;
        if metric.dim() != n {
            return Err(Error::invalid("metric and grid dimensions differ"));
        }
        let len = grid.len();
        let mut face = vec![vec![0.0; len]; n];
        let mut g_inv = vec![0.0; len * n * n];
        let last = grid.points_per_axis - 1;
        for idx in 0..len {
            let x = grid.point(idx);
            let m = metric_eval(metric, &x)?;
            for a in 0..n {
                for b in 0..n {
                    g_inv[idx * n * n + a * n + b] = m.g_inv[(a, b)];
                }
            }
            let mi = grid.multi_index(idx);
            let mut y = x.clone();
            for d in 0..n {
                if mi[d] < last {
                    y[d] = x[d] + 0.5 * grid.h;
                    face[d][idx] = metric_eval(metric, &y)?.g_inv[(d, d)];
                    y[d] = x[d];
                }
            }
        }
        Ok(DivergenceOperator { grid, face, g_inv })
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    /// `g^{ab}` at node `idx`.
    #[inline]
    pub fn g_inv_at(&self, idx: usize, a: usize, b: usize) -> f64 {
        let n = self.grid.dim;
        self.g_inv[idx * n * n + a * n + b]
    }

    /// `(column, coefficient)` pairs of row `idx`; empty for edge nodes.
    pub fn stencil(&self, idx: usize) -> Vec<(usize, f64)> {
        let grid = &self.grid;
        if grid.is_edge(idx) {
            return Vec::new();
        }
        let n = grid.dim;
        let h2 = grid.h * grid.h;
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(1 + 2 * n + 4 * n);
        let mut centre = 0.0;
        for d in 0..n {
            let s = grid.stride(d);
            let fp = self.face[d][idx] / h2;
            let fm = self.face[d][idx - s] / h2;
            out.push((idx + s, fp));
            out.push((idx - s, fm));
            centre -= fp + fm;
        }
        out.push((idx, centre));
        let q = 1.0 / (4.0 * h2);
        for a in 0..n {
            for b in a + 1..n {
                let (sa, sb) = (grid.stride(a), grid.stride(b));
                // D_a(G D_b u) + D_b(G D_a u); the two share the same
                // diagonal neighbours with weights G(i ± e_a) and G(i ± e_b).
                let gpa = self.g_inv_at(idx + sa, a, b);
                let gma = self.g_inv_at(idx - sa, a, b);
                let gpb = self.g_inv_at(idx + sb, a, b);
                let gmb = self.g_inv_at(idx - sb, a, b);
                out.push((idx + sa + sb, q * (gpa + gpb)));
                out.push((idx + sa - sb, -q * (gpa + gmb)));
                out.push((idx - sa + sb, -q * (gma + gpb)));
                out.push((idx - sa - sb, q * (gma + gmb)));
            }
        }
        out
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let n = grid.dim;
        let h2 = grid.h * grid.h;
        let q = 1.0 / (4.0 * h2);
        let mut out = vec![0.0; u.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            if grid.is_edge(idx) {
                continue;
            }
            let mut acc = 0.0;
            for d in 0..n {
                let s = grid.stride(d);
                acc += (self.face[d][idx] * (u[idx + s] - u[idx]) - self.face[d][idx - s] * (u[idx] - u[idx - s])) / h2;
            }
            for a in 0..n {
                for b in a + 1..n {
                    let (sa, sb) = (grid.stride(a), grid.stride(b));
                    let da_at = |j: usize| u[j + sa] - u[j - sa];
                    let db_at = |j: usize| u[j + sb] - u[j - sb];
                    acc += q
                        * (self.g_inv_at(idx + sa, a, b) * db_at(idx + sa) - self.g_inv_at(idx - sa, a, b) * db_at(idx - sa)
                            + self.g_inv_at(idx + sb, a, b) * da_at(idx + sb)
                            - self.g_inv_at(idx - sb, a, b) * da_at(idx - sb));
                }
            }
            *o = acc;
        }
        out
    }

    /// Centered Euclidean gradient, `dim` entries per node; 0 at edge nodes.
    pub fn euclid_gradient(&self, u: &[f64]) -> Vec<f64> {
        centered_gradient(&self.grid, u)
    }

    /// `∇_g u = g⁻¹ D u`, `dim` entries per node.
    pub fn gradient_g(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.dim;
        let du = self.euclid_gradient(u);
        let mut out = vec![0.0; du.len()];
        for idx in 0..u.len() {
            for a in 0..n {
                out[idx * n + a] = (0..n).map(|b| self.g_inv_at(idx, a, b) * du[idx * n + b]).sum();
            }
        }
        out
    }

    /// `|∇_g u|²_g = Du · g⁻¹ Du` per node.
    pub fn grad_norm2(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.dim;
        let du = self.euclid_gradient(u);
        (0..u.len())
            .map(|idx| {
                let d = &du[idx * n..idx * n + n];
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        acc += d[a] * self.g_inv_at(idx, a, b) * d[b];
                    }
                }
                acc
            })
            .collect()
    }

    /// `Σ_faces g^{dd} (u_+ − u_-)(w_+ − w_-) / h²` plus the mixed-term
    /// pairing, weighted by `hⁿ`; equals `−⟨Δ_h u, w⟩` for fields vanishing
    /// near the box faces.
    pub fn energy(&self, u: &[f64], w: &[f64]) -> f64 {
        let grid = &self.grid;
        let n = grid.dim;
        let cell = math::powi(grid.h, n as i32);
        let h2 = grid.h * grid.h;
        let last = grid.points_per_axis - 1;
        let mut acc = 0.0;
        for idx in 0..u.len() {
            let mi = grid.multi_index(idx);
            for d in 0..n {
                if mi[d] < last {
                    let s = grid.stride(d);
                    acc += self.face[d][idx] * (u[idx + s] - u[idx]) * (w[idx + s] - w[idx]) / h2;
                }
            }
        }
        if n > 1 {
            let du = self.euclid_gradient(u);
            let dw = self.euclid_gradient(w);
            for idx in 0..u.len() {
                for a in 0..n {
                    for b in a + 1..n {
                        let g = self.g_inv_at(idx, a, b);
                        acc += g * (du[idx * n + a] * dw[idx * n + b] + du[idx * n + b] * dw[idx * n + a]);
                    }
                }
            }
        }
        acc * cell
    }
}

/// Centered differences `(u(x + h e_d) − u(x − h e_d)) / 2h`.
pub fn centered_gradient(grid: &GridDomain, u: &[f64]) -> Vec<f64> {
    let n = grid.dim;
    let mut out = vec![0.0; u.len() * n];
    let inv = 1.0 / (2.0 * grid.h);
    for idx in 0..u.len() {
        if grid.is_edge(idx) {
            continue;
        }
        for d in 0..n {
            let s = grid.stride(d);
            out[idx * n + d] = (u[idx + s] - u[idx - s]) * inv;
        }
    }
    out
}

/// `Δ_g u` with a freshly built operator.
pub fn laplace_beltrami(metric: &dyn MetricField, u: &ScalarField) -> Result<ScalarField> {
    let op = DivergenceOperator::new(metric, u.grid.clone())?;
    Ok(ScalarField {
        grid: u.grid.clone(),
        values: op.apply(&u.values),
    })
}

/// `∇_g u` with `dim` entries per node.
pub fn gradient_g(metric: &dyn MetricField, u: &ScalarField) -> Result<Vec<f64>> {
    let op = DivergenceOperator::new(metric, u.grid.clone())?;
    Ok(op.gradient_g(&u.values))
}

fn smoothstep(s: f64) -> [f64; 3] {
    let s = s.clamp(0.0, 1.0);
    let s2 = s * s;
    [
        s2 * s * (10.0 - 15.0 * s + 6.0 * s2),
        30.0 * s2 * (1.0 - s) * (1.0 - s),
        60.0 * s * (1.0 - s) * (1.0 - 2.0 * s),
    ]
}

/// Radial `C²` cutoff: 0 on `[0, r0/4]`, rising on `(r0/4, r0/2)`, 1 on
/// `[r0/2, 1/2]`, falling on `(1/2, 2/3)`, 0 beyond. Both transitions are the
/// quintic smoothstep `6s⁵ − 15s⁴ + 10s³`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffFunction {
    pub r0: f64,
    /// Largest of `r0^k |η^{(k)}|` on the inner transition and `|η^{(k)}|`
    /// on the outer one, `k = 0, 1, 2`, over a fine radial sample.
    pub c_emp: f64,
}

pub const CUTOFF_OUTER_START: f64 = 0.5;
pub const CUTOFF_OUTER_END: f64 = 2.0 / 3.0;

impl CutoffFunction {
    pub fn new(r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0 < 0.5) {
            return Err(Error::invalid("cutoff needs 0 < r0 < 1/2"));
        }
        let mut eta = CutoffFunction { r0, c_emp: 0.0 };
        let samples = 4000;
        let mut c = 0.0f64;
        for i in 0..=samples {
            let t = i as f64 / samples as f64;
            let inner = eta.profile(r0 / 4.0 + t * r0 / 4.0);
            c = c.max(inner[0].abs()).max(r0 * inner[1].abs()).max(r0 * r0 * inner[2].abs());
            let outer = eta.profile(CUTOFF_OUTER_START + t * (CUTOFF_OUTER_END - CUTOFF_OUTER_START));
            c = c.max(outer[0].abs()).max(outer[1].abs()).max(outer[2].abs());
        }
        eta.c_emp = c;
        Ok(eta)
    }

    /// `[η̃(r), η̃'(r), η̃''(r)]`.
    pub fn profile(&self, r: f64) -> [f64; 3] {
        let (a, b) = (self.r0 / 4.0, self.r0 / 2.0);
        if r <= a || r >= CUTOFF_OUTER_END {
            [0.0, 0.0, 0.0]
        } else if r < b {
            let w = b - a;
            let s = smoothstep((r - a) / w);
            [s[0], s[1] / w, s[2] / (w * w)]
        } else if r <= CUTOFF_OUTER_START {
            [1.0, 0.0, 0.0]
        } else {
            let w = CUTOFF_OUTER_END - CUTOFF_OUTER_START;
            let s = smoothstep((r - CUTOFF_OUTER_START) / w);
            [1.0 - s[0], -s[1] / w, -s[2] / (w * w)]
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.profile(math::norm(x))[0]
    }
}

pub fn make_cutoff(r0: f64) -> Result<CutoffFunction> {
    CutoffFunction::new(r0)
}

pub fn apply_cutoff(eta: &CutoffFunction, u: &ScalarField) -> ScalarField {
    let values = u
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| v * eta.value(&u.grid.point(i)))
        .collect();
    ScalarField {
        grid: u.grid.clone(),
        values,
    }
}

/// `exp(1 − 1/(1 − s²))` for `s < 1`, else 0.
pub fn bump_profile(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        math::exp(1.0 - 1.0 / (1.0 - s * s))
    }
}

pub const SEEDED_BUMP_TERMS: usize = 5;

/// Radial bump at `center` of the given radius; with a seed, a superposition
/// of `SEEDED_BUMP_TERMS` smaller bumps (coefficients in `[−1, 1]`, radii in
/// `[0.5, 1]·radius`) placed inside that ball.
pub fn make_bump(grid: &Arc<GridDomain>, center: &[f64], radius: f64, seed: Option<u64>) -> Result<ScalarField> {
    if center.len() != grid.dim {
        return Err(Error::invalid("bump centre has wrong dimension"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("bump radius must be positive"));
    }
    let c = math::norm(center);
    let collar = COLLAR_CELLS * grid.h;
    let fits = c + radius <= grid.mask.outer() - collar
        && (grid.mask.inner() == 0.0 || c - radius >= grid.mask.inner() + collar);
    if !fits {
        return Err(Error::invalid(alloc::format!(
            "bump at {center:?} with radius {radius} leaves the mask minus a {COLLAR_CELLS}-cell collar"
        )));
    }
    let terms: Vec<(Vec<f64>, f64, f64)> = match seed {
        None => vec![(center.to_vec(), radius, 1.0)],
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..SEEDED_BUMP_TERMS)
                .map(|_| {
                    let r = radius * rng.random_range(0.5..1.0);
                    let reach = radius - r;
                    let offset = loop {
                        let o: Vec<f64> = (0..grid.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                        if math::norm(&o) <= 1.0 {
                            break o;
                        }
                    };
                    let cc = center.iter().zip(&offset).map(|(a, o)| a + reach * o).collect();
                    (cc, r, rng.random_range(-1.0..1.0))
                })
                .collect()
        }
    };
    let values = grid.sample(|x| {
        terms
            .iter()
            .map(|(cc, r, coef)| coef * bump_profile(math::dist(x, cc) / r))
            .sum()
    });
    ScalarField::new(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ConstantMetric, ExprMetric};
    use approx::assert_relative_eq;
    use core::f64::consts::PI;

    fn ball(n: usize, r: f64) -> Arc<GridDomain> {
        Arc::new(make_grid(2, 1.0, n, Region::Ball { radius: r }).unwrap())
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(2, 1.0, 65, Region::Ball { radius: 1.0 }).unwrap();
        assert_eq!(g.len(), 65 * 65);
        let inside = (0..g.len()).filter(|i| Region::Ball { radius: 1.0 }.contains(&g.point(*i))).count();
        let expected = PI / 4.0 * 64.0 * 64.0;
        assert!((inside as f64 - expected).abs() / expected < 0.02, "{inside}");
        assert_relative_eq!(g.weights().iter().sum::<f64>(), PI, max_relative = 2e-3);

        assert!(make_grid(2, 1.0, 3, Region::Ball { radius: 1.0 }).is_err());
        assert!(make_grid(2, 1.0, 65, Region::Ball { radius: 1.2 }).is_err());
        assert!(make_grid(4, 1.0, 65, Region::Ball { radius: 1.0 }).is_err());

        let ann = Region::Annulus { inner: 0.125, outer: 1.0 };
        assert!(make_grid(2, 1.0, 65, ann).is_ok());
        assert!(make_grid(2, 1.0, 63, ann).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let g = make_grid(3, 1.0, 17, Region::Ball { radius: 1.0 }).unwrap();
        assert_eq!(g.stride(2), 1);
        assert_eq!(g.stride(0), 17 * 17);
        let idx = 3 * 289 + 5 * 17 + 7;
        assert_eq!(g.multi_index(idx), [3, 5, 7]);
        let p = g.point(idx);
        assert_relative_eq!(p[2], -1.0 + 7.0 * 0.125);
        assert!(g.is_edge(16));
        assert!(!g.is_edge(idx));
    }

    #[test]
    fn quadrature_examples() {
        let g = ball(129, 0.5);
        let one = ScalarField::from_fn(g.clone(), |_| 1.0);
        assert_relative_eq!(one.integrate(None), PI / 4.0, max_relative = 1e-2);

        let g = ball(129, 1.0);
        let x1sq = ScalarField::from_fn(g.clone(), |x| x[0] * x[0]);
        assert_relative_eq!(x1sq.integrate(None), PI / 4.0, max_relative = 1e-2);

        let ann = make_grid(2, 1.0, 129, Region::Annulus { inner: 0.25, outer: 1.0 }).unwrap();
        assert_relative_eq!(ann.weights().iter().sum::<f64>(), PI * (1.0 - 0.0625), max_relative = 1e-3);
        let w = ann.region_weights(&Region::Ball { radius: 0.5 }).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), PI / 4.0, max_relative = 2e-3);
    }

    #[test]
    fn quadrature_converges() {
        let f = |x: &[f64]| {
            let v = math::exp(x[0]) * math::cos(x[1]);
            v * v
        };
        // Polar reference on the unit ball by a fine midpoint rule.
        let exact = {
            let (nr, nt) = (4000, 4000);
            let mut acc = 0.0;
            for i in 0..nr {
                let r = (i as f64 + 0.5) / nr as f64;
                for j in 0..nt {
                    let t = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
                    acc += f(&[r * math::cos(t), r * math::sin(t)]) * r;
                }
            }
            acc * 2.0 * PI / (nr * nt) as f64
        };
        let errs: Vec<f64> = [33usize, 65, 129, 257]
            .iter()
            .map(|n| (ball(*n, 1.0).integrate(&ball(*n, 1.0).sample(f)) - exact).abs())
            .collect();
        let order = math::log2(errs[0] / errs[3]) / 3.0;
        assert!(order >= 1.5, "{errs:?} {order}");
    }

    #[test]
    fn laplacian_examples() {
        let g = ball(65, 1.0);
        let id = ConstantMetric::identity(2);
        let u = ScalarField::from_fn(g.clone(), |x| x[0] * x[0]);
        let lap = laplace_beltrami(&id, &u).unwrap();
        for i in 0..g.len() {
            if !g.is_edge(i) {
                assert_relative_eq!(lap.values[i], 2.0, epsilon = 1e-9);
            }
        }
        let harm = ScalarField::from_fn(g.clone(), |x| x[0] * x[0] - x[1] * x[1]);
        let lap = laplace_beltrami(&id, &harm).unwrap();
        assert!(lap.values.iter().all(|v| v.abs() < 1e-9));

        let d = ConstantMetric::diag(&[0.5, 1.0]).unwrap();
        let lap = laplace_beltrami(&d, &u).unwrap();
        let mid = g.len() / 2;
        assert_relative_eq!(lap.values[mid], 4.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_operator_is_five_point() {
        let g = ball(17, 1.0);
        let op = DivergenceOperator::new(&ConstantMetric::identity(2), g.clone()).unwrap();
        let mid = 8 * 17 + 8;
        let mut st = op.stencil(mid);
        st.retain(|(_, c)| *c != 0.0);
        st.sort_by_key(|e| e.0);
        let h2 = g.h * g.h;
        let expected = [
            (mid - 17, 1.0 / h2),
            (mid - 1, 1.0 / h2),
            (mid, -4.0 / h2),
            (mid + 1, 1.0 / h2),
            (mid + 17, 1.0 / h2),
        ];
        assert_eq!(st.len(), 5);
        for (a, b) in st.iter().zip(expected) {
            assert_eq!(a.0, b.0);
            assert_relative_eq!(a.1, b.1, max_relative = 1e-14);
        }
    }

    fn wavy_metric() -> ExprMetric {
        let e = |s: &str| crate::expr::Expr::parse(s).unwrap();
        ExprMetric::from_upper(
            2,
            vec![e("2 + 0.5*sin(x1 + x2)"), e("0.3*cos(2*x1)*x2"), e("1.5 + 0.4*x1^2")],
            crate::fields::MetricBounds {
                lambda: 4.0,
                lipschitz: 3.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn stencil_matches_apply_and_is_symmetric() {
        let g = ball(33, 1.0);
        let op = DivergenceOperator::new(&wavy_metric(), g.clone()).unwrap();
        let u = make_bump(&g, &[0.1, -0.2], 0.5, Some(3)).unwrap();
        let w = make_bump(&g, &[-0.2, 0.1], 0.6, Some(4)).unwrap();
        let au = op.apply(&u.values);
        for i in 0..g.len() {
            let s: f64 = op.stencil(i).iter().map(|(j, c)| c * u.values[*j]).sum();
            assert!((s - au[i]).abs() < 1e-9 * (1.0 + au[i].abs()));
        }
        let aw = op.apply(&w.values);
        let plain = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let lhs = plain(&au, &w.values);
        let rhs = plain(&u.values, &aw);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} {rhs}");

        // Integration by parts against the face energy.
        let cell = g.h * g.h;
        let e = op.energy(&u.values, &w.values);
        assert_relative_eq!(-lhs * cell, e, max_relative = 1e-10);
    }

    #[test]
    fn operator_is_second_order() {
        let m = wavy_metric();
        let exact = |x: &[f64]| math::sin(x[0]) * math::exp(x[1]);
        // Continuous Δ_g u at a fixed probe via nested finite differences of
        // the flux, accurate far beyond grid error.
        let probe = [0.25, -0.125];
        let flux = |y: &[f64], i: usize| {
            let e = 1e-5;
            let ev = metric_eval(&m, y).unwrap();
            let mut acc = 0.0;
            for j in 0..2 {
                let mut yp = y.to_vec();
                let mut ym = y.to_vec();
                yp[j] += e;
                ym[j] -= e;
                acc += ev.g_inv[(i, j)] * (exact(&yp) - exact(&ym)) / (2.0 * e);
            }
            acc
        };
        let mut reference = 0.0;
        for i in 0..2 {
            let e = 1e-4;
            let mut yp = probe.to_vec();
            let mut ym = probe.to_vec();
            yp[i] += e;
            ym[i] -= e;
            reference += (flux(&yp, i) - flux(&ym, i)) / (2.0 * e);
        }
        let err = |n: usize| {
            let g = ball(n, 1.0);
            let op = DivergenceOperator::new(&m, g.clone()).unwrap();
            let lap = op.apply(&g.sample(exact));
            let idx = (0..g.len())
                .find(|i| math::dist(&g.point(*i), &probe) < 1e-12)
                .unwrap();
            (lap[idx] - reference).abs()
        };
        let (e1, e2) = (err(33), err(65));
        let order = math::log2(e1 / e2);
        assert!(order > 1.8, "{e1} {e2} {order}");
    }

    #[test]
    fn gradient_examples() {
        let g = ball(33, 1.0);
        let id = ConstantMetric::identity(2);
        let c = ScalarField::from_fn(g.clone(), |_| 3.0);
        assert!(gradient_g(&id, &c).unwrap().iter().all(|v| *v == 0.0));
        let d = ConstantMetric::diag(&[2.0, 4.0]).unwrap();
        let lin = ScalarField::from_fn(g.clone(), |x| x[0] + x[1]);
        let gr = gradient_g(&d, &lin).unwrap();
        let mid = g.len() / 2;
        assert_relative_eq!(gr[2 * mid], 0.5, epsilon = 1e-12);
        assert_relative_eq!(gr[2 * mid + 1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn cutoff_examples() {
        let eta = make_cutoff(0.25).unwrap();
        assert_eq!(eta.value(&[0.3, 0.0]), 1.0);
        assert_eq!(eta.value(&[0.05, 0.0]), 0.0);
        assert_eq!(eta.value(&[0.0, 0.7]), 0.0);
        let mid = (0.0625 + 0.125) / 2.0;
        assert_relative_eq!(eta.value(&[mid, 0.0]), 0.5, epsilon = 1e-15);
        assert!(make_cutoff(0.5).is_err());
        assert!(make_cutoff(0.0).is_err());
        // C² at the junctions.
        for r in [0.0625, 0.125, 0.5, 2.0 / 3.0] {
            let (a, b) = (eta.profile(r - 1e-12), eta.profile(r + 1e-12));
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-5, "r={r} k={k}");
            }
        }
        // Quintic smoothstep peaks: |S'| ≤ 15/8, |S''| ≤ 10/√3.
        let outer = 6.0;
        assert_relative_eq!(eta.c_emp, outer * outer * 10.0 / libm::sqrt(3.0), max_relative = 1e-4);
    }

    #[test]
    fn apply_cutoff_masks_values() {
        let g = ball(33, 1.0);
        let eta = make_cutoff(0.25).unwrap();
        let u = ScalarField::from_fn(g.clone(), |_| 2.0);
        let v = apply_cutoff(&eta, &u);
        for i in 0..g.len() {
            let r = math::norm(&g.point(i));
            if !(0.0625..=2.0 / 3.0).contains(&r) {
                assert_eq!(v.values[i], 0.0);
            }
        }
    }

    #[test]
    fn bump_examples() {
        let g = ball(65, 1.0);
        let b = make_bump(&g, &[0.0, 0.0], 0.5, None).unwrap();
        let mid = g.len() / 2;
        assert_eq!(b.values[mid], 1.0);
        assert_eq!(bump_profile(1.0), 0.0);
        assert!(bump_profile(0.999) < 1e-200);
        let total = b.integrate(None);
        assert!(total > 0.0 && total < PI * 0.25);
        assert!(g.is_compactly_supported(&b.values));

        assert!(make_bump(&g, &[0.6, 0.0], 0.4, None).is_err());
        let seeded = make_bump(&g, &[0.1, 0.1], 0.5, Some(9)).unwrap();
        assert_eq!(seeded, make_bump(&g, &[0.1, 0.1], 0.5, Some(9)).unwrap());
        assert_ne!(seeded, make_bump(&g, &[0.1, 0.1], 0.5, Some(10)).unwrap());
        assert!(g.is_compactly_supported(&seeded.values));

        let ann = Arc::new(make_grid(2, 1.0, 65, Region::Annulus { inner: 0.5, outer: 1.0 }).unwrap());
        assert!(make_bump(&ann, &[0.0, 0.0], 0.2, None).is_err());
        assert!(make_bump(&ann, &[0.75, 0.0], 0.15, None).is_ok());
    }
}
