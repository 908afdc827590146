//! Parallel versions of the core pipelines. Work items are independent and
//! results are collected in input order, so outputs do not depend on the
//! thread count.

use std::f64::consts::TAU;
use std::sync::Arc;

use anyhow::{bail, Result};
use carleman_core::carleman::{carleman_ratio, geometric_grid, GridWeight, TauSweepReport};
use carleman_core::fields::{samples, ConstantMetric, MetricField, WeightFunction};
use carleman_core::grid::{make_bump, DivergenceOperator, GridDomain, Region, ScalarField};
use carleman_core::pseudoconvexity::{mu_search_with, pointwise, MuSearch, PseudoconvexityCertificate};
use carleman_core::three_sphere::{
    harmonic_grid, harmonic_row, perturbed_run, HarmonicTable, PerturbedDraw, PerturbedReport,
};
use rayon::prelude::*;

use crate::config::RunConfig;

pub fn annulus_samples(cfg: &RunConfig, r_in: f64, r_out: f64) -> Vec<Vec<f64>> {
    samples::annulus(cfg.dim, r_in, r_out, cfg.n_radial, cfg.n_angular)
}

pub fn certify_par(
    metric: &dyn MetricField,
    phi: &dyn WeightFunction,
    pts: &[Vec<f64>],
    margin: f64,
) -> Result<PseudoconvexityCertificate> {
    if pts.is_empty() {
        bail!("certify needs at least one sample");
    }
    let results: Vec<_> = pts.par_iter().map(|x| (x.clone(), pointwise(metric, phi, x))).collect();
    Ok(PseudoconvexityCertificate::reduce(metric.dim(), results, margin)?)
}

pub fn mu_search_par(
    metric: &dyn MetricField,
    psi: Arc<dyn WeightFunction>,
    pts: &[Vec<f64>],
    mu_max: f64,
    margin: f64,
) -> carleman_core::Result<MuSearch> {
    mu_search_with(psi, mu_max, |w| {
        let results: Vec<_> = pts.par_iter().map(|x| (x.clone(), pointwise(metric, w, x))).collect();
        PseudoconvexityCertificate::reduce(metric.dim(), results, margin)
    })
}

/// Grid over the certification annulus used by the τ-sweep.
pub fn sweep_grid(cfg: &RunConfig) -> Result<Arc<GridDomain>> {
    Ok(Arc::new(GridDomain::new(
        cfg.dim,
        cfg.half_extent,
        cfg.grid_n,
        Region::Annulus {
            inner: cfg.r_in,
            outer: cfg.r_out,
        },
    )?))
}

fn ring_point(dim: usize, ring: f64, angle: f64) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    c[0] = ring * angle.cos();
    c[1] = ring * angle.sin();
    c
}

/// `n_bumps` plain bumps and `n_seeded` seeded superpositions (seeds
/// `seed, seed + 1, ..`), all centred on the ring `|x| = bump_ring`.
pub fn test_corpus(grid: &Arc<GridDomain>, cfg: &RunConfig) -> Result<Vec<(String, ScalarField)>> {
    let mut out = Vec::with_capacity(cfg.n_bumps + cfg.n_seeded);
    for k in 0..cfg.n_bumps {
        let c = ring_point(cfg.dim, cfg.bump_ring, TAU * k as f64 / cfg.n_bumps as f64);
        out.push((format!("bump-{k}"), make_bump(grid, &c, cfg.bump_radius, None)?));
    }
    for s in 0..cfg.n_seeded {
        let seed = cfg.seed.wrapping_add(s as u64);
        let c = ring_point(cfg.dim, cfg.bump_ring, TAU * s as f64 / cfg.n_seeded as f64);
        out.push((format!("seeded-{seed}"), make_bump(grid, &c, cfg.bump_radius, Some(seed))?));
    }
    Ok(out)
}

pub fn sweep_par(
    op: &DivergenceOperator,
    gw: &GridWeight,
    corpus: &[(String, ScalarField)],
    cfg: &RunConfig,
) -> Result<TauSweepReport> {
    if corpus.is_empty() {
        bail!("sweep needs at least one test function");
    }
    let taus = geometric_grid(cfg.tau_min, cfg.tau_max, cfg.n_tau)?;
    let terms = corpus
        .par_iter()
        .map(|(_, u)| taus.iter().map(|t| carleman_ratio(op, gw, u, *t)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TauSweepReport::from_terms(
        taus,
        corpus.iter().map(|(id, _)| id.clone()).collect(),
        terms,
        op.grid().h,
        cfg.trust_factor,
    )?)
}

pub fn harmonic_par(cfg: &RunConfig, mu0: f64) -> Result<HarmonicTable> {
    let op = DivergenceOperator::new(&ConstantMetric::identity(2), harmonic_grid(cfg.grid_n)?)?;
    let rows = (1..=cfg.k_max)
        .into_par_iter()
        .map(|k| harmonic_row(&op, k, cfg.r0, cfg.rho, mu0, cfg.solver_tol))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HarmonicTable::from_rows(cfg.r0, cfg.rho, mu0, cfg.grid_n, rows))
}

/// Seeded perturbed-equation runs; seeds `seed, seed + 1, ..`.
pub fn perturbed_par(metric: &dyn MetricField, cfg: &RunConfig, mu0: f64) -> Result<PerturbedReport> {
    let op = DivergenceOperator::new(metric, harmonic_grid(cfg.grid_n)?)?;
    let runs = (0..cfg.perturbed_runs as u64)
        .into_par_iter()
        .map(|i| {
            let draw = PerturbedDraw::new(2, cfg.m1, cfg.seed.wrapping_add(i))?;
            perturbed_run(&op, &draw, cfg.r0, cfg.rho, mu0, cfg.solver_tol)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PerturbedReport::from_runs(runs))
}
