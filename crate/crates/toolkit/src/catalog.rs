//! Metrics and weights addressable by name from a config.
//!
//! | name | field |
//! |------|-------|
//! | `identity` | `g = I` |
//! | `diag:a,b[,c]` | constant diagonal `g` |
//! | `sin-perturbed:eps` | `g = I + eps·sin(x1) e1⊗e1` |
//! | `expr:g11,g12,..` | upper triangle as expressions (needs `metric_lambda`, `metric_lipschitz`) |
//! | `psi-neg-abs2` | `ψ = −|x|²` |
//! | `psi-linear:d1,d2[,d3]` | `ψ = ⟨d, x⟩` |
//! | `expr:<src>` | `ψ` (or `φ`) as an expression |

use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use carleman_core::carleman::ExprVectorField;
use carleman_core::expr::Expr;
use carleman_core::fields::{ConstantMetric, ExpWeight, ExprMetric, ExprWeight, MetricBounds, MetricField, WeightFunction};

use crate::config::RunConfig;

fn numbers(list: &str, what: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("{what}: `{s}` is not a number")))
        .collect()
}

pub fn exprs(list: &str) -> Result<Vec<Expr>> {
    list.split(',')
        .map(|s| Expr::parse(s.trim()).map_err(|e| anyhow!("expression `{}`: {e}", s.trim())))
        .collect()
}

pub fn metric(name: &str, dim: usize, declared: Option<MetricBounds>) -> Result<Arc<dyn MetricField>> {
    let (head, arg) = name.split_once(':').unwrap_or((name, ""));
    let m: Arc<dyn MetricField> = match head {
        "identity" => Arc::new(ConstantMetric::identity(dim)),
        "diag" => {
            let d = numbers(arg, "diag metric")?;
            if d.len() != dim {
                bail!("diag metric has {} entries for dimension {dim}", d.len());
            }
            Arc::new(ConstantMetric::diag(&d)?)
        }
        "sin-perturbed" => {
            let eps = numbers(arg, "sin-perturbed metric")?;
            if eps.len() != 1 {
                bail!("sin-perturbed takes one parameter");
            }
            Arc::new(ExprMetric::sin_perturbed(dim, eps[0])?)
        }
        "expr" => {
            let bounds = declared.ok_or_else(|| anyhow!("expression metrics need metric_lambda and metric_lipschitz"))?;
            Arc::new(ExprMetric::from_upper(dim, exprs(arg)?, bounds)?)
        }
        _ => bail!("unknown metric `{name}` (identity, diag:.., sin-perturbed:.., expr:..)"),
    };
    Ok(m)
}

pub fn psi(name: &str, dim: usize) -> Result<Arc<dyn WeightFunction>> {
    let (head, arg) = name.split_once(':').unwrap_or((name, ""));
    let w: Arc<dyn WeightFunction> = match head {
        "psi-neg-abs2" => Arc::new(ExprWeight::neg_abs2(dim)),
        "psi-linear" => {
            let d = numbers(arg, "linear weight")?;
            if d.len() != dim {
                bail!("psi-linear direction has {} entries for dimension {dim}", d.len());
            }
            Arc::new(ExprWeight::linear(&d)?)
        }
        "expr" => Arc::new(ExprWeight::parse(dim, arg)?),
        _ => bail!("unknown weight `{name}` (psi-neg-abs2, psi-linear:.., expr:..)"),
    };
    Ok(w)
}

pub fn config_metric(cfg: &RunConfig) -> Result<Arc<dyn MetricField>> {
    let declared = match (cfg.metric_lambda, cfg.metric_lipschitz) {
        (Some(lambda), Some(lipschitz)) => Some(MetricBounds { lambda, lipschitz }),
        _ => None,
    };
    metric(&cfg.metric, cfg.dim, declared)
}

/// `φ`: the `phi` expression if set, else `e^{μψ}` at the given `μ`.
pub fn config_weight(cfg: &RunConfig, mu: f64) -> Result<Arc<dyn WeightFunction>> {
    match &cfg.phi {
        Some(src) => Ok(Arc::new(ExprWeight::parse(cfg.dim, src)?)),
        None => Ok(Arc::new(ExpWeight::new(psi(&cfg.psi, cfg.dim)?, mu)?)),
    }
}

pub fn vector_field(list: &str, dim: usize) -> Result<ExprVectorField> {
    let f = ExprVectorField::new(exprs(list)?)?;
    if f.dim() != dim {
        bail!("vector field has {} components for dimension {dim}", f.dim());
    }
    Ok(f)
}
