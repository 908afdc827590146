//! Run configuration: a flat TOML table of documented keys, overridden by
//! command-line flags. Unknown keys and out-of-range values are rejected with
//! the offending key (and file line, when there is one) in the message.

use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    Certify,
    MuSearch,
    Rellich,
    CarlemanSweep,
    Solve,
    ThreeSphere,
    Suite,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Validate,
        Command::Certify,
        Command::MuSearch,
        Command::Rellich,
        Command::CarlemanSweep,
        Command::Solve,
        Command::ThreeSphere,
        Command::Suite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Certify => "certify",
            Command::MuSearch => "mu-search",
            Command::Rellich => "rellich",
            Command::CarlemanSweep => "carleman-sweep",
            Command::Solve => "solve",
            Command::ThreeSphere => "three-sphere",
            Command::Suite => "suite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| anyhow!("unknown command `{s}`"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every key accepted in a config file or via `--set`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub dim: usize,

    /// Catalog name or `expr:g11,g12,..` (upper triangle, row order).
    pub metric: String,
    /// Declared bounds, required for `expr:` metrics.
    pub metric_lambda: Option<f64>,
    pub metric_lipschitz: Option<f64>,
    /// Catalog name or `expr:<ψ>`; the weight is `φ = e^{μψ}`.
    pub psi: String,
    /// Optional `φ` expression used instead of `e^{μψ}`.
    pub phi: Option<String>,
    pub mu: f64,
    pub mu_max: f64,
    pub margin: f64,

    /// Annulus for certification and the τ-sweep.
    pub r_in: f64,
    pub r_out: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    pub cross_check_draws: usize,

    pub half_extent: f64,
    pub grid_n: usize,

    pub tau_min: f64,
    pub tau_max: f64,
    pub n_tau: usize,
    pub trust_factor: f64,
    pub n_bumps: usize,
    pub n_seeded: usize,
    pub bump_ring: f64,
    pub bump_radius: f64,
    pub seed: u64,

    /// Comma-separated components of the Rellich vector field.
    pub rellich_field: String,
    pub rellich_sizes: Vec<usize>,

    pub solve_exact: String,
    /// Comma-separated convection components.
    pub solve_b: String,
    pub solve_a: String,
    pub m1: f64,
    pub solve_radius: f64,
    pub solve_sizes: Vec<usize>,
    pub solver_tol: f64,
    pub dump_field: bool,

    pub r0: f64,
    pub rho: f64,
    /// Taken from a μ-search on `B_1 \ B_{r0/8}` when absent.
    pub mu0: Option<f64>,
    pub k_max: u32,
    pub perturbed_runs: usize,
    pub tau_bar1: Option<f64>,
    pub c_declared: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            dim: 2,
            metric: "identity".into(),
            metric_lambda: None,
            metric_lipschitz: None,
            psi: "psi-neg-abs2".into(),
            phi: None,
            mu: 8.0,
            mu_max: 4096.0,
            margin: 0.0,
            r_in: 0.5,
            r_out: 1.0,
            n_radial: 33,
            n_angular: 48,
            cross_check_draws: 10_000,
            half_extent: 1.0,
            grid_n: 257,
            tau_min: 4.0,
            tau_max: 256.0,
            n_tau: 13,
            trust_factor: 1.0,
            n_bumps: 5,
            n_seeded: 15,
            bump_ring: 0.75,
            bump_radius: 0.2,
            seed: 0,
            rellich_field: "x1,x2".into(),
            rellich_sizes: vec![65, 129, 257],
            solve_exact: "exp(x1)*cos(x2)".into(),
            solve_b: "0,0".into(),
            solve_a: "0".into(),
            m1: 1.0,
            solve_radius: 1.0,
            solve_sizes: vec![65, 129, 257],
            solver_tol: 1e-10,
            dump_field: false,
            r0: 0.25,
            rho: 0.4,
            mu0: None,
            k_max: 6,
            perturbed_runs: 20,
            tau_bar1: None,
            c_declared: None,
        }
    }
}

pub fn known_keys() -> Vec<String> {
    match toml::Value::try_from(RunConfig::default()) {
        Ok(toml::Value::Table(t)) => {
            let mut keys: Vec<String> = t.keys().cloned().collect();
            // Option fields serialise only when set.
            for k in ["command", "metric_lambda", "metric_lipschitz", "phi", "mu0", "tau_bar1", "c_declared"] {
                if !keys.iter().any(|x| x == k) {
                    keys.push(k.into());
                }
            }
            keys.sort();
            keys
        }
        _ => unreachable!("config serialises to a table"),
    }
}

/// `taus` → `tau_min/tau_max`; otherwise the closest key by Jaro-Winkler.
pub fn suggest(key: &str, known: &[String]) -> Option<String> {
    let stem = key.trim_end_matches('s');
    if !stem.is_empty() {
        let (lo, hi) = (format!("{stem}_min"), format!("{stem}_max"));
        if known.contains(&lo) && known.contains(&hi) {
            return Some(format!("{lo}/{hi}"));
        }
    }
    known
        .iter()
        .map(|k| (strsim::jaro_winkler(key, k), k))
        .filter(|(s, _)| *s >= 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.clone())
}

fn line_of(src: &str, key: &str) -> Option<usize> {
    src.lines()
        .position(|l| {
            let t = l.trim_start();
            t.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

fn check_keys(table: &toml::Table, src: Option<&str>, origin: &str) -> Result<()> {
    let known = known_keys();
    for key in table.keys() {
        if known.iter().any(|k| k == key) {
            continue;
        }
        let at = match src.and_then(|s| line_of(s, key)) {
            Some(line) => format!("{origin} line {line}"),
            None => origin.to_string(),
        };
        let hint = suggest(key, &known)
            .map(|s| format!("; did you mean `{s}`?"))
            .unwrap_or_default();
        bail!("unknown key `{key}` ({at}){hint}");
    }
    Ok(())
}

/// Parses one `key=value` override. The value is read as a TOML literal and
/// falls back to a bare string.
pub fn parse_override(arg: &str) -> Result<(String, toml::Value)> {
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got `{arg}`"))?;
    let key = key.trim();
    let value = value.trim();
    let literal: Result<toml::Table, _> = toml::from_str(&format!("v = {value}"));
    let v = match literal {
        Ok(mut t) => t.remove("v").expect("parsed table has v"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    Ok((key.to_string(), v))
}

/// Builds the config from an optional file and flag overrides (flags win).
pub fn parse_config(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<RunConfig> {
    let (mut table, src) = match path {
        Some(p) => {
            let src = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let table: toml::Table = toml::from_str(&src).map_err(|e| anyhow!("config {}: {e}", p.display()))?;
            (table, Some(src))
        }
        None => (toml::Table::new(), None),
    };
    check_keys(&table, src.as_deref(), "config")?;
    let mut flags = toml::Table::new();
    for (k, v) in overrides {
        flags.insert(k.clone(), v.clone());
    }
    check_keys(&flags, None, "flag")?;
    table.extend(flags);
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("config: {}", e.message()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn require(ok: bool, key: &str, msg: impl fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        bail!("`{key}`: {msg}")
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.dim == 2 || self.dim == 3, "dim", "must be 2 or 3")?;
        require(self.mu > 0.0 && self.mu.is_finite(), "mu", "must be positive")?;
        require(self.mu_max >= 1.0, "mu_max", "must be at least 1")?;
        require(self.margin >= 0.0, "margin", "must be non-negative")?;
        require(self.r_in > 0.0 && self.r_in < self.r_out, "r_in", "need 0 < r_in < r_out")?;
        require(self.r_out <= self.half_extent, "r_out", "must not exceed half_extent")?;
        require(self.n_radial >= 2, "n_radial", "must be at least 2")?;
        require(self.n_angular >= 4, "n_angular", "must be at least 4")?;
        require(self.half_extent > 0.0, "half_extent", "must be positive")?;
        require((16..=2049).contains(&self.grid_n), "grid_n", "must lie in 16..=2049")?;
        require(
            self.tau_min > 0.0 && self.tau_min <= self.tau_max,
            "tau_min",
            "need 0 < tau_min <= tau_max",
        )?;
        require(self.n_tau >= 1, "n_tau", "must be at least 1")?;
        require(
            self.n_tau > 1 || self.tau_min == self.tau_max,
            "n_tau",
            "a single tau needs tau_min = tau_max",
        )?;
        require(self.trust_factor > 0.0, "trust_factor", "must be positive")?;
        require(self.n_bumps + self.n_seeded >= 1, "n_bumps", "the sweep needs at least one test function")?;
        require(self.bump_radius > 0.0, "bump_radius", "must be positive")?;
        require(
            self.bump_ring - self.bump_radius >= self.r_in && self.bump_ring + self.bump_radius <= self.r_out,
            "bump_ring",
            "bumps must fit inside the annulus",
        )?;
        require(!self.rellich_sizes.is_empty(), "rellich_sizes", "must not be empty")?;
        for (key, sizes) in [("rellich_sizes", &self.rellich_sizes), ("solve_sizes", &self.solve_sizes)] {
            require(
                sizes.iter().all(|n| (16..=2049).contains(n)) && sizes.windows(2).all(|w| w[0] < w[1]),
                key,
                "sizes must be increasing and lie in 16..=2049",
            )?;
        }
        require(!self.solve_sizes.is_empty(), "solve_sizes", "must not be empty")?;
        require(self.m1 >= 0.0, "m1", "must be non-negative")?;
        require(
            self.solve_radius > 0.0 && self.solve_radius <= self.half_extent,
            "solve_radius",
            "need 0 < solve_radius <= half_extent",
        )?;
        require(self.solver_tol > 0.0 && self.solver_tol < 1.0, "solver_tol", "must lie in (0, 1)")?;
        require(self.r0 > 0.0 && self.r0 < 0.5, "r0", "must lie in (0, 1/2)")?;
        require(
            self.rho > 0.5 * self.r0 && self.rho < 0.5,
            "rho",
            format!("must lie in (r0/2, 1/2) = ({}, 0.5); larger radii are outside the proven range", 0.5 * self.r0),
        )?;
        if let Some(mu0) = self.mu0 {
            require(mu0 > 0.0 && mu0.is_finite(), "mu0", "must be positive")?;
        }
        require((1..=10).contains(&self.k_max), "k_max", "must lie in 1..=10")?;
        if let Some(t) = self.tau_bar1 {
            require(t >= 0.0, "tau_bar1", "must be non-negative")?;
        }
        if let Some(c) = self.c_declared {
            require(c > 0.0, "c_declared", "must be positive")?;
        }
        Ok(())
    }

    /// JSON echo of the resolved config.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}
