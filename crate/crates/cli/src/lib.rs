//! Headless driver: single synthesis runs, replicated sweeps over budgets
//! and weights, and the HTTP server.

pub mod config;
pub mod sweep;

use std::path::Path;

use dpchart_core::charts::PatternConstraint;
use dpchart_core::engine::{generate_scheme, Scheme};
use dpchart_core::metrics::evaluate_scheme;

pub use config::{Overrides, Prepared, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file or input data. Exit status 1.
    Config(String),
    /// The run itself failed. Exit status 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Patterns as weighted for one run. `weight` replaces every pattern's
/// weight when given.
pub fn patterns_for(p: &Prepared, weight: Option<f64>) -> Vec<PatternConstraint> {
    p.catalog
        .patterns()
        .iter()
        .cloned()
        .map(|mut c| {
            if let Some(w) = weight {
                c.weight = w;
            }
            c
        })
        .collect()
}

/// Generates and evaluates one scheme. Baseline runs ignore the patterns
/// during generation but are still scored against them.
pub fn run_once(p: &Prepared, epsilon: f64, weight: Option<f64>, seed: u64) -> Result<Scheme, CliError> {
    let patterns = patterns_for(p, weight);
    let weighted: &[PatternConstraint] = if p.baseline { &[] } else { &patterns };
    let mut scheme =
        generate_scheme(&p.data, &p.discretizations, weighted, &p.scheme_config(epsilon, seed)).map_err(runtime)?;
    scheme.id = format!("seed{seed}");
    scheme.metrics = Some(evaluate_scheme(&p.data, scheme.synthetic(), &patterns, &p.charts).map_err(runtime)?);
    Ok(scheme)
}

/// Writes `synthetic.csv`, `scheme.json`, `network.json`, `marginals.json`
/// and `metrics.json` into `out`.
pub fn synth(p: &Prepared, out: &Path) -> Result<Scheme, CliError> {
    if p.epsilons.len() != 1 {
        return Err(CliError::Config("synth takes a single \"epsilon\"; use sweep for a list".into()));
    }
    if p.seeds.len() != 1 {
        return Err(CliError::Config("synth runs one seed; use sweep for repeats".into()));
    }
    let scheme = run_once(p, p.epsilons[0], None, p.seeds[0])?;
    scheme.save_dir(out).map_err(runtime)?;
    let metrics = serde_json::to_vec_pretty(&scheme.metrics).map_err(runtime)?;
    std::fs::write(out.join("metrics.json"), metrics).map_err(runtime)?;
    Ok(scheme)
}
