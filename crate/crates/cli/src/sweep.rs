//! Replicated runs over an epsilon list and a weight grid, aggregated into
//! long-form rows of mean, standard deviation and a t-based 95% interval.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{run_once, CliError, Prepared};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Grid weight, or `None` when the configured pattern weights were used.
    pub weight: Option<f64>,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; `None` below two runs.
    pub sd: Option<f64>,
    /// Half-width of the 95% interval for the mean.
    pub ci95: Option<f64>,
    pub n_runs: usize,
}

/// Flat metrics of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub epsilon: f64,
    pub weight: Option<f64>,
    pub seed: u64,
    pub values: Vec<(String, f64)>,
}

/// Mean, sample sd and 95% half-width of `values`. The values are sorted
/// first, so the result does not depend on the order runs finished in.
pub fn summarize(values: &[f64]) -> (f64, Option<f64>, Option<f64>) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("dof >= 1").inverse_cdf(0.975);
    (mean, Some(sd), Some(t * sd / n.sqrt()))
}

/// Every (condition, seed) run, in parallel on up to `jobs` threads.
pub fn run_grid(p: &Prepared, jobs: usize) -> Result<Vec<RunMetrics>, CliError> {
    let weights: Vec<Option<f64>> = match &p.weights {
        Some(w) => w.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let tasks: Vec<(f64, Option<f64>, u64)> = p
        .epsilons
        .iter()
        .flat_map(|&e| weights.iter().flat_map(move |&w| p.seeds.iter().map(move |&s| (e, w, s))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| {
        tasks
            .par_iter()
            .map(|&(epsilon, weight, seed)| {
                let scheme = run_once(p, epsilon, weight, seed)?;
                let values = scheme.metrics.as_ref().map(|m| m.flat()).unwrap_or_default();
                Ok(RunMetrics { epsilon, weight, seed, values })
            })
            .collect()
    })
}

/// One row per (epsilon, weight, metric), in grid order then metric name.
pub fn aggregate(p: &Prepared, runs: &[RunMetrics]) -> Vec<SweepRow> {
    let weights: Vec<Option<f64>> = match &p.weights {
        Some(w) => w.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut rows = Vec::new();
    for &epsilon in &p.epsilons {
        for &weight in &weights {
            let mut by_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in runs.iter().filter(|r| r.epsilon == epsilon && r.weight == weight) {
                for (name, v) in &r.values {
                    by_metric.entry(name).or_default().push(*v);
                }
            }
            for (metric, values) in by_metric {
                let (mean, sd, ci95) = summarize(&values);
                rows.push(SweepRow {
                    epsilon,
                    weight,
                    metric: metric.to_string(),
                    mean,
                    sd,
                    ci95,
                    n_runs: values.len(),
                });
            }
        }
    }
    rows
}

pub fn sweep(p: &Prepared, jobs: usize) -> Result<Vec<SweepRow>, CliError> {
    Ok(aggregate(p, &run_grid(p, jobs)?))
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epsilon", "weight", "metric", "mean", "sd", "ci95", "n_runs"]).expect("in-memory write");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.epsilon.to_string(),
            opt(r.weight),
            r.metric.clone(),
            r.mean.to_string(),
            opt(r.sd),
            opt(r.ci95),
            r.n_runs.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
