//! Run configuration files. Charts, selections and weights use the same
//! JSON shapes as the HTTP API so patterns authored in the UI replay here.

use std::path::{Path, PathBuf};

use dpchart_core::charts::{ChartSpec, PatternCatalog, Selection};
use dpchart_core::data::{discretize_all, load_csv, Dataset, Discretizations, SchemaDescriptor, DEFAULT_MAX_BINS};
use dpchart_core::dp::{split_budget, Privacy, DEFAULT_STRUCTURE_FRACTION};
use dpchart_core::engine::{SchemeConfig, DEFAULT_DEGREE};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub chart: String,
    pub selection: Selection,
    #[serde(default = "unit")]
    pub weight: f64,
}

fn unit() -> f64 {
    1.0
}

/// One number or a list; sweeps take lists, synth takes exactly one value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilons {
    One(f64),
    Many(Vec<f64>),
}

impl Epsilons {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Epsilons::One(e) => vec![*e],
            Epsilons::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV path, relative to the config file.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub charts: Vec<ChartSpec>,
    #[serde(default)]
    pub patterns: Vec<PatternSpec>,
    #[serde(default)]
    pub epsilon: Option<Epsilons>,
    /// Sweep grid: each value replaces every pattern's weight.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub structure_fraction: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub n_out: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Explicit sweep seeds; otherwise `seed, seed + 1, …` for `repeats` runs.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub repeats: Option<usize>,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub oracle: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub epsilon: Option<Vec<f64>>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub baseline: bool,
    pub oracle: bool,
}

/// A validated configuration with its data loaded and patterns resolved.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: Dataset,
    pub discretizations: Discretizations,
    pub charts: Vec<ChartSpec>,
    pub catalog: PatternCatalog,
    pub epsilons: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
    pub structure_fraction: f64,
    pub k: usize,
    pub n_out: Option<usize>,
    pub baseline: bool,
    pub oracle: bool,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    /// Reads `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("reading {}: {e}", path.display())))?;
        let mut c: RunConfig =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut c.input, &mut c.schema].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.input.is_some() {
            self.input.clone_from(&o.input);
        }
        if o.schema.is_some() {
            self.schema.clone_from(&o.schema);
        }
        if let Some(e) = &o.epsilon {
            self.epsilon = Some(if e.len() == 1 { Epsilons::One(e[0]) } else { Epsilons::Many(e.clone()) });
        }
        self.k = o.k.or(self.k);
        self.seed = o.seed.or(self.seed);
        if o.repeats.is_some() {
            self.repeats = o.repeats;
            self.seeds = None;
        }
        self.baseline |= o.baseline;
        self.oracle |= o.oracle;
    }

    /// Validates everything that does not need the data, then loads it.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let input = self.input.as_ref().ok_or_else(|| config_err("config is missing required field \"input\""))?;
        let epsilons =
            self.epsilon.as_ref().ok_or_else(|| config_err("config is missing required field \"epsilon\""))?.values();
        if epsilons.is_empty() {
            return Err(config_err("\"epsilon\" list is empty"));
        }
        let fraction = self.structure_fraction.unwrap_or(DEFAULT_STRUCTURE_FRACTION);
        for &e in &epsilons {
            split_budget(e, fraction).map_err(|e| config_err(format!("\"epsilon\": {e}")))?;
        }
        if self.n_out == Some(0) {
            return Err(config_err("\"n_out\" must be positive"));
        }
        if let Some(w) = &self.weights {
            if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(config_err("\"weights\" must be a non-empty list of finite non-negative numbers"));
            }
        }
        let seeds = match (&self.seeds, self.repeats) {
            (Some(s), None) if !s.is_empty() => s.clone(),
            (Some(_), None) => return Err(config_err("\"seeds\" is empty")),
            (Some(_), Some(_)) => return Err(config_err("give either \"seeds\" or \"repeats\", not both")),
            (None, Some(0)) => return Err(config_err("\"repeats\" must be at least 1")),
            (None, r) => {
                let base = self.seed.unwrap_or(0);
                (0..r.unwrap_or(1) as u64).map(|i| base + i).collect()
            }
        };

        let read = |p: &Path| std::fs::read(p).map_err(|e| config_err(format!("reading {}: {e}", p.display())));
        let schema: Option<SchemaDescriptor> = match &self.schema {
            Some(p) => Some(
                serde_json::from_slice(&read(p)?).map_err(|e| config_err(format!("schema {}: {e}", p.display())))?,
            ),
            None => None,
        };
        let data = load_csv(&read(input)?, schema.as_deref())
            .map_err(|e| config_err(format!("loading {}: {e}", input.display())))?;

        if data.n_rows() == 0 {
            return Err(config_err(format!("{} has no rows", input.display())));
        }
        let discretizations = discretize_all(&data, DEFAULT_MAX_BINS).map_err(|e| config_err(e.to_string()))?;
        let mut charts: Vec<ChartSpec> = Vec::new();
        for (i, c) in self.charts.iter().enumerate() {
            let mut c = c.clone();
            if c.id.is_empty() {
                c.id = format!("c{}", i + 1);
            }
            c.validate(&data).map_err(|e| config_err(format!("chart {:?}: {e}", c.id)))?;
            if charts.iter().any(|o| o.id == c.id) {
                return Err(config_err(format!("duplicate chart id {:?}", c.id)));
            }
            charts.push(c);
        }
        let mut catalog = PatternCatalog::default();
        for (i, p) in self.patterns.iter().enumerate() {
            let spec = charts
                .iter()
                .find(|c| c.id == p.chart)
                .ok_or_else(|| config_err(format!("pattern {i} refers to unknown chart {:?}", p.chart)))?;
            catalog
                .add(&data, spec, p.selection.clone(), p.weight)
                .map_err(|e| config_err(format!("pattern {i}: {e}")))?;
        }
        Ok(Prepared {
            data,
            discretizations,
            charts,
            catalog,
            epsilons,
            weights: self.weights.clone(),
            seeds,
            structure_fraction: fraction,
            k: self.k.unwrap_or(DEFAULT_DEGREE),
            n_out: self.n_out,
            baseline: self.baseline,
            oracle: self.oracle,
        })
    }
}

impl Prepared {
    pub fn scheme_config(&self, epsilon: f64, seed: u64) -> SchemeConfig {
        SchemeConfig {
            epsilon,
            structure_fraction: self.structure_fraction,
            k: self.k,
            n_out: self.n_out,
            seed,
            privacy: if self.oracle { Privacy::Oracle } else { Privacy::Private },
        }
    }
}
