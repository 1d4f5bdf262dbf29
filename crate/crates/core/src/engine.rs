//! The synthesis pipeline: mixture weights, constrained structure learning,
//! noisy marginals, conditionals, sampling, and the resulting scheme.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayes::{
    conditional_rows, joint_table, learn_structure, APPair, BayesianNetwork, JointTable, StructureOptions,
    STRUCTURE_STAGE,
};
use crate::charts::PatternConstraint;
use crate::data::{
    discretize_all, load_csv, Attribute, Bins, Column, Dataset, Discretizations, Domain, Encoded, SchemaDescriptor,
    DEFAULT_MAX_BINS,
};
use crate::dp::{laplace_noise, sample_index, split_budget, Accountant, BudgetSpec, NoiseSource, Privacy};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const MARGINALS_STAGE: &str = "marginals";
pub const DEFAULT_DEGREE: usize = 2;

/// `MW(r) = 1 + Σ_k w_k · 1[r ∈ P_k]` for every row.
pub fn mixture_weights(n: usize, patterns: &[PatternConstraint]) -> Result<Vec<f64>> {
    let mut mw = vec![1.0; n];
    for p in patterns {
        if !(p.weight >= 0.0) {
            return Err(Error::invalid(format!("pattern {} has negative weight", p.id)));
        }
        for &r in &p.records {
            let slot =
                mw.get_mut(r).ok_or_else(|| Error::invalid(format!("pattern {} references row {r} of {n}", p.id)))?;
            *slot += p.weight;
        }
    }
    Ok(mw)
}

/// Upper bound on any mixture weight, `1 + Σ w_k`.
pub fn weight_ceiling(patterns: &[PatternConstraint]) -> f64 {
    1.0 + patterns.iter().map(|p| p.weight).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyMarginal {
    pub table: JointTable,
    /// Laplace scale applied to each cell; 0 for derived or oracle tables.
    pub noise_scale: f64,
    /// Obtained by marginalizing another pair's noisy table.
    pub derived: bool,
    /// The noisy table clipped to all zeros and was replaced by uniform.
    pub degenerate: bool,
}

/// Clips negatives to 0 and renormalizes. An all-zero table becomes uniform;
/// the flag reports that case.
pub fn clip_and_normalize(cells: &[f64]) -> (Vec<f64>, bool) {
    let clipped: Vec<f64> = cells.iter().map(|&c| c.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        (clipped.iter().map(|c| c / total).collect(), false)
    } else {
        (vec![1.0 / cells.len() as f64; cells.len()], true)
    }
}

/// Per-cell Laplace scale when `noised` of `d` marginals share `ε2`.
pub fn marginal_noise_scale(noised: usize, n: usize, epsilon2: f64) -> f64 {
    2.0 * noised as f64 / (n as f64 * epsilon2)
}

/// Privatizes the AP-pair joint tables. With `m = min(k, d − 1)`, every pair
/// whose attributes are covered by pair `m` (the first fully-parented pair)
/// is derived from that pair's noisy table by marginalization; the rest
/// share `ε2` uniformly.
pub fn noisy_marginals(
    enc: &Encoded,
    net: &BayesianNetwork,
    privacy: Privacy,
    epsilon2: f64,
    src: &mut NoiseSource,
    accountant: &mut Accountant,
    log: &mut Vec<String>,
) -> Result<Vec<NoisyMarginal>> {
    net.validate()?;
    let d = net.pairs.len();
    if enc.n_rows == 0 {
        return Err(Error::Empty("cannot privatize marginals of zero rows".into()));
    }
    if privacy == Privacy::Private && !(epsilon2 > 0.0) {
        return Err(Error::invalid(format!("marginal epsilon must be positive, got {epsilon2}")));
    }
    let m = net.k.min(d - 1);
    let anchor: Vec<&str> = net.pairs[m].vars();
    let derived: Vec<bool> =
        net.pairs.iter().enumerate().map(|(i, p)| i < m && p.vars().iter().all(|v| anchor.contains(v))).collect();
    let noised = derived.iter().filter(|&&x| !x).count();
    let scale = match privacy {
        Privacy::Private => marginal_noise_scale(noised, enc.n_rows, epsilon2),
        Privacy::Oracle => 0.0,
    };
    let per_table = epsilon2 / noised as f64;

    let mut out: Vec<Option<NoisyMarginal>> = vec![None; d];
    for (i, pair) in net.pairs.iter().enumerate() {
        if derived[i] {
            continue;
        }
        let exact = joint_table(enc, pair)?;
        let mut cells = exact.cells.clone();
        if privacy == Privacy::Private {
            for c in &mut cells {
                *c += laplace_noise(scale, src)?;
            }
            accountant.charge(MARGINALS_STAGE, per_table);
        }
        let (cells, degenerate) = clip_and_normalize(&cells);
        if degenerate {
            log.push(format!("marginal for {:?} clipped to zero; replaced by uniform", pair.child));
        }
        out[i] = Some(NoisyMarginal {
            table: JointTable { cells, ..exact },
            noise_scale: scale,
            derived: false,
            degenerate,
        });
    }
    let anchor_factor = out[m].as_ref().expect("anchor pair is never derived").table.as_factor();
    for (i, pair) in net.pairs.iter().enumerate() {
        if derived[i] {
            out[i] = Some(NoisyMarginal {
                table: JointTable::from_factor(pair.clone(), &anchor_factor)?,
                noise_scale: 0.0,
                derived: true,
                degenerate: false,
            });
        }
    }
    Ok(out.into_iter().map(|m| m.expect("every pair filled")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub pair: APPair,
    pub child_card: usize,
    pub parent_cards: Vec<usize>,
    /// One child distribution per parent configuration (mixed radix over
    /// the sorted parents).
    pub rows: Vec<Vec<f64>>,
}

pub fn derive_conditionals(marginals: &[NoisyMarginal]) -> Vec<ConditionalTable> {
    marginals
        .iter()
        .map(|m| ConditionalTable {
            pair: m.table.pair.clone(),
            child_card: m.table.child_card,
            parent_cards: m.table.parent_cards.clone(),
            rows: conditional_rows(&m.table),
        })
        .collect()
}

/// Draws a value uniformly inside a numerical bin.
fn realize(bins: &Bins, bin: usize, src: &mut NoiseSource) -> f64 {
    let Bins::Numerical { edges } = bins else { unreachable!("numerical bins") };
    let (lo, hi) = (edges[bin], edges[bin + 1]);
    let v = lo + src.uniform() * (hi - lo);
    let last = bin + 2 == edges.len();
    if !last && v >= hi {
        // Rounding must not push the value into the next bin.
        hi.next_down().max(lo)
    } else {
        v.min(hi)
    }
}

/// Samples `n_out` rows by ancestral sampling along the network order.
pub fn sample_synthetic(
    schema: &[Attribute],
    net: &BayesianNetwork,
    conditionals: &[ConditionalTable],
    n_out: usize,
    discs: &Discretizations,
    src: &mut NoiseSource,
) -> Result<Dataset> {
    net.validate()?;
    let d = schema.len();
    if net.pairs.len() != d || conditionals.len() != d {
        return Err(Error::invalid("network and conditionals must cover every attribute"));
    }
    let col_of = |name: &str| {
        schema.iter().position(|a| a.name == name).ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    };
    let plan: Vec<(usize, Vec<usize>, &ConditionalTable)> = net
        .pairs
        .iter()
        .map(|p| {
            let cond = conditionals
                .iter()
                .find(|c| c.pair == *p)
                .ok_or_else(|| Error::invalid(format!("no conditional for {:?}", p.child)))?;
            Ok((col_of(&p.child)?, p.parents.iter().map(|q| col_of(q)).collect::<Result<_>>()?, cond))
        })
        .collect::<Result<_>>()?;

    let mut bins = vec![0usize; d];
    let mut columns: Vec<Column> = schema
        .iter()
        .map(|a| match a.domain {
            Domain::Categorical(_) => Column::Categorical(Vec::with_capacity(n_out)),
            Domain::Numerical { .. } => Column::Numerical(Vec::with_capacity(n_out)),
        })
        .collect();
    for _ in 0..n_out {
        for (child, parents, cond) in &plan {
            let parent_index =
                parents.iter().zip(&cond.parent_cards).fold(0usize, |acc, (&p, &card)| acc * card + bins[p]);
            bins[*child] = sample_index(&cond.rows[parent_index], src);
        }
        for (j, col) in columns.iter_mut().enumerate() {
            match col {
                Column::Categorical(c) => c.push(bins[j] as u32),
                Column::Numerical(c) => c.push(realize(&discs.0[j].bins, bins[j], src)),
            }
        }
    }
    Dataset::new(schema.to_vec(), columns)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub epsilon: f64,
    #[serde(default = "default_fraction")]
    pub structure_fraction: f64,
    #[serde(default = "default_degree")]
    pub k: usize,
    /// Synthetic row count; defaults to the source row count.
    #[serde(default)]
    pub n_out: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_privacy")]
    pub privacy: Privacy,
}

fn default_fraction() -> f64 {
    crate::dp::DEFAULT_STRUCTURE_FRACTION
}

fn default_degree() -> usize {
    DEFAULT_DEGREE
}

fn default_privacy() -> Privacy {
    Privacy::Private
}

impl SchemeConfig {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        SchemeConfig {
            epsilon,
            structure_fraction: default_fraction(),
            k: DEFAULT_DEGREE,
            n_out: None,
            seed,
            privacy: Privacy::Private,
        }
    }
}

/// One complete privacy-protection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub id: String,
    pub config: SchemeConfig,
    pub budget: BudgetSpec,
    /// False when any stage ran in oracle mode.
    pub private: bool,
    pub weights: BTreeMap<String, f64>,
    #[serde(skip)]
    pub network: Option<BayesianNetwork>,
    #[serde(skip)]
    pub marginals: Vec<NoisyMarginal>,
    pub discretizations: Discretizations,
    #[serde(skip)]
    pub synthetic: Option<Dataset>,
    pub schema: SchemaDescriptor,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    pub log: Vec<String>,
    pub accountant: Accountant,
}

impl Scheme {
    pub fn network(&self) -> &BayesianNetwork {
        self.network.as_ref().expect("a generated scheme has a network")
    }

    pub fn synthetic(&self) -> &Dataset {
        self.synthetic.as_ref().expect("a generated scheme has synthetic data")
    }

    /// Writes `network.json`, `marginals.json`, `synthetic.csv` and
    /// `scheme.json` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("network.json"), serde_json::to_vec_pretty(self.network())?)?;
        std::fs::write(dir.join("marginals.json"), serde_json::to_vec_pretty(&self.marginals)?)?;
        std::fs::write(dir.join("synthetic.csv"), self.synthetic().to_csv())?;
        std::fs::write(dir.join("scheme.json"), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut scheme: Scheme = serde_json::from_slice(&std::fs::read(dir.join("scheme.json"))?)?;
        scheme.network = Some(serde_json::from_slice(&std::fs::read(dir.join("network.json"))?)?);
        scheme.marginals = serde_json::from_slice(&std::fs::read(dir.join("marginals.json"))?)?;
        let csv = std::fs::read(dir.join("synthetic.csv"))?;
        scheme.synthetic = Some(load_csv(&csv, Some(&scheme.schema))?);
        Ok(scheme)
    }
}

/// Runs the full pipeline on `ds`. Randomness comes from three labelled
/// substreams of `config.seed` so each stage is reproducible on its own.
pub fn generate_scheme(
    ds: &Dataset,
    discs: &Discretizations,
    patterns: &[PatternConstraint],
    config: &SchemeConfig,
) -> Result<Scheme> {
    if ds.n_rows() == 0 {
        return Err(Error::Empty("cannot synthesize from zero rows".into()));
    }
    let budget = split_budget(config.epsilon, config.structure_fraction)?;
    let enc = Encoded::new(ds, discs)?;
    let mw = mixture_weights(ds.n_rows(), patterns)?;
    let root = NoiseSource::new(config.seed);
    let mut accountant = Accountant::default();
    let mut log = Vec::new();
    let private = config.privacy == Privacy::Private;
    if private {
        accountant.open(STRUCTURE_STAGE, budget.epsilon_structure);
        accountant.open(MARGINALS_STAGE, budget.epsilon_marginals);
    } else {
        log.push("oracle mode: noise disabled, output is NOT differentially private".into());
    }

    let opts = StructureOptions {
        k: config.k,
        privacy: config.privacy,
        epsilon: budget.epsilon_structure,
        w_max: weight_ceiling(patterns),
    };
    let network = learn_structure(&enc, &mw, opts, &mut root.substream("structure"), &mut accountant)?;
    let marginals = noisy_marginals(
        &enc,
        &network,
        config.privacy,
        budget.epsilon_marginals,
        &mut root.substream("marginals"),
        &mut accountant,
        &mut log,
    )?;
    let conditionals = derive_conditionals(&marginals);
    let n_out = config.n_out.unwrap_or(ds.n_rows());
    let synthetic =
        sample_synthetic(ds.schema(), &network, &conditionals, n_out, discs, &mut root.substream("sampling"))?;
    if private {
        // Sequential composition: each stage consumes exactly its allotment.
        for stage in [STRUCTURE_STAGE, MARGINALS_STAGE] {
            let c = accountant.charges.iter().find(|c| c.stage == stage).expect("opened");
            debug_assert!(
                c.spent == 0.0 || (c.spent - c.allotted).abs() <= 1e-9 * c.allotted,
                "stage {stage} spent {} of {}",
                c.spent,
                c.allotted
            );
            accountant.settle(stage);
        }
    }
    Ok(Scheme {
        id: String::new(),
        config: config.clone(),
        budget,
        private,
        weights: patterns.iter().map(|p| (p.id.clone(), p.weight)).collect(),
        network: Some(network),
        marginals,
        discretizations: discs.clone(),
        synthetic: Some(synthetic),
        schema: ds.schema_descriptor(),
        seed: config.seed,
        created_at: None,
        metrics: None,
        log,
        accountant,
    })
}

/// Discretizes with the default bin bound and generates a scheme.
pub fn generate_default(ds: &Dataset, patterns: &[PatternConstraint], config: &SchemeConfig) -> Result<Scheme> {
    let discs = discretize_all(ds, DEFAULT_MAX_BINS)?;
    generate_scheme(ds, &discs, patterns, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::{PatternType, Selection};

    fn pattern(id: &str, w: f64, records: Vec<usize>) -> PatternConstraint {
        PatternConstraint {
            id: id.into(),
            pattern_type: PatternType::Order,
            chart: "c".into(),
            selection: Selection::Bars { bars: vec!["a".into()] },
            weight: w,
            records,
        }
    }

    #[test]
    fn mixture_weight_examples() {
        assert_eq!(mixture_weights(3, &[]).unwrap(), vec![1.0; 3]);
        let ps = [pattern("P0", 0.5, vec![0, 1]), pattern("P1", 0.5, vec![0])];
        assert_eq!(mixture_weights(2, &ps).unwrap(), vec![2.0, 1.5]);
        assert_eq!(mixture_weights(2, &[pattern("P0", 4.0, vec![1])]).unwrap(), vec![1.0, 5.0]);
        assert!(mixture_weights(2, &[pattern("P0", 1.0, vec![2])]).is_err());
    }

    #[test]
    fn clip_example() {
        let noisy = [0.9 - 0.2, 0.1 + 0.2];
        let (c, flag) = clip_and_normalize(&noisy);
        assert!(!flag);
        assert!((c[0] - 0.7).abs() < 1e-12 && (c[1] - 0.3).abs() < 1e-12);
        let (c, flag) = clip_and_normalize(&[-0.1, -0.2]);
        assert!(flag);
        assert_eq!(c, vec![0.5, 0.5]);
    }

    #[test]
    fn noise_scale_formula() {
        assert!((marginal_noise_scale(4, 1000, 1.0) - 0.008).abs() < 1e-15);
    }

    #[test]
    fn derive_examples() {
        let t = |cells: Vec<f64>| NoisyMarginal {
            table: JointTable { pair: APPair::new("x", &["p"]), child_card: 2, parent_cards: vec![2], cells },
            noise_scale: 0.0,
            derived: false,
            degenerate: false,
        };
        let c = derive_conditionals(&[t(vec![0.5, 0.0, 0.0, 0.5])]);
        assert_eq!(c[0].rows, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let c = derive_conditionals(&[t(vec![0.4, 0.1, 0.1, 0.4])]);
        assert!((c[0].rows[0][0] - 0.8).abs() < 1e-12 && (c[0].rows[1][1] - 0.8).abs() < 1e-12);
        let c = derive_conditionals(&[t(vec![0.5, 0.5, 0.0, 0.0])]);
        assert_eq!(c[0].rows[1], vec![0.5, 0.5]);
    }

    #[test]
    fn sample_zero_rows() {
        let ds = load_csv(b"a\nu\nv\n", None).unwrap();
        let cfg = SchemeConfig { n_out: Some(0), ..SchemeConfig::new(1.0, 1) };
        let s = generate_default(&ds, &[], &cfg).unwrap();
        assert_eq!(s.synthetic().n_rows(), 0);
        assert_eq!(s.synthetic().schema(), ds.schema());
    }
}
