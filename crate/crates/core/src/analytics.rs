//! Explanation artifacts for the model view: pattern relationship graph
//! (MDS positions and influence edges), Sankey flows, layered network
//! layout and before/after attribute distributions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{learn_structure, BayesianNetwork, StructureOptions};
use crate::charts::{PatternConstraint, PatternType};
use crate::data::{Column, Dataset, Discretizations, Encoded};
use crate::dp::{Accountant, NoiseSource, Privacy};
use crate::error::{Error, Result};
use crate::metrics::wasserstein_1d;

/// Weight given to the single boosted pattern when probing influence.
pub const INFLUENCE_BOOST: f64 = 4.0;
pub const KDE_GRID: usize = 128;

fn subset_values(ds: &Dataset, col: usize, rows: &[usize]) -> Vec<f64> {
    match ds.column(col) {
        Column::Categorical(codes) => rows.iter().map(|&r| codes[r] as f64).collect(),
        Column::Numerical(xs) => {
            let (min, max) = ds.schema()[col].range().expect("numerical");
            let w = if max > min { max - min } else { 1.0 };
            rows.iter().map(|&r| (xs[r] - min) / w).collect()
        }
    }
}

/// Mean over attributes of the W₁ distance between two record subsets:
/// numerical values are scaled to `[0, 1]` by the domain, categorical values
/// use their bin index.
pub fn pattern_distance(ds: &Dataset, a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("pattern distance needs non-empty patterns".into()));
    }
    let mut total = 0.0;
    for col in 0..ds.n_attrs() {
        total += wasserstein_1d(&subset_values(ds, col, a), &subset_values(ds, col, b))?;
    }
    Ok(total / ds.n_attrs() as f64)
}

/// Classical (Torgerson) MDS into two dimensions. Each eigenvector's
/// largest-magnitude entry is made positive; one point sits at the origin
/// and two points at `(∓d/2, 0)`.
pub fn mds_layout(dist: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = dist.len();
    if n == 0 {
        return Err(Error::invalid("MDS needs at least one point"));
    }
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(Error::invalid("distance matrix is not square"));
        }
        if row[i] != 0.0 {
            return Err(Error::invalid("distance matrix has a non-zero diagonal"));
        }
        for j in 0..i {
            if (row[j] - dist[j][i]).abs() > 1e-9 * row[j].abs().max(1.0) {
                return Err(Error::invalid("distance matrix is not symmetric"));
            }
        }
    }
    match n {
        1 => return Ok(vec![[0.0, 0.0]]),
        2 => {
            let h = dist[0][1] / 2.0;
            return Ok(vec![[-h, 0.0], [h, 0.0]]);
        }
        _ => {}
    }
    let sq = DMatrix::from_fn(n, n, |i, j| dist[i][j] * dist[i][j]);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut coords = vec![[0.0; 2]; n];
    for (axis, &e) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[e];
        if lambda <= 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(e);
        let pivot = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a))).expect("n > 0");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i][axis] = sign * v[i] * lambda.sqrt();
        }
    }
    Ok(coords)
}

/// `|E_a ∩ E_b| − |E_a Δ E_b|` over directed `(child, parent)` edges.
pub fn influence_score(a: &BayesianNetwork, b: &BayesianNetwork) -> i64 {
    let (ea, eb) = (a.edges(), b.edges());
    let inter = ea.intersection(&eb).count() as i64;
    let sym = ea.symmetric_difference(&eb).count() as i64;
    inter - sym
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEdge {
    pub source: String,
    pub target: String,
    pub score: i64,
    pub sign: Sign,
    pub magnitude: u64,
}

/// Oracle-mode network with only `boosted` weighted.
pub fn probe_network(enc: &Encoded, boosted: &PatternConstraint, k: usize) -> Result<BayesianNetwork> {
    let mut mw = vec![1.0; enc.n_rows];
    for &r in &boosted.records {
        *mw.get_mut(r).ok_or_else(|| Error::invalid(format!("pattern {} row {r} out of range", boosted.id)))? +=
            INFLUENCE_BOOST;
    }
    let opts = StructureOptions { k, privacy: Privacy::Oracle, epsilon: 0.0, w_max: 1.0 + INFLUENCE_BOOST };
    learn_structure(enc, &mw, opts, &mut NoiseSource::new(0), &mut Accountant::default())
}

pub fn influence_edges(enc: &Encoded, patterns: &[PatternConstraint], k: usize) -> Result<Vec<InfluenceEdge>> {
    let nets: Vec<BayesianNetwork> = patterns.par_iter().map(|p| probe_network(enc, p, k)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for i in 0..patterns.len() {
        for j in i + 1..patterns.len() {
            let score = influence_score(&nets[i], &nets[j]);
            out.push(InfluenceEdge {
                source: patterns[i].id.clone(),
                target: patterns[j].id.clone(),
                score,
                sign: if score >= 0 { Sign::Positive } else { Sign::Negative },
                magnitude: score.unsigned_abs(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternNode {
    pub id: String,
    pub pattern_type: PatternType,
    pub size: usize,
    pub weight: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationshipGraph {
    pub nodes: Vec<PatternNode>,
    pub edges: Vec<InfluenceEdge>,
}

impl RelationshipGraph {
    /// Edge between two patterns in either direction.
    pub fn edge(&self, a: &str, b: &str) -> Option<&InfluenceEdge> {
        self.edges.iter().find(|e| (e.source == a && e.target == b) || (e.source == b && e.target == a))
    }
}

pub fn relationship_graph(
    ds: &Dataset,
    discs: &Discretizations,
    patterns: &[PatternConstraint],
    k: usize,
) -> Result<RelationshipGraph> {
    let n = patterns.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pattern_distance(ds, &patterns[i].records, &patterns[j].records)?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let pos = if n == 0 { Vec::new() } else { mds_layout(&dist)? };
    let nodes = patterns
        .iter()
        .zip(pos)
        .map(|(p, xy)| PatternNode {
            id: p.id.clone(),
            pattern_type: p.pattern_type,
            size: p.records.len(),
            weight: p.weight,
            x: xy[0],
            y: xy[1],
        })
        .collect();
    let edges = if n >= 2 { influence_edges(&Encoded::new(ds, discs)?, patterns, k)? } else { Vec::new() };
    Ok(RelationshipGraph { nodes, edges })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowBin {
    pub label: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowColumn {
    pub attribute: String,
    pub bins: Vec<FlowBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowLink {
    /// Index of the left column; the right column is `column + 1`.
    pub column: usize,
    pub source: usize,
    pub target: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubFlow {
    pub pattern: String,
    pub size: usize,
    pub links: Vec<FlowLink>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowData {
    pub n: usize,
    pub columns: Vec<FlowColumn>,
    pub links: Vec<FlowLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlight: Option<SubFlow>,
}

fn count_links(codes: &[Vec<u32>], rows: impl Iterator<Item = usize> + Clone) -> Vec<FlowLink> {
    let mut out = Vec::new();
    for c in 0..codes.len().saturating_sub(1) {
        let mut counts = BTreeMap::new();
        for r in rows.clone() {
            *counts.entry((codes[c][r] as usize, codes[c + 1][r] as usize)).or_insert(0usize) += 1;
        }
        out.extend(counts.into_iter().map(|((s, t), count)| FlowLink { column: c, source: s, target: t, count }));
    }
    out
}

/// Column-to-column bin flows over `columns`, with an optional sub-flow
/// restricted to one pattern's records.
pub fn sankey_flow(
    ds: &Dataset,
    discs: &Discretizations,
    columns: &[String],
    highlight: Option<&PatternConstraint>,
) -> Result<FlowData> {
    let enc = Encoded::new(ds, discs)?;
    let idx: Vec<usize> = columns.iter().map(|c| enc.index_of(c)).collect::<Result<_>>()?;
    let codes: Vec<Vec<u32>> = idx.iter().map(|&i| enc.codes[i].clone()).collect();
    let flow_columns = idx
        .iter()
        .zip(&codes)
        .map(|(&i, col)| {
            let d = &discs.0[i];
            let mut counts = vec![0usize; d.n_bins()];
            for &b in col {
                counts[b as usize] += 1;
            }
            FlowColumn {
                attribute: d.attribute.clone(),
                bins: counts
                    .into_iter()
                    .enumerate()
                    .map(|(b, count)| FlowBin { label: d.bin_label(b), count })
                    .collect(),
            }
        })
        .collect();
    let links = count_links(&codes, 0..ds.n_rows());
    let highlight = highlight
        .map(|p| {
            if let Some(&r) = p.records.iter().find(|&&r| r >= ds.n_rows()) {
                return Err(Error::invalid(format!("pattern {} row {r} out of range", p.id)));
            }
            Ok(SubFlow {
                pattern: p.id.clone(),
                size: p.records.len(),
                links: count_links(&codes, p.records.iter().copied()),
            })
        })
        .transpose()?;
    Ok(FlowData { n: ds.n_rows(), columns: flow_columns, links, highlight })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutNode {
    pub name: String,
    pub layer: usize,
    pub slot: usize,
    /// Slot position spread evenly over `(0, 1)`.
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutEdge {
    pub parent: String,
    pub child: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub nodes: Vec<LayoutNode>,
    pub edges: Vec<LayoutEdge>,
}

impl NetworkLayout {
    pub fn layer(&self, name: &str) -> Option<usize> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.layer)
    }
}

/// Layer = longest path from any root; slots in name order within a layer.
pub fn network_layout(net: &BayesianNetwork) -> NetworkLayout {
    let mut layer: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &net.pairs {
        let l = p.parents.iter().map(|q| layer[q.as_str()] + 1).max().unwrap_or(0);
        layer.insert(&p.child, l);
    }
    let mut by_layer: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (name, &l) in &layer {
        by_layer.entry(l).or_default().push(name);
    }
    let mut nodes = Vec::new();
    for (l, names) in by_layer {
        let count = names.len();
        for (slot, name) in names.into_iter().enumerate() {
            nodes.push(LayoutNode {
                name: name.to_string(),
                layer: l,
                slot,
                y: (slot + 1) as f64 / (count + 1) as f64,
            });
        }
    }
    let edges = net
        .pairs
        .iter()
        .flat_map(|p| p.parents.iter().map(move |q| LayoutEdge { parent: q.clone(), child: p.child.clone() }))
        .collect();
    NetworkLayout { nodes, edges }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeDistribution {
    Density {
        attribute: String,
        grid: Vec<f64>,
        before: Vec<f64>,
        after: Vec<f64>,
        bandwidth_before: f64,
        bandwidth_after: f64,
    },
    Histogram {
        attribute: String,
        categories: Vec<String>,
        before: Vec<f64>,
        after: Vec<f64>,
    },
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^(−1/5)`, falling back to σ
/// and then to a hundredth of the range when the spread is zero.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (s.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        let range = s[s.len() - 1] - s[0];
        if range > 0.0 {
            range / 100.0
        } else {
            1.0
        }
    }
}

pub fn gaussian_kde(xs: &[f64], grid: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter().map(|&g| xs.iter().map(|&x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>() * norm).collect()
}

pub fn node_distributions(original: &Dataset, synthetic: &Dataset, attr: &str) -> Result<NodeDistribution> {
    let j = original.index_of(attr)?;
    let js = synthetic.index_of(attr)?;
    if original.n_rows() == 0 || synthetic.n_rows() == 0 {
        return Err(Error::Empty(format!("no rows to describe {attr:?}")));
    }
    match (original.column(j), synthetic.column(js)) {
        (Column::Numerical(a), Column::Numerical(b)) => {
            let (min, max) = original.schema()[j].range().expect("numerical");
            let grid: Vec<f64> = (0..KDE_GRID).map(|i| min + (max - min) * i as f64 / (KDE_GRID - 1) as f64).collect();
            let (ha, hb) = (silverman_bandwidth(a), silverman_bandwidth(b));
            Ok(NodeDistribution::Density {
                attribute: attr.to_string(),
                before: gaussian_kde(a, &grid, ha),
                after: gaussian_kde(b, &grid, hb),
                grid,
                bandwidth_before: ha,
                bandwidth_after: hb,
            })
        }
        (Column::Categorical(a), Column::Categorical(b)) => {
            let cats = original.schema()[j].categories().unwrap_or_default().to_vec();
            let hist = |codes: &[u32]| {
                let mut h = vec![0.0; cats.len()];
                for &c in codes {
                    h[c as usize] += 1.0;
                }
                let n = codes.len() as f64;
                h.into_iter().map(|x| x / n).collect::<Vec<f64>>()
            };
            Ok(NodeDistribution::Histogram {
                attribute: attr.to_string(),
                before: hist(a),
                after: hist(b),
                categories: cats,
            })
        }
        _ => Err(Error::Schema(format!("attribute {attr:?} has different kinds in the two datasets"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::APPair;

    fn net(pairs: Vec<APPair>, k: usize) -> BayesianNetwork {
        BayesianNetwork { pairs, k }
    }

    #[test]
    fn mds_closed_forms() {
        assert_eq!(mds_layout(&[vec![0.0]]).unwrap(), vec![[0.0, 0.0]]);
        let two = mds_layout(&[vec![0.0, 4.0], vec![4.0, 0.0]]).unwrap();
        assert_eq!(two, vec![[-2.0, 0.0], [2.0, 0.0]]);
        let zero = mds_layout(&vec![vec![0.0; 3]; 3]).unwrap();
        assert!(zero.iter().all(|p| p[0].abs() < 1e-12 && p[1].abs() < 1e-12));
        let tri = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let pos = mds_layout(&tri).unwrap();
        for i in 0..3 {
            for j in 0..i {
                let d = ((pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2)).sqrt();
                assert!((d - 1.0).abs() < 1e-9, "{d}");
            }
        }
        assert!(mds_layout(&[vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
    }

    #[test]
    fn influence_cases() {
        let a = net(vec![APPair::new("a", &[]), APPair::new("b", &["a"]), APPair::new("c", &["b"])], 1);
        assert_eq!(influence_score(&a, &a), 2);
        let b = net(vec![APPair::new("c", &[]), APPair::new("a", &["c"]), APPair::new("b", &["c"])], 1);
        assert_eq!(influence_score(&a, &b), -4);
        assert_eq!(influence_score(&b, &a), -4);
    }

    #[test]
    fn layouts() {
        let product = net(vec![APPair::new("a", &[]), APPair::new("b", &[]), APPair::new("c", &[])], 0);
        assert!(network_layout(&product).nodes.iter().all(|n| n.layer == 0));
        let diamond = net(
            vec![
                APPair::new("A", &[]),
                APPair::new("B", &["A"]),
                APPair::new("C", &["A"]),
                APPair::new("D", &["B", "C"]),
            ],
            2,
        );
        let l = network_layout(&diamond);
        assert_eq!((l.layer("A"), l.layer("B"), l.layer("C"), l.layer("D")), (Some(0), Some(1), Some(1), Some(2)));
        let skip = net(vec![APPair::new("A", &[]), APPair::new("B", &["A"]), APPair::new("C", &["A", "B"])], 2);
        assert_eq!(network_layout(&skip).layer("C"), Some(2));
    }

    #[test]
    fn silverman_positive() {
        assert!(silverman_bandwidth(&[1.0, 1.0, 1.0]) > 0.0);
        assert!(silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0]) > 0.0);
    }
}
