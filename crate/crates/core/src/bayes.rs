//! Bayesian networks over discretized attributes: joint tables, entropy,
//! (weighted) mutual information and greedy structure learning.
//!
//! All logarithms are natural.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Encoded;
use crate::dp::{exponential_select, Accountant, NoiseSource, Privacy};
use crate::error::{Error, Result};

/// Largest joint table the KL check will enumerate.
pub const MAX_FULL_JOINT_CELLS: u128 = 1_000_000;

/// Attribute-parent pair. Parents are kept sorted by name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct APPair {
    pub child: String,
    pub parents: Vec<String>,
}

impl APPair {
    pub fn new(child: &str, parents: &[&str]) -> Self {
        let mut parents: Vec<String> = parents.iter().map(|p| p.to_string()).collect();
        parents.sort();
        APPair { child: child.to_string(), parents }
    }

    /// Attribute names in table order: parents then child.
    pub fn vars(&self) -> Vec<&str> {
        self.parents.iter().map(String::as_str).chain(std::iter::once(self.child.as_str())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkJson", try_from = "NetworkJson")]
pub struct BayesianNetwork {
    /// One pair per attribute, in topological order.
    pub pairs: Vec<APPair>,
    pub k: usize,
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    order: Vec<String>,
    pairs: Vec<APPair>,
    k: usize,
}

impl From<BayesianNetwork> for NetworkJson {
    fn from(n: BayesianNetwork) -> Self {
        NetworkJson { order: n.order(), pairs: n.pairs, k: n.k }
    }
}

impl TryFrom<NetworkJson> for BayesianNetwork {
    type Error = Error;

    fn try_from(j: NetworkJson) -> Result<Self> {
        let mut pairs = j.pairs;
        for p in &mut pairs {
            p.parents.sort();
        }
        let net = BayesianNetwork { pairs, k: j.k };
        if net.order() != j.order {
            return Err(Error::InvalidNetwork("order does not match the pair list".into()));
        }
        net.validate()?;
        Ok(net)
    }
}

impl BayesianNetwork {
    pub fn order(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.child.clone()).collect()
    }

    /// Directed `(child, parent)` edges.
    pub fn edges(&self) -> BTreeSet<(String, String)> {
        self.pairs.iter().flat_map(|p| p.parents.iter().map(move |q| (p.child.clone(), q.clone()))).collect()
    }

    pub fn pair(&self, child: &str) -> Option<&APPair> {
        self.pairs.iter().find(|p| p.child == child)
    }

    /// Checks every structural invariant: each attribute is a child exactly
    /// once, no self-parents, at most `k` parents, parents precede children.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in &self.pairs {
            if !seen.insert(p.child.as_str()) {
                return Err(Error::InvalidNetwork(format!("attribute {:?} is a child twice", p.child)));
            }
            if p.parents.contains(&p.child) {
                return Err(Error::InvalidNetwork(format!("attribute {:?} is its own parent", p.child)));
            }
            if p.parents.len() > self.k {
                return Err(Error::InvalidNetwork(format!(
                    "attribute {:?} has {} parents, bound is {}",
                    p.child,
                    p.parents.len(),
                    self.k
                )));
            }
            let distinct: BTreeSet<&String> = p.parents.iter().collect();
            if distinct.len() != p.parents.len() {
                return Err(Error::InvalidNetwork(format!("attribute {:?} lists a parent twice", p.child)));
            }
        }
        if let Some(first) = self.pairs.first() {
            if !first.parents.is_empty() {
                return Err(Error::InvalidNetwork("first attribute must have no parents".into()));
            }
        }
        for p in &self.pairs {
            for q in &p.parents {
                if !seen.contains(q.as_str()) {
                    return Err(Error::InvalidNetwork(format!("parent {q:?} of {:?} is not in the network", p.child)));
                }
            }
        }
        self.topological_order().map(|_| ())
    }

    /// Returns the stored order after checking that every parent precedes
    /// its child. A cyclic pair list is reported as [`Error::Cycle`].
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let pos: HashMap<&str, usize> = self.pairs.iter().enumerate().map(|(i, p)| (p.child.as_str(), i)).collect();
        let misordered = self
            .pairs
            .iter()
            .enumerate()
            .find(|(i, p)| p.parents.iter().any(|q| pos.get(q.as_str()).is_none_or(|&j| j >= *i)));
        let Some((_, bad)) = misordered else {
            return Ok(self.order());
        };
        // Kahn's algorithm tells a cycle apart from a mere ordering error.
        let mut indegree: HashMap<&str, usize> = self
            .pairs
            .iter()
            .map(|p| (p.child.as_str(), p.parents.iter().filter(|q| pos.contains_key(q.as_str())).count()))
            .collect();
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(n, _)| *n).collect();
        let mut removed = 0;
        while let Some(n) = ready.pop() {
            removed += 1;
            for p in &self.pairs {
                if p.parents.iter().any(|q| q == n) {
                    let d = indegree.get_mut(p.child.as_str()).expect("every child has an entry");
                    *d -= 1;
                    if *d == 0 {
                        ready.push(&p.child);
                    }
                }
            }
        }
        if removed < self.pairs.len() {
            let mut stuck: Vec<&str> = indegree.iter().filter(|(_, &d)| d > 0).map(|(n, _)| *n).collect();
            stuck.sort();
            return Err(Error::Cycle(stuck[0].to_string()));
        }
        Err(Error::InvalidNetwork(format!("a parent of {:?} does not precede it", bad.child)))
    }
}

/// Dense probability table over `vars` (row-major, last variable fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub vars: Vec<String>,
    pub cards: Vec<usize>,
    pub cells: Vec<f64>,
}

impl Factor {
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.cards.len()];
        for i in (0..self.cards.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    /// Sums out every variable not in `keep`; the result lists `keep` in
    /// the given order.
    pub fn marginalize(&self, keep: &[&str]) -> Result<Factor> {
        let pos: Vec<usize> = keep
            .iter()
            .map(|k| self.vars.iter().position(|v| v == k).ok_or_else(|| Error::UnknownAttribute(k.to_string())))
            .collect::<Result<_>>()?;
        let cards: Vec<usize> = pos.iter().map(|&p| self.cards[p]).collect();
        let mut out = Factor { vars: keep.iter().map(|s| s.to_string()).collect(), cards, cells: Vec::new() };
        out.cells = vec![0.0; out.cards.iter().product()];
        let out_strides = out.strides();
        let mut idx = vec![0usize; self.cards.len()];
        for &mass in &self.cells {
            let target: usize = pos.iter().zip(&out_strides).map(|(&p, &s)| idx[p] * s).sum();
            out.cells[target] += mass;
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.cards[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }
}

/// Empirical joint distribution of an AP pair. Cell index is
/// `parent_index * child_card + child_bin`, with the parent index in
/// mixed radix over the sorted parents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub pair: APPair,
    pub child_card: usize,
    pub parent_cards: Vec<usize>,
    pub cells: Vec<f64>,
}

impl JointTable {
    pub fn n_parent_configs(&self) -> usize {
        self.parent_cards.iter().product()
    }

    pub fn as_factor(&self) -> Factor {
        let mut cards = self.parent_cards.clone();
        cards.push(self.child_card);
        Factor { vars: self.pair.vars().into_iter().map(str::to_string).collect(), cards, cells: self.cells.clone() }
    }

    pub fn from_factor(pair: APPair, f: &Factor) -> Result<Self> {
        let vars = pair.vars();
        let g = f.marginalize(&vars)?;
        let child_card = *g.cards.last().expect("pair has a child");
        Ok(JointTable { parent_cards: g.cards[..g.cards.len() - 1].to_vec(), child_card, cells: g.cells, pair })
    }

    /// Child marginal `p(x)`.
    pub fn child_marginal(&self) -> Vec<f64> {
        let mut px = vec![0.0; self.child_card];
        for (i, &p) in self.cells.iter().enumerate() {
            px[i % self.child_card] += p;
        }
        px
    }

    /// Parent marginal `p(π)`.
    pub fn parent_marginal(&self) -> Vec<f64> {
        self.cells.chunks(self.child_card).map(|row| row.iter().sum()).collect()
    }
}

/// Per-row cell index of a pair's table.
pub(crate) fn cell_indices(enc: &Encoded, pair: &APPair) -> Result<(Vec<usize>, usize, Vec<usize>)> {
    let child = enc.index_of(&pair.child)?;
    let parents: Vec<usize> = pair.parents.iter().map(|p| enc.index_of(p)).collect::<Result<_>>()?;
    let child_card = enc.cards[child];
    let parent_cards: Vec<usize> = parents.iter().map(|&p| enc.cards[p]).collect();
    let mut idx = vec![0usize; enc.n_rows];
    for (&p, &card) in parents.iter().zip(&parent_cards) {
        for (i, &code) in idx.iter_mut().zip(&enc.codes[p]) {
            *i = *i * card + code as usize;
        }
    }
    for (i, &code) in idx.iter_mut().zip(&enc.codes[child]) {
        *i = *i * child_card + code as usize;
    }
    Ok((idx, child_card, parent_cards))
}

pub fn joint_table(enc: &Encoded, pair: &APPair) -> Result<JointTable> {
    if enc.n_rows == 0 {
        return Err(Error::Empty("joint table of a dataset with zero rows".into()));
    }
    let (idx, child_card, parent_cards) = cell_indices(enc, pair)?;
    let size = child_card * parent_cards.iter().product::<usize>();
    let mut counts = vec![0usize; size];
    for i in idx {
        counts[i] += 1;
    }
    let n = enc.n_rows as f64;
    Ok(JointTable {
        pair: pair.clone(),
        child_card,
        parent_cards,
        cells: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Per-cell MI terms `p(x,π) ln[p(x,π) / (p(x)p(π))]`; zero-mass cells give 0.
fn mi_terms(t: &JointTable) -> Vec<f64> {
    let px = t.child_marginal();
    let pp = t.parent_marginal();
    t.cells
        .iter()
        .enumerate()
        .map(|(i, &p)| if p > 0.0 { p * (p / (px[i % t.child_card] * pp[i / t.child_card])).ln() } else { 0.0 })
        .collect()
}

pub fn mutual_information(t: &JointTable) -> f64 {
    let i: f64 = mi_terms(t).iter().sum();
    if i < 0.0 && i > -1e-12 {
        0.0
    } else {
        i
    }
}

/// Mutual information with each cell scaled by the mean mixture weight of
/// its rows. Empty cells contribute 0.
pub fn weighted_mutual_information(enc: &Encoded, mw: &[f64], pair: &APPair) -> Result<f64> {
    if mw.len() != enc.n_rows {
        return Err(Error::invalid(format!("{} mixture weights for {} rows", mw.len(), enc.n_rows)));
    }
    if enc.n_rows == 0 {
        return Err(Error::Empty("weighted mutual information of zero rows".into()));
    }
    let (idx, child_card, parent_cards) = cell_indices(enc, pair)?;
    let size = child_card * parent_cards.iter().product::<usize>();
    let mut counts = vec![0usize; size];
    let mut weight = vec![0.0; size];
    for (&i, &w) in idx.iter().zip(mw) {
        counts[i] += 1;
        weight[i] += w;
    }
    let n = enc.n_rows as f64;
    let table = JointTable {
        pair: pair.clone(),
        child_card,
        parent_cards,
        cells: counts.iter().map(|&c| c as f64 / n).collect(),
    };
    let terms = mi_terms(&table);
    let factor = |i: usize| if counts[i] == 0 { 1.0 } else { weight[i] / counts[i] as f64 };
    Ok(terms.iter().enumerate().map(|(i, t)| factor(i) * t).sum())
}

/// Sensitivity of mutual information on an n-row table.
pub fn mi_sensitivity(n: usize) -> f64 {
    let n = n as f64;
    let first = (2.0 / n) * ((n + 1.0) / 2.0).ln();
    let second = if n > 1.0 { ((n - 1.0) / n) * ((n + 1.0) / (n - 1.0)).ln() } else { 0.0 };
    first + second
}

#[derive(Clone, Copy, Debug)]
pub struct StructureOptions {
    pub k: usize,
    pub privacy: Privacy,
    /// Structure budget ε1; ignored in oracle mode.
    pub epsilon: f64,
    /// Upper bound on any mixture weight, `1 + Σ w_k`.
    pub w_max: f64,
}

pub const STRUCTURE_STAGE: &str = "structure";

fn combinations(items: &[usize], r: usize) -> Vec<Vec<usize>> {
    fn go(items: &[usize], r: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            go(items, r, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, r, 0, &mut Vec::new(), &mut out);
    out
}

/// Candidate AP pairs for one greedy round: every unvisited child with every
/// parent set of size `min(k, |visited|)` drawn from the visited attributes.
pub fn candidates(names: &[String], visited: &[usize], k: usize) -> Vec<APPair> {
    let r = k.min(visited.len());
    let parent_sets = combinations(visited, r);
    let mut out = Vec::new();
    for (x, name) in names.iter().enumerate() {
        if visited.contains(&x) {
            continue;
        }
        for set in &parent_sets {
            let parents: Vec<&str> = set.iter().map(|&p| names[p].as_str()).collect();
            out.push(APPair::new(name, &parents));
        }
    }
    out
}

/// Greedy network construction. The first attribute is drawn uniformly at
/// random without budget (oracle mode: the lexicographically first name).
/// Each of the `d − 1` remaining rounds selects one candidate pair by the
/// exponential mechanism at `ε1 / (d − 1)`, or by argmax in oracle mode with
/// ties broken lexicographically on `(child, parents)`.
pub fn learn_structure(
    enc: &Encoded,
    mw: &[f64],
    opts: StructureOptions,
    src: &mut NoiseSource,
    accountant: &mut Accountant,
) -> Result<BayesianNetwork> {
    let d = enc.names.len();
    if d == 0 {
        return Err(Error::invalid("cannot learn a network over zero attributes"));
    }
    if enc.n_rows == 0 {
        return Err(Error::Empty("cannot learn a network from zero rows".into()));
    }
    if opts.privacy == Privacy::Private && !(opts.epsilon > 0.0) {
        return Err(Error::invalid(format!("structure epsilon must be positive, got {}", opts.epsilon)));
    }
    let first = match opts.privacy {
        Privacy::Private => src.below(d),
        Privacy::Oracle => (0..d).min_by(|&a, &b| enc.names[a].cmp(&enc.names[b])).expect("d >= 1"),
    };
    let mut visited = vec![first];
    let mut pairs = vec![APPair::new(&enc.names[first], &[])];
    let rounds = d - 1;
    let per_round = if rounds > 0 { opts.epsilon / rounds as f64 } else { 0.0 };
    // With n = 1 every score is 0 and the bound degenerates; any positive
    // value gives the same uniform choice.
    let sensitivity = (mi_sensitivity(enc.n_rows) * opts.w_max).max(f64::MIN_POSITIVE);
    while visited.len() < d {
        let cands = candidates(&enc.names, &visited, opts.k);
        let scores: Vec<f64> =
            cands.par_iter().map(|c| weighted_mutual_information(enc, mw, c)).collect::<Result<_>>()?;
        let chosen = match opts.privacy {
            Privacy::Private => {
                let i = exponential_select(&scores, sensitivity, per_round, src)?;
                accountant.record_selection(STRUCTURE_STAGE, per_round);
                i
            }
            Privacy::Oracle => argmax_lexicographic(&cands, &scores),
        };
        let pair = cands[chosen].clone();
        visited.push(enc.index_of(&pair.child)?);
        pairs.push(pair);
    }
    let net = BayesianNetwork { pairs, k: opts.k };
    net.validate()?;
    Ok(net)
}

/// Scores within this relative distance of the maximum count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

fn argmax_lexicographic(cands: &[APPair], scores: &[f64]) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOLERANCE * max.abs().max(1.0);
    (0..cands.len())
        .filter(|&i| scores[i] >= max - tol)
        .min_by(|&a, &b| cands[a].cmp(&cands[b]))
        .expect("at least one candidate")
}

/// Exact conditionals `Pr(X | Π)` from a joint table; zero-mass parent rows
/// become uniform.
pub fn conditional_rows(t: &JointTable) -> Vec<Vec<f64>> {
    t.cells
        .chunks(t.child_card)
        .map(|row| {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|p| p / s).collect()
            } else {
                vec![1.0 / t.child_card as f64; t.child_card]
            }
        })
        .collect()
}

/// Both sides of the KL decomposition of a network factorization:
/// `D_KL(Pr(A) ‖ Pr_N(A))` computed from the full joint, and
/// `−Σ I(X_i, Π_i) + Σ H(X_i) − H(A)`.
pub fn kl_decomposition_check(enc: &Encoded, net: &BayesianNetwork) -> Result<(f64, f64)> {
    net.validate()?;
    if enc.n_rows == 0 {
        return Err(Error::Empty("KL check on zero rows".into()));
    }
    let cells: u128 = enc.cards.iter().map(|&c| c as u128).product();
    if cells > MAX_FULL_JOINT_CELLS {
        return Err(Error::TooLarge { cells, limit: MAX_FULL_JOINT_CELLS });
    }
    let d = enc.names.len();
    let mut strides = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * enc.cards[i + 1];
    }
    let mut full = vec![0usize; cells as usize];
    for r in 0..enc.n_rows {
        let i: usize = (0..d).map(|j| enc.codes[j][r] as usize * strides[j]).sum();
        full[i] += 1;
    }
    let n = enc.n_rows as f64;
    let tables: Vec<JointTable> = net.pairs.iter().map(|p| joint_table(enc, p)).collect::<Result<_>>()?;
    let conds: Vec<Vec<Vec<f64>>> = tables.iter().map(conditional_rows).collect();
    let var_idx: Vec<(usize, Vec<usize>)> = net
        .pairs
        .iter()
        .map(|p| Ok((enc.index_of(&p.child)?, p.parents.iter().map(|q| enc.index_of(q)).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<_>>()?;

    let mut lhs = 0.0;
    let mut assignment = vec![0usize; d];
    for (cell, &count) in full.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let mut rem = cell;
        for j in 0..d {
            assignment[j] = rem / strides[j];
            rem %= strides[j];
        }
        let p = count as f64 / n;
        let mut log_q = 0.0;
        for (t, ((child, parents), rows)) in var_idx.iter().zip(&conds).enumerate() {
            let parent_index =
                parents.iter().zip(&tables[t].parent_cards).fold(0usize, |acc, (&q, &card)| acc * card + assignment[q]);
            log_q += rows[parent_index][assignment[*child]].ln();
        }
        lhs += p * (p.ln() - log_q);
    }

    let sum_i: f64 = tables.iter().map(mutual_information).sum();
    let sum_h: f64 = tables.iter().map(|t| entropy(&t.child_marginal())).sum();
    let h_all = entropy(&full.iter().map(|&c| c as f64 / n).collect::<Vec<_>>());
    Ok((lhs, -sum_i + sum_h - h_all))
}
