//! Laplace and exponential mechanisms, a seedable splittable noise source,
//! and privacy-budget accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STRUCTURE_FRACTION: f64 = 0.5;

/// Seedable PRNG (ChaCha8). Identical seeds yield identical draw sequences.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this source's seed and a label. Does
    /// not advance `self`.
    pub fn substream(&self, label: &str) -> NoiseSource {
        NoiseSource::new(splitmix64(self.seed ^ splitmix64(fnv1a(label))))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on the open interval `(-0.5, 0.5)`.
    fn centered_open(&mut self) -> f64 {
        loop {
            let u = self.uniform() - 0.5;
            if u > -0.5 {
                return u;
            }
        }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// One draw from `Lap(0, b)` by inverse CDF.
pub fn laplace_noise(b: f64, src: &mut NoiseSource) -> Result<f64> {
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("laplace scale must be finite and non-negative, got {b}")));
    }
    if b == 0.0 {
        return Ok(0.0);
    }
    let u = src.centered_open();
    Ok(u.signum() * b * (1.0 - 2.0 * u.abs()).ln())
}

pub fn laplace_mechanism(values: &[f64], sensitivity: f64, epsilon: f64, src: &mut NoiseSource) -> Result<Vec<f64>> {
    if !(sensitivity > 0.0) || !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "laplace mechanism needs positive sensitivity and epsilon, got {sensitivity} and {epsilon}"
        )));
    }
    let b = sensitivity / epsilon;
    values.iter().map(|v| Ok(v + laplace_noise(b, src)?)).collect()
}

/// Selection probabilities `exp(εq_i / 2Δq)` normalized, max-shifted.
pub fn exponential_probabilities(scores: &[f64], sensitivity: f64, epsilon: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("exponential mechanism needs at least one candidate"));
    }
    if !(sensitivity > 0.0) || !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "exponential mechanism needs positive sensitivity and epsilon, got {sensitivity} and {epsilon}"
        )));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|q| (epsilon * (q - max) / (2.0 * sensitivity)).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

pub fn exponential_select(scores: &[f64], sensitivity: f64, epsilon: f64, src: &mut NoiseSource) -> Result<usize> {
    let p = exponential_probabilities(scores, sensitivity, epsilon)?;
    Ok(sample_index(&p, src))
}

/// Inverse-CDF draw from a normalized probability vector.
pub fn sample_index(p: &[f64], src: &mut NoiseSource) -> usize {
    let u = src.uniform();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum just below 1; take the last non-zero.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub epsilon_total: f64,
    pub epsilon_structure: f64,
    pub epsilon_marginals: f64,
}

/// `x`, then alternately one ulp further above and below, `reach` steps each.
fn ulp_neighbours(x: f64, reach: usize) -> impl Iterator<Item = f64> {
    let (mut up, mut down) = (x, x);
    std::iter::once(x).chain((0..reach).flat_map(move |_| {
        up = up.next_up();
        down = down.next_down();
        [up, down]
    }))
}

pub fn split_budget(epsilon_total: f64, structure_fraction: f64) -> Result<BudgetSpec> {
    if !(epsilon_total > 0.0) || !epsilon_total.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive and finite, got {epsilon_total}")));
    }
    if !(structure_fraction > 0.0 && structure_fraction < 1.0) {
        return Err(Error::invalid(format!("structure fraction must lie in (0, 1), got {structure_fraction}")));
    }
    // Search a few ulps around the nominal split for a pair whose
    // floating-point sum is exactly ε.
    let exact = ulp_neighbours(structure_fraction * epsilon_total, 32).find_map(|e1| {
        ulp_neighbours(epsilon_total - e1, 4)
            .find(|&e2| e1 > 0.0 && e2 > 0.0 && e1 + e2 == epsilon_total)
            .map(|e2| (e1, e2))
    });
    let Some((e1, e2)) = exact else {
        return Err(Error::invalid("budget split is not representable"));
    };
    Ok(BudgetSpec { epsilon_total, epsilon_structure: e1, epsilon_marginals: e2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Privacy {
    Private,
    /// Noise disabled and argmax selection. Not differentially private.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCharge {
    pub stage: String,
    pub allotted: f64,
    pub spent: f64,
}

/// Records every ε charge made by a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accountant {
    pub charges: Vec<StageCharge>,
    /// ε of each exponential-mechanism selection, in order.
    pub selections: Vec<f64>,
}

impl Accountant {
    pub fn open(&mut self, stage: &str, allotted: f64) {
        self.charges.push(StageCharge { stage: stage.to_string(), allotted, spent: 0.0 });
    }

    /// Adds to a stage's spend. A stage that was never opened is recorded
    /// with no allotment.
    pub fn charge(&mut self, stage: &str, epsilon: f64) {
        match self.charges.iter_mut().find(|c| c.stage == stage) {
            Some(c) => c.spent += epsilon,
            None => self.charges.push(StageCharge { stage: stage.to_string(), allotted: 0.0, spent: epsilon }),
        }
    }

    pub fn record_selection(&mut self, stage: &str, epsilon: f64) {
        self.selections.push(epsilon);
        self.charge(stage, epsilon);
    }

    /// Marks a stage as fully spent, so that the recorded total equals its
    /// allotment exactly.
    pub fn settle(&mut self, stage: &str) {
        if let Some(c) = self.charges.iter_mut().find(|c| c.stage == stage) {
            c.spent = c.allotted;
        }
    }

    pub fn spent(&self, stage: &str) -> f64 {
        self.charges.iter().filter(|c| c.stage == stage).map(|c| c.spent).sum()
    }

    pub fn total(&self) -> f64 {
        self.charges.iter().map(|c| c.spent).sum()
    }
}
