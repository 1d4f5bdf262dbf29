#![allow(dead_code)]

use dpchart_core::data::{discretize_all, Attribute, Dataset, Discretizations, Encoded, Value, DEFAULT_MAX_BINS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn attr_name(j: usize) -> String {
    format!("a{j}")
}

/// Categorical dataset from explicit codes, one inner vec per row.
pub fn categorical(cards: &[usize], rows: &[Vec<usize>]) -> Dataset {
    let schema: Vec<Attribute> = cards
        .iter()
        .enumerate()
        .map(|(j, &c)| Attribute::categorical(&attr_name(j), (0..c).map(|v| format!("v{v}"))).unwrap())
        .collect();
    let rows: Vec<Vec<Value>> = rows.iter().map(|r| r.iter().map(|&v| Value::Cat(format!("v{v}"))).collect()).collect();
    Dataset::from_rows(schema, &rows).unwrap()
}

/// Random categorical dataset where each attribute copies its predecessor
/// with probability `tie`, so there is structure to find.
pub fn random_categorical(seed: u64, n: usize, cards: &[usize], tie: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut row: Vec<usize> = Vec::with_capacity(cards.len());
            for (j, &c) in cards.iter().enumerate() {
                let v = if j > 0 && rng.random::<f64>() < tie { row[j - 1] % c } else { rng.random_range(0..c) };
                row.push(v);
            }
            row
        })
        .collect();
    categorical(cards, &rows)
}

pub fn encode(ds: &Dataset) -> (Discretizations, Encoded) {
    let discs = discretize_all(ds, DEFAULT_MAX_BINS).unwrap();
    let enc = Encoded::new(ds, &discs).unwrap();
    (discs, enc)
}

/// `(cards, rows)` with `d ∈ [1, max_d]`, cards in `[2, max_card]`,
/// `n ∈ [1, max_n]`.
pub fn small_table(
    max_d: usize,
    max_card: usize,
    max_n: usize,
) -> impl Strategy<Value = (Vec<usize>, Vec<Vec<usize>>)> {
    prop::collection::vec(2..=max_card, 1..=max_d).prop_flat_map(move |cards| {
        let row = cards.iter().map(|&c| (0..c).boxed()).collect::<Vec<_>>();
        (Just(cards), prop::collection::vec(row, 1..=max_n))
    })
}
