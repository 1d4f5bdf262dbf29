//! Deterministic synthetic fixtures shaped like census extracts, used by
//! tests, benchmarks and the bundled example configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::charts::{Aggregate, ChartSpec, ChartType, Region, Selection};
use crate::data::{Attribute, Dataset, Value};
use crate::error::Result;

pub const ADULT_SEED: u64 = 20_240_917;
pub const ADULT_ROWS: usize = 1000;

pub const EDUCATION: [&str; 6] = ["11th", "Bachelors", "Doctorate", "HS-grad", "Masters", "Some-college"];
const EDU_PROBS: [f64; 6] = [0.10, 0.20, 0.05, 0.32, 0.10, 0.23];
/// Income band per education level, in `EDUCATION` order. Doctorate and
/// Masters move up one band in mid-career.
const EDU_BAND: [usize; 6] = [0, 1, 1, 0, 1, 0];
const EDU_FACTOR: [f64; 6] = [0.8, 1.0, 1.1, 1.0, 1.0, 1.15];
/// Band centres in thousands.
const INCOME_BANDS: [f64; 3] = [24.0, 48.0, 110.0];
const WORKCLASS: [&str; 4] = ["Federal-gov", "Local-gov", "Private", "Self-emp"];
const MARITAL: [&str; 4] = ["Divorced", "Married", "Never-married", "Widowed"];
const OCCUPATION: [&str; 5] = ["Admin", "Craft", "Professional", "Sales", "Service"];
const SEX: [&str; 2] = ["Female", "Male"];

fn pick(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Census-like table with 8 attributes:
/// `age, workclass, education, marital_status, occupation, sex,
/// hours_per_week, income`. Age comes from three life-stage groups. Income
/// falls in three bands: graduate degrees reach the top band only in
/// mid-career, which forms a dense age/income cluster. Marital status
/// follows age, occupation follows sex and education, and hours follow
/// occupation and sex.
pub fn adult_like(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = [(0.30, 24.0, 4.0), (0.45, 45.0, 6.0), (0.25, 67.0, 6.0)];
    let hours_noise = Normal::<f64>::new(0.0, 8.0).expect("valid normal");
    let income_noise = LogNormal::new(0.0, 0.15).expect("valid lognormal");
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let stage = pick(&mut rng, &stages.map(|s| s.0));
        let (_, mu, sd) = stages[stage];
        let age: f64 = Normal::<f64>::new(mu, sd).expect("valid normal").sample(&mut rng).round().clamp(17.0, 90.0);
        let sex = pick(&mut rng, &[0.33, 0.67]);
        let edu = pick(&mut rng, &EDU_PROBS);
        let marital = match stage {
            0 => pick(&mut rng, &[0.03, 0.12, 0.84, 0.01]),
            1 => pick(&mut rng, &[0.15, 0.62, 0.21, 0.02]),
            _ => pick(&mut rng, &[0.18, 0.55, 0.07, 0.20]),
        };
        let advanced = matches!(edu, 1 | 2 | 4);
        let occupation = match (sex, advanced) {
            (0, true) => pick(&mut rng, &[0.25, 0.02, 0.55, 0.10, 0.08]),
            (0, false) => pick(&mut rng, &[0.40, 0.03, 0.07, 0.20, 0.30]),
            (_, true) => pick(&mut rng, &[0.08, 0.10, 0.62, 0.15, 0.05]),
            (_, false) => pick(&mut rng, &[0.10, 0.45, 0.05, 0.20, 0.20]),
        };
        let workclass = if occupation == 2 {
            pick(&mut rng, &[0.12, 0.20, 0.55, 0.13])
        } else {
            pick(&mut rng, &[0.03, 0.07, 0.78, 0.12])
        };
        let hours_shift = [0.0, 3.0, 5.0, 2.0, -6.0][occupation] + if sex == 1 { 3.0 } else { -2.0 };
        let hours: f64 = (40.0 + hours_shift + hours_noise.sample(&mut rng)).round().clamp(1.0, 99.0);
        let band = EDU_BAND[edu] + usize::from(stage == 1 && EDU_BAND[edu] == 1 && edu != 1);
        let income: f64 = (INCOME_BANDS[band] * EDU_FACTOR[edu] * income_noise.sample(&mut rng) * 10.0).round() / 10.0;
        rows.push(vec![
            Value::Num(age),
            Value::Cat(WORKCLASS[workclass].into()),
            Value::Cat(EDUCATION[edu].into()),
            Value::Cat(MARITAL[marital].into()),
            Value::Cat(OCCUPATION[occupation].into()),
            Value::Cat(SEX[sex].into()),
            Value::Num(hours),
            Value::Num(income.clamp(5.0, 250.0)),
        ]);
    }
    let schema = vec![
        Attribute::numerical("age", 17.0, 90.0),
        Attribute::categorical("workclass", WORKCLASS),
        Attribute::categorical("education", EDUCATION),
        Attribute::categorical("marital_status", MARITAL),
        Attribute::categorical("occupation", OCCUPATION),
        Attribute::categorical("sex", SEX),
        Attribute::numerical("hours_per_week", 1.0, 99.0),
        Attribute::numerical("income", 5.0, 250.0),
    ]
    .into_iter()
    .collect::<Result<Vec<_>>>()
    .expect("static schema is valid");
    Dataset::from_rows(schema, &rows).expect("generated rows match the schema")
}

/// The bundled 1000-row census-like fixture.
pub fn adult() -> Dataset {
    adult_like(ADULT_ROWS, ADULT_SEED)
}

/// Chart and selection for each pattern type on the census-like fixture:
/// an order pattern over the three degree bars of mean income, a cluster
/// pattern on the age/income scatter, and a correlation pattern over the
/// rising part of the income-by-age line.
pub fn adult_charts() -> Vec<(ChartSpec, Selection)> {
    vec![
        (
            ChartSpec::grouped("income_by_education", ChartType::Bar, "education", Some("income"), Aggregate::Mean),
            Selection::Bars { bars: ["Bachelors", "Doctorate", "Masters"].map(String::from).to_vec() },
        ),
        (
            ChartSpec::scatter("age_income", "age", "income"),
            Selection::Region { region: Region::Rect { x_min: 33.0, x_max: 60.0, y_min: 80.0, y_max: 160.0 } },
        ),
        (
            ChartSpec::grouped("income_by_age", ChartType::Line, "age", Some("income"), Aggregate::Mean)
                .with_step(10.0),
            Selection::Interval { lo: 17.0, hi: 50.0 },
        ),
    ]
}

/// Wide table for performance runs: `d` attributes alternating categorical
/// and numerical, each depending on the previous one or two.
pub fn wide(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let cats = ["a", "b", "c", "d", "e"];
    let mut latent = vec![vec![0.0f64; d]; n];
    for row in latent.iter_mut() {
        for j in 0..d {
            let parent = if j > 0 { row[j - 1] } else { 0.0 };
            let grand = if j > 1 { row[j - 2] } else { 0.0 };
            row[j] = 0.7 * parent - 0.3 * grand + noise.sample(&mut rng);
        }
    }
    let schema: Vec<Attribute> = (0..d)
        .map(|j| {
            let name = format!("a{j:02}");
            if j % 2 == 0 {
                Attribute::categorical(&name, cats)
            } else {
                Attribute::numerical(&name, -10.0, 10.0)
            }
        })
        .collect::<Result<_>>()
        .expect("static schema is valid");
    let rows: Vec<Vec<Value>> = latent
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &z)| {
                    if j % 2 == 0 {
                        let b = ((z + 2.5).floor() as i64).clamp(0, 4) as usize;
                        Value::Cat(cats[b].into())
                    } else {
                        Value::Num((z * 100.0).round() / 100.0)
                    }
                })
                .map(|v| match v {
                    Value::Num(x) => Value::Num(x.clamp(-10.0, 10.0)),
                    other => other,
                })
                .collect()
        })
        .collect();
    Dataset::from_rows(schema, &rows).expect("generated rows match the schema")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(adult_like(50, 1), adult_like(50, 1));
        assert_ne!(adult_like(50, 1), adult_like(50, 2));
        let w = wide(20, 15, 3);
        assert_eq!((w.n_rows(), w.n_attrs()), (20, 15));
    }
}
