//! Paired-seed comparison of weighted and unweighted runs on the census-like
//! fixture. Usage: `directional [k] [epsilon] [seeds] [weight]`.

use dpchart_core::charts::{PatternCatalog, PatternType};
use dpchart_core::data::{discretize_all, DEFAULT_MAX_BINS};
use dpchart_core::engine::{generate_scheme, SchemeConfig};
use dpchart_core::fixtures::{adult, adult_charts};
use dpchart_core::metrics::evaluate_scheme;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let k = arg(1, 2.0) as usize;
    let eps = arg(2, 2.0);
    let seeds = arg(3, 25.0) as u64;
    let weight = arg(4, 4.0);
    let ds = adult();
    let discs = discretize_all(&ds, DEFAULT_MAX_BINS).unwrap();
    for d in &discs.0 {
        println!("{} bins={}", d.attribute, d.n_bins());
    }
    let only: Option<String> = std::env::var("ONLY").ok();
    for (spec, mut sel) in adult_charts() {
        if only.as_deref().is_some_and(|o| o != spec.id) {
            continue;
        }
        if let (Ok(b), dpchart_core::charts::Selection::Bars { bars }) = (std::env::var("BARS"), &mut sel) {
            *bars = b.split(',').map(String::from).collect();
        }
        let mut cat = PatternCatalog::default();
        let p = cat.add(&ds, &spec, sel, weight).unwrap().clone();
        let metric = match p.pattern_type {
            PatternType::Order => "ndcg",
            PatternType::Cluster => "cluster_metric",
            PatternType::Correlation => "dtw",
        };
        let higher_better = p.pattern_type == PatternType::Order;
        let mut base = Vec::new();
        let mut weighted = Vec::new();
        let mut linked = [0usize; 2];
        let (ax, ay) = (spec.x.clone(), spec.y.clone().unwrap());
        for seed in 0..seeds {
            let cfg = SchemeConfig { k, ..SchemeConfig::new(eps, seed) };
            for (i, (w, out)) in [(0.0, &mut base), (weight, &mut weighted)].into_iter().enumerate() {
                let mut q = p.clone();
                q.weight = w;
                let s = generate_scheme(&ds, &discs, std::slice::from_ref(&q), &cfg).unwrap();
                if s.network().pairs.iter().any(|p| {
                    let v = p.vars();
                    v.contains(&ax.as_str()) && v.contains(&ay.as_str())
                }) {
                    linked[i] += 1;
                }
                let r = evaluate_scheme(&ds, s.synthetic(), &[q], std::slice::from_ref(&spec)).unwrap();
                out.push(r.patterns[0].metric(metric).unwrap_or(f64::NAN));
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let wins = base.iter().zip(&weighted).filter(|(b, w)| if higher_better { w > b } else { w < b }).count();
        println!(
            "{metric}: records={} base={:.4} weighted={:.4} wins={}/{} linked={:?}",
            p.records.len(),
            mean(&base),
            mean(&weighted),
            wins,
            seeds,
            linked
        );
    }
}
