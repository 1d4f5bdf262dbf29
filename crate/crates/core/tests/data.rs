use dpchart_core::data::{
    apply_filter, discretize, kmeans_1d, load_csv, Attribute, Bins, Dataset, FilterSpec, Predicate, Value,
};
use dpchart_core::Error;
use proptest::prelude::*;

fn mixed(rows: &[(f64, usize, f64)]) -> Dataset {
    let schema = vec![
        Attribute::numerical("x", -100.0, 100.0).unwrap(),
        Attribute::categorical("c", ["p", "q", "r"]).unwrap(),
        Attribute::numerical("y", 0.0, 1.0).unwrap(),
    ];
    let rows: Vec<Vec<Value>> = rows
        .iter()
        .map(|&(x, c, y)| vec![Value::Num(x), Value::Cat(["p", "q", "r"][c].into()), Value::Num(y)])
        .collect();
    Dataset::from_rows(schema, &rows).unwrap()
}

fn rows_strategy() -> impl Strategy<Value = Vec<(f64, usize, f64)>> {
    prop::collection::vec((-100.0f64..=100.0, 0usize..3, 0.0f64..=1.0), 0..80)
}

fn filter_strategy() -> impl Strategy<Value = FilterSpec> {
    (
        prop::option::of((-100.0f64..100.0, 0.0f64..100.0)),
        prop::option::of(prop::sample::subsequence(vec!["p", "q", "r"], 0..=3)),
    )
        .prop_map(|(range, values)| {
            let mut f = FilterSpec::default();
            if let Some((lo, w)) = range {
                f = f.with("x", Predicate::Range { min: lo, max: lo + w });
            }
            if let Some(v) = values {
                f = f.with("c", Predicate::Values { values: v.into_iter().map(String::from).collect() });
            }
            f
        })
}

/// Minimal SSE over all contiguous partitions of sorted data into `k`
/// groups, by exhaustive search over cut positions.
fn best_partition_sse(xs: &[f64], k: usize) -> f64 {
    fn sse(s: &[f64]) -> f64 {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|x| (x - m).powi(2)).sum()
    }
    fn go(xs: &[f64], k: usize) -> f64 {
        if k == 1 {
            return sse(xs);
        }
        (1..=xs.len() - (k - 1)).map(|cut| sse(&xs[..cut]) + go(&xs[cut..], k - 1)).fold(f64::INFINITY, f64::min)
    }
    go(xs, k)
}

proptest! {
    #[test]
    fn filtering_is_idempotent(rows in rows_strategy(), f in filter_strategy()) {
        let ds = mixed(&rows);
        let once = apply_filter(&ds, &f).unwrap();
        let twice = apply_filter(&once, &f).unwrap();
        prop_assert_eq!(&once, &twice);
        // Every kept row satisfies the predicates; every dropped row fails one.
        let kept = f.matching_rows(&ds).unwrap();
        for r in 0..ds.n_rows() {
            let Value::Num(x) = ds.value(r, 0) else { unreachable!() };
            let c = ds.category(r, 1).unwrap();
            let ok = f.predicates.iter().all(|(name, p)| match (name.as_str(), p) {
                ("x", Predicate::Range { min, max }) => x >= *min && x <= *max,
                ("c", Predicate::Values { values }) => values.iter().any(|v| v == c),
                _ => unreachable!(),
            });
            prop_assert_eq!(ok, kept.contains(&r));
        }
    }

    #[test]
    fn csv_round_trip_is_value_identical(rows in rows_strategy()) {
        let ds = mixed(&rows);
        let back = load_csv(ds.to_csv().as_bytes(), Some(&ds.schema_descriptor())).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn bins_partition_the_data(xs in prop::collection::vec(-100.0f64..=100.0, 1..120), max_k in 1usize..9) {
        let rows: Vec<(f64, usize, f64)> = xs.iter().map(|&x| (x, 0, 0.5)).collect();
        let ds = mixed(&rows);
        let d = discretize(&ds, "x", max_k).unwrap();
        let Bins::Numerical { edges } = &d.bins else { panic!("numerical bins expected") };
        prop_assert!(d.n_bins() >= 1 && d.n_bins() <= max_k);
        prop_assert_eq!(edges[0], -100.0);
        prop_assert_eq!(*edges.last().unwrap(), 100.0);
        prop_assert!(edges.windows(2).all(|w| w[0] <= w[1]));
        for &x in &xs {
            let b = d.bin_of_number(x);
            let hits = (0..d.n_bins())
                .filter(|&i| {
                    let (lo, hi) = d.bin_range(i).unwrap();
                    let last = i + 1 == d.n_bins();
                    x >= lo && (x < hi || (last && x <= hi))
                })
                .count();
            prop_assert_eq!(hits, 1, "value {} falls in {} bins", x, hits);
            let (lo, hi) = d.bin_range(b).unwrap();
            prop_assert!(x >= lo && x <= hi);
        }
        prop_assert_eq!(discretize(&ds, "x", max_k).unwrap(), d);
    }

    #[test]
    fn kmeans_never_beats_the_optimal_partition(xs in prop::collection::vec(0.0f64..50.0, 3..12), k in 1usize..4) {
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        prop_assume!(k <= xs.len());
        let (_, sse) = kmeans_1d(&xs, k);
        prop_assert!(sse + 1e-9 >= best_partition_sse(&xs, k));
    }
}

#[test]
fn five_row_filter_example() {
    let csv = "age,heart_attack\n25,no\n30,yes\n45,no\n60,yes\n70,no\n";
    let ds = load_csv(csv.as_bytes(), None).unwrap();
    let f = FilterSpec::default().with("age", Predicate::Range { min: 30.0, max: 60.0 });
    let out = apply_filter(&ds, &f).unwrap();
    assert_eq!(out.numeric("age").unwrap(), &[30.0, 45.0, 60.0]);
    assert_eq!(apply_filter(&ds, &FilterSpec::default()).unwrap(), ds);
    let none = FilterSpec::default().with("age", Predicate::Range { min: 100.0, max: 200.0 });
    assert_eq!(apply_filter(&ds, &none).unwrap().n_rows(), 0);
}

#[test]
fn elbow_splits_two_tight_groups() {
    let csv = "v\n0\n0.1\n0.2\n10.0\n10.1\n";
    let ds = load_csv(csv.as_bytes(), None).unwrap();
    let d = discretize(&ds, "v", 5).unwrap();
    assert_eq!(d.n_bins(), 2);
    let (_, hi) = d.bin_range(0).unwrap();
    assert!(hi > 0.2 && hi < 10.0);
}

#[test]
fn load_errors_carry_locations() {
    match load_csv(b"a,b\n1,2\n3\n", None) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
    let schema = serde_json::from_str::<Vec<dpchart_core::data::AttributeDescriptor>>(
        r#"[{"name":"a","type":"categorical","domain":["x"]}]"#,
    )
    .unwrap();
    match load_csv(b"a\nx\ny\n", Some(&schema)) {
        Err(Error::Domain { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
    match load_csv(b"a,b\n1,\n", None) {
        Err(Error::MissingCell { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
}
