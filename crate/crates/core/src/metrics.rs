//! Pattern-retention and statistical-fidelity metrics comparing original and
//! synthetic data.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::charts::{render_chart_data, ChartData, ChartSpec, PatternConstraint, PatternType, Selection};
use crate::data::{apply_filter, Column, Dataset, FilterSpec, Kind, Predicate};
use crate::error::{Error, Result};

fn non_empty(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() {
        Err(Error::Empty(format!("{what} needs a non-empty sample")))
    } else {
        Ok(())
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Walks the merged support of two sorted samples, calling `f(x, next_x,
/// F_a(x), F_b(x))` for each gap between consecutive support points.
fn ecdf_walk(a: &[f64], b: &[f64], mut f: impl FnMut(f64, f64, f64, f64)) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => x,
        };
        f(x, next, i as f64 / na, j as f64 / nb);
    }
}

/// W₁ between two empirical distributions, `∫ |F_a − F_b| dx`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    non_empty(a, "wasserstein distance")?;
    non_empty(b, "wasserstein distance")?;
    let mut total = 0.0;
    ecdf_walk(&sorted(a), &sorted(b), |x, next, fa, fb| total += (fa - fb).abs() * (next - x));
    Ok(total)
}

/// Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    non_empty(a, "KS statistic")?;
    non_empty(b, "KS statistic")?;
    let mut d: f64 = 0.0;
    ecdf_walk(&sorted(a), &sorted(b), |_, _, fa, fb| d = d.max((fa - fb).abs()));
    Ok(d)
}

fn axis_widths(a: &ChartData) -> Result<Vec<(f64, f64)>> {
    let pts = a.points().ok_or_else(|| Error::invalid("cluster metric needs scatter data"))?;
    if pts.is_empty() {
        return Err(Error::Empty("cluster metric on an empty chart".into()));
    }
    Ok(pts.iter().map(|p| (p.x, p.y)).collect())
}

/// Sum over both axes of the 1-D W₁ distance between all chart points, each
/// axis divided by its domain width (a zero width counts as 1).
pub fn cluster_metric(before: &ChartData, after: &ChartData, width_x: f64, width_y: f64) -> Result<f64> {
    let b = axis_widths(before)?;
    let a = axis_widths(after)?;
    let bx: Vec<f64> = b.iter().map(|p| p.0).collect();
    let by: Vec<f64> = b.iter().map(|p| p.1).collect();
    let ax: Vec<f64> = a.iter().map(|p| p.0).collect();
    let ay: Vec<f64> = a.iter().map(|p| p.1).collect();
    let norm = |w: f64| if w > 0.0 { w } else { 1.0 };
    Ok(wasserstein_1d(&bx, &ax)? / norm(width_x) + wasserstein_1d(&by, &ay)? / norm(width_y))
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("pearson needs paired samples"));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `|ρ_before − ρ_after|` for two `(x, y)` point sets.
pub fn pearson_diff(before: (&[f64], &[f64]), after: (&[f64], &[f64])) -> Result<f64> {
    Ok((pearson(before.0, before.1)? - pearson(after.0, after.1)?).abs())
}

/// Dynamic time warping with `|a_i − b_j|` cost and no window.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    non_empty(a, "DTW")?;
    non_empty(b, "DTW")?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            cur[j] = (x - b[j - 1]).abs() + prev[j].min(cur[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

fn check_keys(a: &[(String, f64)], b: &[(String, f64)]) -> Result<()> {
    let ka: Vec<&String> = a.iter().map(|p| &p.0).collect();
    let mut kb: Vec<&String> = b.iter().map(|p| &p.0).collect();
    let mut sa = ka.clone();
    sa.sort();
    kb.sort();
    if sa != kb {
        return Err(Error::KeyMismatch(format!("{ka:?} vs {kb:?}")));
    }
    Ok(())
}

/// NDCG of the synthetic ranking against original values as relevances.
/// Relevances are shifted to a zero minimum when any is negative; ties in
/// the synthetic ranking break by key.
pub fn ndcg(original: &[(String, f64)], synthetic: &[(String, f64)]) -> Result<f64> {
    check_keys(original, synthetic)?;
    if original.is_empty() {
        return Err(Error::Empty("NDCG needs at least one bar".into()));
    }
    if original.len() == 1 {
        return Ok(1.0);
    }
    let min = original.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let shift = if min < 0.0 { -min } else { 0.0 };
    let rel: BTreeMap<&str, f64> = original.iter().map(|(k, v)| (k.as_str(), v + shift)).collect();
    let mut predicted: Vec<&(String, f64)> = synthetic.iter().collect();
    predicted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = predicted.iter().enumerate().map(|(i, (k, _))| rel[k.as_str()] * discount(i + 1)).sum();
    let mut ideal: Vec<f64> = rel.values().copied().collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().enumerate().map(|(i, r)| r * discount(i + 1)).sum();
    if idcg == 0.0 {
        return Ok(1.0);
    }
    Ok((dcg / idcg).clamp(0.0, 1.0))
}

/// ℓ2 distance of bar values matched by key.
pub fn euclidean_bars(before: &[(String, f64)], after: &[(String, f64)]) -> Result<f64> {
    check_keys(before, after)?;
    let b: BTreeMap<&str, f64> = before.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    Ok(after.iter().map(|(k, v)| (b[k.as_str()] - v).powi(2)).sum::<f64>().sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Chi-square goodness of fit of `observed` counts against `reference`
/// proportions. Categories with zero expected count form an "other"
/// bucket; if it holds observations it is merged into the category with the
/// smallest positive expected count, otherwise it is dropped.
pub fn chi_square_gof(reference: &[f64], observed: &[f64]) -> Result<ChiSquareResult> {
    if reference.len() != observed.len() {
        return Err(Error::invalid("chi-square needs equal category counts"));
    }
    let ref_total: f64 = reference.iter().sum();
    let obs_total: f64 = observed.iter().sum();
    if !(ref_total > 0.0) || !(obs_total > 0.0) {
        return Err(Error::Empty("chi-square needs non-empty samples".into()));
    }
    let mut expected: Vec<f64> = Vec::new();
    let mut obs: Vec<f64> = Vec::new();
    let mut other = 0.0;
    for (r, o) in reference.iter().zip(observed) {
        if *r > 0.0 {
            expected.push(r / ref_total * obs_total);
            obs.push(*o);
        } else {
            other += o;
        }
    }
    if other > 0.0 {
        let smallest = (0..expected.len())
            .min_by(|&a, &b| expected[a].total_cmp(&expected[b]))
            .expect("some category has positive reference mass");
        obs[smallest] += other;
    }
    if expected.len() < 2 {
        return Ok(ChiSquareResult {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
            warning: Some("fewer than 2 categories after merging".into()),
        });
    }
    let statistic: f64 = expected.iter().zip(&obs).map(|(e, o)| (o - e).powi(2) / e).sum();
    let dof = expected.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquareResult { statistic, dof, p_value: dist.sf(statistic).clamp(0.0, 1.0), warning: None })
}

/// Chi-square p-value of a synthetic categorical column against the
/// original column's frequencies.
pub fn cs_pvalue(before: &[u32], after: &[u32], n_categories: usize) -> Result<ChiSquareResult> {
    let count = |codes: &[u32]| {
        let mut c = vec![0.0; n_categories];
        for &x in codes {
            c[x as usize] += 1.0;
        }
        c
    };
    chi_square_gof(&count(before), &count(after))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeFidelity {
    pub attribute: String,
    pub kind: Kind,
    /// Raw KS statistic D (numerical attributes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<f64>,
    /// `1 − D`, so that higher is better.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_fidelity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_square: Option<ChiSquareResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternMetric {
    pub metric: String,
    /// Value on synthetic data.
    pub value: f64,
    /// Value the metric takes on the original data itself.
    pub reference: f64,
    pub delta: f64,
}

impl PatternMetric {
    fn new(metric: &str, value: f64, reference: f64) -> Self {
        PatternMetric { metric: metric.into(), value, reference, delta: value - reference }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub pattern: String,
    pub pattern_type: PatternType,
    pub weight: f64,
    pub metrics: Vec<PatternMetric>,
    pub warnings: Vec<String>,
}

impl PatternReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == name).map(|m| m.value)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ks_fidelity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cs_pvalue: Option<f64>,
    pub n_patterns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// How the KS entry is reported.
    pub ks_convention: String,
    pub attributes: Vec<AttributeFidelity>,
    pub patterns: Vec<PatternReport>,
    pub summary: Summary,
}

impl MetricsReport {
    pub fn pattern(&self, id: &str) -> Option<&PatternReport> {
        self.patterns.iter().find(|p| p.pattern == id)
    }

    /// Flat `(column, value)` pairs for one ranking-list row.
    pub fn flat(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(v) = self.summary.mean_ks_fidelity {
            out.push(("mean_ks_fidelity".into(), v));
        }
        if let Some(v) = self.summary.mean_cs_pvalue {
            out.push(("mean_cs_pvalue".into(), v));
        }
        for p in &self.patterns {
            for m in &p.metrics {
                out.push((format!("{}.{}", p.pattern, m.metric), m.value));
            }
        }
        out
    }
}

/// Ranking list as CSV: one row per `(scheme id, epsilon, report)`.
pub fn ranking_csv(rows: &[(String, f64, &MetricsReport)]) -> String {
    let mut columns: Vec<String> = Vec::new();
    for (_, _, r) in rows {
        for (c, _) in r.flat() {
            if !columns.contains(&c) {
                columns.push(c);
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["scheme".to_string(), "epsilon".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).expect("write to Vec");
    for (id, eps, r) in rows {
        let flat: BTreeMap<String, f64> = r.flat().into_iter().collect();
        let mut rec = vec![id.clone(), format!("{eps}")];
        rec.extend(columns.iter().map(|c| flat.get(c).map(|v| format!("{v}")).unwrap_or_default()));
        w.write_record(&rec).expect("write to Vec");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn bar_values(data: &ChartData, bars: &[String], warnings: &mut Vec<String>, label: &str) -> Vec<(String, f64)> {
    let groups = data.groups().unwrap_or_default();
    bars.iter()
        .map(|b| {
            let v = groups.iter().find(|g| &g.key == b).map(|g| g.value);
            if v.is_none() {
                warnings.push(format!("bar {b:?} is empty in the {label} data; counted as 0"));
            }
            (b.clone(), v.unwrap_or(0.0))
        })
        .collect()
}

/// `(x, value)` series of a line chart restricted to rows with x in
/// `[lo, hi]`.
fn line_series(ds: &Dataset, spec: &ChartSpec, lo: f64, hi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let filter = FilterSpec::default().with(&spec.x, Predicate::Range { min: lo, max: hi });
    let sub = apply_filter(ds, &filter)?;
    let data = render_chart_data(&sub, spec)?;
    let groups = data.groups().unwrap_or_default();
    let xs = groups.iter().enumerate().map(|(i, g)| g.lo.unwrap_or(i as f64)).collect();
    let ys = groups.iter().map(|g| g.value).collect();
    Ok((xs, ys))
}

fn evaluate_pattern(
    original: &Dataset,
    synthetic: &Dataset,
    pattern: &PatternConstraint,
    spec: &ChartSpec,
) -> Result<PatternReport> {
    let mut report = PatternReport {
        pattern: pattern.id.clone(),
        pattern_type: pattern.pattern_type,
        weight: pattern.weight,
        metrics: Vec::new(),
        warnings: Vec::new(),
    };
    match (&pattern.selection, pattern.pattern_type) {
        (Selection::Region { .. }, PatternType::Cluster) => {
            let before = render_chart_data(original, spec)?;
            let after = render_chart_data(synthetic, spec)?;
            let wx = original.attribute(&spec.x)?.width();
            let wy = original.attribute(spec.y.as_deref().unwrap_or_default())?.width();
            report.metrics.push(PatternMetric::new("cluster_metric", cluster_metric(&before, &after, wx, wy)?, 0.0));
        }
        (Selection::Interval { lo, hi }, PatternType::Correlation) => {
            let (bx, by) = line_series(original, spec, *lo, *hi)?;
            let (ax, ay) = line_series(synthetic, spec, *lo, *hi)?;
            match dtw(&by, &ay) {
                Ok(v) => report.metrics.push(PatternMetric::new("dtw", v, 0.0)),
                Err(e) => report.warnings.push(format!("dtw: {e}")),
            }
            match pearson_diff((&bx, &by), (&ax, &ay)) {
                Ok(v) => report.metrics.push(PatternMetric::new("pearson_diff", v, 0.0)),
                Err(e) => report.warnings.push(format!("pearson_diff: {e}")),
            }
        }
        (Selection::Bars { bars }, PatternType::Order) => {
            let before = render_chart_data(original, spec)?;
            let after = render_chart_data(synthetic, spec)?;
            let bv = bar_values(&before, bars, &mut report.warnings, "original");
            let av = bar_values(&after, bars, &mut report.warnings, "synthetic");
            report.metrics.push(PatternMetric::new("ndcg", ndcg(&bv, &av)?, 1.0));
            report.metrics.push(PatternMetric::new("euclidean", euclidean_bars(&bv, &av)?, 0.0));
        }
        _ => return Err(Error::Incompatible(format!("pattern {} selection does not match its type", pattern.id))),
    }
    Ok(report)
}

/// Per-attribute fidelity and per-pattern retention of `synthetic` against
/// `original`. Patterns whose chart is missing or whose metrics fail are
/// reported with a warning instead of failing the whole report.
pub fn evaluate_scheme(
    original: &Dataset,
    synthetic: &Dataset,
    patterns: &[PatternConstraint],
    charts: &[ChartSpec],
) -> Result<MetricsReport> {
    if original.schema() != synthetic.schema() {
        return Err(Error::Schema("synthetic data does not share the original schema".into()));
    }
    let mut attributes = Vec::new();
    for (j, attr) in original.schema().iter().enumerate() {
        let mut f = AttributeFidelity {
            attribute: attr.name.clone(),
            kind: attr.kind(),
            ks: None,
            ks_fidelity: None,
            chi_square: None,
            error: None,
        };
        let res = match (original.column(j), synthetic.column(j)) {
            (Column::Numerical(a), Column::Numerical(b)) => ks_statistic(a, b).map(|d| {
                f.ks = Some(d);
                f.ks_fidelity = Some(1.0 - d);
            }),
            (Column::Categorical(a), Column::Categorical(b)) => {
                let k = attr.categories().map(<[String]>::len).unwrap_or(0);
                cs_pvalue(a, b, k).map(|c| f.chi_square = Some(c))
            }
            _ => unreachable!("schemas are equal"),
        };
        if let Err(e) = res {
            f.error = Some(e.to_string());
        }
        attributes.push(f);
    }
    let patterns: Vec<PatternReport> = patterns
        .iter()
        .map(|p| {
            let spec = charts.iter().find(|c| c.id == p.chart);
            let res = match spec {
                Some(spec) => evaluate_pattern(original, synthetic, p, spec),
                None => Err(Error::UnknownId(p.chart.clone())),
            };
            res.unwrap_or_else(|e| PatternReport {
                pattern: p.id.clone(),
                pattern_type: p.pattern_type,
                weight: p.weight,
                metrics: Vec::new(),
                warnings: vec![e.to_string()],
            })
        })
        .collect();
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let summary = Summary {
        mean_ks_fidelity: mean(attributes.iter().filter_map(|a| a.ks_fidelity).collect()),
        mean_cs_pvalue: mean(attributes.iter().filter_map(|a| a.chi_square.as_ref().map(|c| c.p_value)).collect()),
        n_patterns: patterns.len(),
    };
    Ok(MetricsReport {
        ks_convention: "ks is the raw statistic D; ks_fidelity is 1 - D".into(),
        attributes,
        patterns,
        summary,
    })
}
