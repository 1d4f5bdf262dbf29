//! Chart specifications, chart-ready data, selections and the pattern
//! catalog that turns selections into weighted record subsets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{Column, Dataset, Kind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartType {
    Scatter,
    Line,
    Bar,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Count,
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    #[serde(default)]
    pub id: String,
    pub chart_type: ChartType,
    pub x: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    /// Bin width for a numerical x on line and bar charts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
}

impl ChartSpec {
    pub fn scatter(id: &str, x: &str, y: &str) -> Self {
        ChartSpec {
            id: id.into(),
            chart_type: ChartType::Scatter,
            x: x.into(),
            y: Some(y.into()),
            color: None,
            x_step: None,
            aggregate: None,
        }
    }

    pub fn grouped(id: &str, chart_type: ChartType, x: &str, y: Option<&str>, aggregate: Aggregate) -> Self {
        ChartSpec {
            id: id.into(),
            chart_type,
            x: x.into(),
            y: y.map(Into::into),
            color: None,
            x_step: None,
            aggregate: Some(aggregate),
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.x_step = Some(step);
        self
    }

    pub fn aggregate(&self) -> Aggregate {
        self.aggregate.unwrap_or_default()
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let kind = |name: &str| ds.attribute(name).map(|a| a.kind());
        let x_kind = kind(&self.x)?;
        match self.chart_type {
            ChartType::Scatter => {
                let y = self.y.as_deref().ok_or_else(|| Error::invalid("scatter chart needs y"))?;
                if x_kind != Kind::Numerical || kind(y)? != Kind::Numerical {
                    return Err(Error::invalid("scatter chart needs numerical x and y"));
                }
                if let Some(c) = &self.color {
                    if kind(c)? != Kind::Categorical {
                        return Err(Error::invalid("color must be a categorical attribute"));
                    }
                }
            }
            ChartType::Line | ChartType::Bar => {
                if self.color.is_some() {
                    return Err(Error::invalid("color is only supported on scatter charts"));
                }
                if x_kind == Kind::Numerical {
                    match self.x_step {
                        Some(s) if s > 0.0 && s.is_finite() => {}
                        _ => return Err(Error::invalid("numerical x on a line or bar chart needs a positive x_step")),
                    }
                }
                if self.aggregate() != Aggregate::Count {
                    let y = self.y.as_deref().ok_or_else(|| Error::invalid("mean and sum aggregates need y"))?;
                    if kind(y)? != Kind::Numerical {
                        return Err(Error::invalid("aggregated y must be numerical"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub row: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Category name, or the bin's lower edge.
    pub key: String,
    /// Bin bounds for numerical x.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    pub value: f64,
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChartData {
    Points { points: Vec<Point> },
    Groups { groups: Vec<Group> },
}

impl ChartData {
    pub fn points(&self) -> Option<&[Point]> {
        match self {
            ChartData::Points { points } => Some(points),
            ChartData::Groups { .. } => None,
        }
    }

    pub fn groups(&self) -> Option<&[Group]> {
        match self {
            ChartData::Groups { groups } => Some(groups),
            ChartData::Points { .. } => None,
        }
    }
}

/// Group membership of each row for a line or bar chart: `(group, key,
/// bounds)` per group and the group index of every row.
struct Grouping {
    keys: Vec<(String, Option<(f64, f64)>)>,
    of_row: Vec<usize>,
}

fn grouping(ds: &Dataset, spec: &ChartSpec) -> Result<Grouping> {
    let j = ds.index_of(&spec.x)?;
    let attr = &ds.schema()[j];
    match ds.column(j) {
        Column::Categorical(codes) => Ok(Grouping {
            keys: attr.categories().unwrap_or_default().iter().map(|c| (c.clone(), None)).collect(),
            of_row: codes.iter().map(|&c| c as usize).collect(),
        }),
        Column::Numerical(xs) => {
            let (min, max) = attr.range().expect("numerical");
            let step = spec.x_step.expect("validated");
            let n_bins = ((max - min) / step).floor() as usize + 1;
            let keys = (0..n_bins)
                .map(|b| {
                    let lo = min + b as f64 * step;
                    (format!("{lo}"), Some((lo, lo + step)))
                })
                .collect();
            let of_row = xs.iter().map(|&x| (((x - min) / step).floor() as usize).min(n_bins - 1)).collect();
            Ok(Grouping { keys, of_row })
        }
    }
}

/// Points for scatter charts; grouped aggregates for line and bar charts.
/// Count and sum report every group; mean omits empty groups.
pub fn render_chart_data(ds: &Dataset, spec: &ChartSpec) -> Result<ChartData> {
    spec.validate(ds)?;
    match spec.chart_type {
        ChartType::Scatter => {
            let xs = ds.numeric(&spec.x)?;
            let ys = ds.numeric(spec.y.as_deref().expect("validated"))?;
            let color = spec.color.as_deref().map(|c| ds.index_of(c)).transpose()?;
            let points = (0..ds.n_rows())
                .map(|r| Point {
                    x: xs[r],
                    y: ys[r],
                    color: color.and_then(|c| ds.category(r, c)).map(str::to_string),
                    row: r,
                })
                .collect();
            Ok(ChartData::Points { points })
        }
        ChartType::Line | ChartType::Bar => {
            let g = grouping(ds, spec)?;
            let mut rows = vec![Vec::new(); g.keys.len()];
            for (r, &b) in g.of_row.iter().enumerate() {
                rows[b].push(r);
            }
            let agg = spec.aggregate();
            let ys = match agg {
                Aggregate::Count => None,
                _ => Some(ds.numeric(spec.y.as_deref().expect("validated"))?),
            };
            let groups = g
                .keys
                .into_iter()
                .zip(rows)
                .filter_map(|((key, bounds), rows)| {
                    let value = match (agg, ys) {
                        (Aggregate::Count, _) => rows.len() as f64,
                        (Aggregate::Sum, Some(ys)) => rows.iter().map(|&r| ys[r]).sum(),
                        (Aggregate::Mean, Some(ys)) => {
                            if rows.is_empty() {
                                return None;
                            }
                            rows.iter().map(|&r| ys[r]).sum::<f64>() / rows.len() as f64
                        }
                        _ => unreachable!("y present for mean and sum"),
                    };
                    Some(Group { key, lo: bounds.map(|b| b.0), hi: bounds.map(|b| b.1), value, rows })
                })
                .collect();
            Ok(ChartData::Groups { groups })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Region {
    Rect {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    /// Lasso outline in data coordinates.
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Selection {
    Region { region: Region },
    Interval { lo: f64, hi: f64 },
    Bars { bars: Vec<String> },
}

impl Selection {
    pub fn validate(&self) -> Result<()> {
        match self {
            Selection::Region { region: Region::Polygon { vertices } } if vertices.len() < 3 => {
                Err(Error::invalid("a polygon needs at least 3 vertices"))
            }
            Selection::Region { region: Region::Rect { x_min, x_max, y_min, y_max } }
                if x_min > x_max || y_min > y_max =>
            {
                Err(Error::invalid("rectangle bounds are inverted"))
            }
            Selection::Interval { lo, hi } if lo > hi => Err(Error::invalid("interval has lo > hi")),
            Selection::Bars { bars } if bars.is_empty() => Err(Error::invalid("bar selection is empty")),
            _ => Ok(()),
        }
    }

    fn compatible(&self, chart: ChartType) -> bool {
        matches!(
            (self, chart),
            (Selection::Region { .. }, ChartType::Scatter)
                | (Selection::Interval { .. }, ChartType::Line)
                | (Selection::Bars { .. }, ChartType::Bar)
        )
    }
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs() + (b[1] - a[1]).abs();
    cross.abs() <= 1e-12 * scale.max(1.0)
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Even-odd rule; points on the boundary count as inside.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Row indices selected by `sel` on the chart `spec`, ascending.
pub fn resolve_pattern(ds: &Dataset, spec: &ChartSpec, sel: &Selection) -> Result<Vec<usize>> {
    spec.validate(ds)?;
    sel.validate()?;
    if !sel.compatible(spec.chart_type) {
        return Err(Error::Incompatible(format!("{sel:?} cannot select on a {:?} chart", spec.chart_type)));
    }
    match sel {
        Selection::Region { region } => {
            let xs = ds.numeric(&spec.x)?;
            let ys = ds.numeric(spec.y.as_deref().expect("validated"))?;
            let inside = |x: f64, y: f64| match region {
                Region::Rect { x_min, x_max, y_min, y_max } => x >= *x_min && x <= *x_max && y >= *y_min && y <= *y_max,
                Region::Polygon { vertices } => point_in_polygon([x, y], vertices),
            };
            Ok((0..ds.n_rows()).filter(|&r| inside(xs[r], ys[r])).collect())
        }
        Selection::Interval { lo, hi } => {
            let xs = ds
                .numeric(&spec.x)
                .map_err(|_| Error::Incompatible("interval selection needs a numerical x".into()))?;
            Ok((0..ds.n_rows()).filter(|&r| xs[r] >= *lo && xs[r] <= *hi).collect())
        }
        Selection::Bars { bars } => {
            let g = grouping(ds, spec)?;
            let mut wanted = BTreeSet::new();
            for b in bars {
                let idx = g
                    .keys
                    .iter()
                    .position(|(k, _)| k == b)
                    .ok_or_else(|| Error::Incompatible(format!("chart has no bar {b:?}")))?;
                wanted.insert(idx);
            }
            Ok(g.of_row.iter().enumerate().filter(|(_, b)| wanted.contains(b)).map(|(r, _)| r).collect())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternType {
    Cluster,
    Correlation,
    Order,
}

impl PatternType {
    pub fn for_chart(t: ChartType) -> Self {
        match t {
            ChartType::Scatter => PatternType::Cluster,
            ChartType::Line => PatternType::Correlation,
            ChartType::Bar => PatternType::Order,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternConstraint {
    pub id: String,
    pub pattern_type: PatternType,
    pub chart: String,
    pub selection: Selection,
    pub weight: f64,
    /// Row indices selected at creation time.
    pub records: Vec<usize>,
}

fn check_weight(w: f64) -> Result<()> {
    if w >= 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("pattern weight must be finite and non-negative, got {w}")))
    }
}

/// Ordered pattern list with ids `P0, P1, …` that are never reused.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternCatalog {
    next_id: u64,
    patterns: Vec<PatternConstraint>,
}

impl PatternCatalog {
    pub fn patterns(&self) -> &[PatternConstraint] {
        &self.patterns
    }

    pub fn get(&self, id: &str) -> Result<&PatternConstraint> {
        self.patterns.iter().find(|p| p.id == id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn add(&mut self, ds: &Dataset, spec: &ChartSpec, sel: Selection, weight: f64) -> Result<&PatternConstraint> {
        check_weight(weight)?;
        let records = resolve_pattern(ds, spec, &sel)?;
        let id = format!("P{}", self.next_id);
        self.next_id += 1;
        self.patterns.push(PatternConstraint {
            id,
            pattern_type: PatternType::for_chart(spec.chart_type),
            chart: spec.id.clone(),
            selection: sel,
            weight,
            records,
        });
        Ok(self.patterns.last().expect("just pushed"))
    }

    pub fn set_weight(&mut self, id: &str, weight: f64) -> Result<&PatternConstraint> {
        check_weight(weight)?;
        let p = self.patterns.iter_mut().find(|p| p.id == id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        p.weight = weight;
        Ok(p)
    }

    /// Re-resolves every pattern against `ds` after the underlying rows
    /// changed. Patterns whose chart is missing or no longer valid are
    /// removed; their ids are returned.
    pub fn refresh(&mut self, ds: &Dataset, charts: &[ChartSpec]) -> Vec<String> {
        let mut dropped = Vec::new();
        self.patterns.retain_mut(|p| {
            let records =
                charts.iter().find(|c| c.id == p.chart).and_then(|spec| resolve_pattern(ds, spec, &p.selection).ok());
            match records {
                Some(r) => {
                    p.records = r;
                    true
                }
                None => {
                    dropped.push(p.id.clone());
                    false
                }
            }
        });
        dropped
    }

    pub fn remove(&mut self, id: &str) -> Result<PatternConstraint> {
        let i = self.patterns.iter().position(|p| p.id == id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        Ok(self.patterns.remove(i))
    }
}

fn mark(t: ChartType) -> &'static str {
    match t {
        ChartType::Scatter => "point",
        ChartType::Line => "line",
        ChartType::Bar => "bar",
    }
}

fn values(spec: &ChartSpec, data: &ChartData, source: &str) -> Vec<serde_json::Value> {
    match data {
        ChartData::Points { points } => points
            .iter()
            .map(|p| {
                let mut v = json!({ &spec.x: p.x, spec.y.as_deref().unwrap_or("y"): p.y, "source": source });
                if let (Some(c), Some(name)) = (&p.color, &spec.color) {
                    v[name] = json!(c);
                }
                v
            })
            .collect(),
        ChartData::Groups { groups } => {
            groups.iter().map(|g| json!({ &spec.x: g.key, "value": g.value, "source": source })).collect()
        }
    }
}

fn encoding(spec: &ChartSpec, data: &ChartData) -> serde_json::Value {
    match data {
        ChartData::Points { .. } => {
            let mut e = json!({
                "x": { "field": spec.x, "type": "quantitative" },
                "y": { "field": spec.y, "type": "quantitative" },
            });
            if let Some(c) = &spec.color {
                e["color"] = json!({ "field": c, "type": "nominal" });
            }
            e
        }
        ChartData::Groups { groups } => {
            let order: Vec<&str> = groups.iter().map(|g| g.key.as_str()).collect();
            let title = match (spec.aggregate(), &spec.y) {
                (Aggregate::Count, _) | (_, None) => "count".to_string(),
                (a, Some(y)) => format!("{}({y})", serde_json::to_value(a).expect("enum").as_str().unwrap_or("")),
            };
            json!({
                "x": { "field": spec.x, "type": "ordinal", "sort": order },
                "y": { "field": "value", "type": "quantitative", "title": title },
            })
        }
    }
}

/// Declarative chart description with inline data.
pub fn chart_json(spec: &ChartSpec, data: &ChartData) -> serde_json::Value {
    json!({
        "title": spec.id,
        "mark": mark(spec.chart_type),
        "encoding": encoding(spec, data),
        "data": { "values": values(spec, data, "data") },
    })
}

/// Two-layer chart: original data in gray under synthetic data in color,
/// with the pattern's selection as an outline layer when given.
pub fn overlay_json(
    spec: &ChartSpec,
    original: &ChartData,
    synthetic: &ChartData,
    selection: Option<&Selection>,
) -> serde_json::Value {
    let mut layers = vec![
        json!({
            "mark": { "type": mark(spec.chart_type), "color": "#bbbbbb" },
            "encoding": encoding(spec, original),
            "data": { "values": values(spec, original, "original") },
        }),
        json!({
            "mark": { "type": mark(spec.chart_type), "opacity": 0.8 },
            "encoding": encoding(spec, synthetic),
            "data": { "values": values(spec, synthetic, "synthetic") },
        }),
    ];
    if let Some(sel) = selection {
        layers.push(json!({ "selection": sel, "mark": { "type": "rect", "fill": null, "stroke": "#888888" } }));
    }
    json!({ "title": spec.id, "layer": layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_csv;

    #[test]
    fn scatter_passthrough() {
        let ds = load_csv(b"x,y\n1,2\n3,4\n5,6\n", None).unwrap();
        let data = render_chart_data(&ds, &ChartSpec::scatter("c", "x", "y")).unwrap();
        let pts = data.points().unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!((pts[1].x, pts[1].y, pts[1].row), (3.0, 4.0, 1));
    }

    #[test]
    fn bar_count() {
        let ds = load_csv(b"c\na\na\nb\n", None).unwrap();
        let spec = ChartSpec::grouped("c", ChartType::Bar, "c", None, Aggregate::Count);
        let g = render_chart_data(&ds, &spec).unwrap();
        let got: Vec<(&str, f64)> = g.groups().unwrap().iter().map(|g| (g.key.as_str(), g.value)).collect();
        assert_eq!(got, vec![("a", 2.0), ("b", 1.0)]);
    }

    #[test]
    fn line_mean_binned() {
        let schema = vec![
            crate::data::Attribute::numerical("x", 0.0, 19.0).unwrap().into(),
            crate::data::Attribute::numerical("y", 0.0, 10.0).unwrap().into(),
        ];
        let ds = load_csv(b"x,y\n1,2\n9,4\n11,6\n", Some(&schema)).unwrap();
        let spec = ChartSpec::grouped("l", ChartType::Line, "x", Some("y"), Aggregate::Mean).with_step(10.0);
        let g = render_chart_data(&ds, &spec).unwrap();
        let got: Vec<(&str, f64)> = g.groups().unwrap().iter().map(|g| (g.key.as_str(), g.value)).collect();
        assert_eq!(got, vec![("0", 3.0), ("10", 6.0)]);
    }

    #[test]
    fn mean_omits_empty_groups_count_keeps_them() {
        let ds = load_csv(b"x,y\n0,1\n30,2\n", None).unwrap();
        let mean = ChartSpec::grouped("l", ChartType::Line, "x", Some("y"), Aggregate::Mean).with_step(10.0);
        assert_eq!(render_chart_data(&ds, &mean).unwrap().groups().unwrap().len(), 2);
        let count = ChartSpec::grouped("l", ChartType::Line, "x", None, Aggregate::Count).with_step(10.0);
        assert_eq!(render_chart_data(&ds, &count).unwrap().groups().unwrap().len(), 4);
    }

    #[test]
    fn polygon_triangle() {
        let tri = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let pts = [[1.0, 1.0], [0.5, 2.0], [3.0, 3.0], [5.0, 0.0], [-1.0, 1.0]];
        let inside: Vec<bool> = pts.iter().map(|&p| point_in_polygon(p, &tri)).collect();
        assert_eq!(inside, vec![true, true, false, false, false]);
        assert!(point_in_polygon([2.0, 2.0], &tri), "hypotenuse is boundary");
        assert!(point_in_polygon([0.0, 0.0], &tri), "vertex is boundary");
    }

    #[test]
    fn incompatible_selection() {
        let ds = load_csv(b"x,y\n1,2\n", None).unwrap();
        let spec = ChartSpec::scatter("c", "x", "y");
        let err = resolve_pattern(&ds, &spec, &Selection::Bars { bars: vec!["1".into()] });
        assert!(matches!(err, Err(Error::Incompatible(_))));
    }

    #[test]
    fn catalog_ids_and_weights() {
        let ds = load_csv(b"c\na\nb\n", None).unwrap();
        let spec = ChartSpec::grouped("c0", ChartType::Bar, "c", None, Aggregate::Count);
        let sel = || Selection::Bars { bars: vec!["a".into()] };
        let mut cat = PatternCatalog::default();
        for _ in 0..3 {
            cat.add(&ds, &spec, sel(), 0.5).unwrap();
        }
        let ids: Vec<&str> = cat.patterns().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["P0", "P1", "P2"]);
        assert_eq!(cat.get("P0").unwrap().records, vec![0]);
        cat.set_weight("P0", 1.0).unwrap();
        assert_eq!(cat.get("P0").unwrap().weight, 1.0);
        assert_eq!(cat.get("P1").unwrap().weight, 0.5);
        assert!(cat.set_weight("P0", -1.0).is_err());
        assert!(matches!(cat.remove("P9"), Err(Error::UnknownId(_))));

        let before = cat.patterns().to_vec();
        let added = cat.add(&ds, &spec, sel(), 2.0).unwrap().id.clone();
        assert_eq!(added, "P3");
        cat.remove(&added).unwrap();
        assert_eq!(cat.patterns(), before.as_slice());
    }

    #[test]
    fn selection_json_shape() {
        let s: Selection = serde_json::from_str(
            r#"{"kind":"region","region":{"shape":"rect","x_min":0,"x_max":1,"y_min":0,"y_max":1}}"#,
        )
        .unwrap();
        assert!(matches!(s, Selection::Region { region: Region::Rect { .. } }));
        let s: Selection = serde_json::from_str(r#"{"kind":"interval","lo":1,"hi":2}"#).unwrap();
        assert_eq!(s, Selection::Interval { lo: 1.0, hi: 2.0 });
    }
}
