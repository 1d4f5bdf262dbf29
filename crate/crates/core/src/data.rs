//! Tabular data model: typed attributes, column-major datasets, CSV I/O,
//! range filtering and per-attribute discretization.
//!
//! Categorical cells are stored as indices into the attribute's ordered
//! domain; numerical cells as `f64`. A [`Dataset`] is immutable once built.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on bins per numerical attribute.
pub const DEFAULT_MAX_BINS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Categorical,
    Numerical,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Categorical(Vec<String>),
    Numerical { min: f64, max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "AttributeDescriptor", try_from = "AttributeDescriptor")]
pub struct Attribute {
    pub name: String,
    pub domain: Domain,
}

impl Attribute {
    pub fn categorical<S: Into<String>>(name: &str, values: impl IntoIterator<Item = S>) -> Result<Self> {
        let attr = Attribute {
            name: name.to_string(),
            domain: Domain::Categorical(values.into_iter().map(Into::into).collect()),
        };
        attr.validate()?;
        Ok(attr)
    }

    pub fn numerical(name: &str, min: f64, max: f64) -> Result<Self> {
        let attr = Attribute { name: name.to_string(), domain: Domain::Numerical { min, max } };
        attr.validate()?;
        Ok(attr)
    }

    pub fn kind(&self) -> Kind {
        match self.domain {
            Domain::Categorical(_) => Kind::Categorical,
            Domain::Numerical { .. } => Kind::Numerical,
        }
    }

    /// Width of a numerical domain, or the number of categories minus one.
    pub fn width(&self) -> f64 {
        match &self.domain {
            Domain::Categorical(v) => v.len().saturating_sub(1) as f64,
            Domain::Numerical { min, max } => max - min,
        }
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.domain {
            Domain::Categorical(v) => Some(v),
            Domain::Numerical { .. } => None,
        }
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        match self.domain {
            Domain::Numerical { min, max } => Some((min, max)),
            Domain::Categorical(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.domain {
            Domain::Categorical(values) => {
                if values.is_empty() {
                    return Err(Error::Schema(format!("categorical attribute {:?} has an empty domain", self.name)));
                }
                let distinct: BTreeSet<&String> = values.iter().collect();
                if distinct.len() != values.len() {
                    return Err(Error::Schema(format!(
                        "categorical attribute {:?} has duplicate domain values",
                        self.name
                    )));
                }
            }
            Domain::Numerical { min, max } => {
                if !(min.is_finite() && max.is_finite()) || min > max {
                    return Err(Error::Schema(format!(
                        "numerical attribute {:?} has invalid range [{min}, {max}]",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Wire form of one schema entry: `{name, type, domain?}`.
///
/// For categorical attributes `domain` is a list of strings; for numerical
/// attributes it is `[min, max]`. A missing domain is inferred from data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDescriptor {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<serde_json::Value>,
}

pub type SchemaDescriptor = Vec<AttributeDescriptor>;

impl From<Attribute> for AttributeDescriptor {
    fn from(a: Attribute) -> Self {
        let domain = match &a.domain {
            Domain::Categorical(v) => serde_json::json!(v),
            Domain::Numerical { min, max } => serde_json::json!([min, max]),
        };
        let kind = a.kind();
        AttributeDescriptor { name: a.name, kind, domain: Some(domain) }
    }
}

impl TryFrom<AttributeDescriptor> for Attribute {
    type Error = Error;

    fn try_from(d: AttributeDescriptor) -> Result<Self> {
        let Some(domain) = d.domain else {
            return Err(Error::Schema(format!("attribute {:?} has no domain", d.name)));
        };
        parse_domain(&d.name, d.kind, &domain)
    }
}

fn parse_domain(name: &str, kind: Kind, value: &serde_json::Value) -> Result<Attribute> {
    let bad = || Error::Schema(format!("attribute {name:?} has a malformed domain: {value}"));
    match kind {
        Kind::Categorical => {
            let arr = value.as_array().ok_or_else(bad)?;
            let values = arr
                .iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => Ok(s.clone()),
                    serde_json::Value::Number(n) => Ok(n.to_string()),
                    serde_json::Value::Bool(b) => Ok(b.to_string()),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()?;
            Attribute::categorical(name, values)
        }
        Kind::Numerical => {
            let arr = value.as_array().ok_or_else(bad)?;
            if arr.len() != 2 {
                return Err(bad());
            }
            let min = arr[0].as_f64().ok_or_else(bad)?;
            let max = arr[1].as_f64().ok_or_else(bad)?;
            Attribute::numerical(name, min, max)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Cat(String),
    Num(f64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Cat(s) => f.write_str(s),
            Value::Num(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    /// Indices into the attribute's categorical domain.
    Categorical(Vec<u32>),
    Numerical(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Categorical(c) => c.len(),
            Column::Numerical(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Categorical(c) => Column::Categorical(rows.iter().map(|&r| c[r]).collect()),
            Column::Numerical(c) => Column::Numerical(rows.iter().map(|&r| c[r]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Vec<Attribute>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(schema: Vec<Attribute>, columns: Vec<Column>) -> Result<Self> {
        if schema.is_empty() {
            return Err(Error::Schema("a dataset needs at least one attribute".into()));
        }
        if schema.len() != columns.len() {
            return Err(Error::Schema(format!("{} attributes but {} columns", schema.len(), columns.len())));
        }
        let mut names = BTreeSet::new();
        for a in &schema {
            a.validate()?;
            if !names.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute name {:?}", a.name)));
            }
        }
        let n_rows = columns[0].len();
        for (a, c) in schema.iter().zip(&columns) {
            if c.len() != n_rows {
                return Err(Error::Schema(format!("column {:?} has {} rows, expected {n_rows}", a.name, c.len())));
            }
            match (&a.domain, c) {
                (Domain::Categorical(values), Column::Categorical(codes)) => {
                    if let Some(&bad) = codes.iter().find(|&&code| code as usize >= values.len()) {
                        return Err(Error::Schema(format!("code {bad} out of range for attribute {:?}", a.name)));
                    }
                }
                (Domain::Numerical { min, max }, Column::Numerical(xs)) => {
                    if let Some(x) = xs.iter().find(|x| !(**x >= *min && **x <= *max)) {
                        return Err(Error::Schema(format!(
                            "value {x} outside [{min}, {max}] for attribute {:?}",
                            a.name
                        )));
                    }
                }
                _ => return Err(Error::Schema(format!("column type does not match attribute {:?}", a.name))),
            }
        }
        Ok(Dataset { schema, columns, n_rows })
    }

    /// Builds a dataset from row-major values.
    pub fn from_rows(schema: Vec<Attribute>, rows: &[Vec<Value>]) -> Result<Self> {
        let lookups: Vec<Option<HashMap<&str, u32>>> = schema
            .iter()
            .map(|a| a.categories().map(|vals| vals.iter().enumerate().map(|(i, v)| (v.as_str(), i as u32)).collect()))
            .collect();
        let mut columns: Vec<Column> = schema
            .iter()
            .map(|a| match a.kind() {
                Kind::Categorical => Column::Categorical(Vec::with_capacity(rows.len())),
                Kind::Numerical => Column::Numerical(Vec::with_capacity(rows.len())),
            })
            .collect();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Schema(format!("row {r} has {} values, expected {}", row.len(), schema.len())));
            }
            for (j, v) in row.iter().enumerate() {
                match (&mut columns[j], v) {
                    (Column::Categorical(c), Value::Cat(s)) => {
                        let code = lookups[j].as_ref().and_then(|m| m.get(s.as_str())).ok_or_else(|| {
                            Error::Domain { line: r as u64 + 2, attribute: schema[j].name.clone(), value: s.clone() }
                        })?;
                        c.push(*code);
                    }
                    (Column::Numerical(c), Value::Num(x)) => c.push(*x),
                    _ => {
                        return Err(Error::Schema(format!(
                            "row {r}: value kind does not match attribute {:?}",
                            schema[j].name
                        )))
                    }
                }
            }
        }
        Dataset::new(schema, columns)
    }

    pub fn empty_like(&self) -> Dataset {
        self.select_rows(&[])
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_attrs(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[Attribute] {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.schema.iter().position(|a| a.name == name).ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attribute(&self, name: &str) -> Result<&Attribute> {
        Ok(&self.schema[self.index_of(name)?])
    }

    /// Numerical column by attribute name.
    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match &self.columns[self.index_of(name)?] {
            Column::Numerical(xs) => Ok(xs),
            Column::Categorical(_) => Err(Error::invalid(format!("attribute {name:?} is not numerical"))),
        }
    }

    pub fn value(&self, row: usize, col: usize) -> Value {
        match (&self.columns[col], &self.schema[col].domain) {
            (Column::Categorical(c), Domain::Categorical(vals)) => Value::Cat(vals[c[row] as usize].clone()),
            (Column::Numerical(c), _) => Value::Num(c[row]),
            _ => unreachable!("column/domain kinds are checked at construction"),
        }
    }

    /// Categorical cell as a string slice, numerical cell as `None`.
    pub fn category(&self, row: usize, col: usize) -> Option<&str> {
        match (&self.columns[col], &self.schema[col].domain) {
            (Column::Categorical(c), Domain::Categorical(vals)) => Some(&vals[c[row] as usize]),
            _ => None,
        }
    }

    pub fn row(&self, row: usize) -> Vec<Value> {
        (0..self.n_attrs()).map(|c| self.value(row, c)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// Projection onto the named attributes, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Dataset> {
        let idx: Vec<usize> = names.iter().map(|n| self.index_of(n)).collect::<Result<_>>()?;
        Dataset::new(
            idx.iter().map(|&j| self.schema[j].clone()).collect(),
            idx.iter().map(|&j| self.columns[j].clone()).collect(),
        )
    }

    /// Serializes to CSV with a header row. Numbers use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(self.schema.iter().map(|a| a.name.as_str())).expect("writing to a Vec cannot fail");
        for r in 0..self.n_rows {
            let record: Vec<String> = (0..self.n_attrs()).map(|c| self.value(r, c).to_string()).collect();
            w.write_record(&record).expect("writing to a Vec cannot fail");
        }
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("csv output is utf-8")
    }

    pub fn schema_descriptor(&self) -> SchemaDescriptor {
        self.schema.iter().cloned().map(Into::into).collect()
    }
}

/// Header plus string cells, before typing.
#[derive(Clone, Debug, Default)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Source line number of each row (header is line 1).
    pub lines: Vec<u64>,
}

impl RawTable {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::Parse { line: 1, message: format!("input is not valid UTF-8: {e}") })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        let header = if header.len() == 1 && header[0].is_empty() { Vec::new() } else { header };
        if header.is_empty() {
            return Err(Error::Schema("header row has zero columns".into()));
        }
        let mut table = RawTable { header, ..Default::default() };
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != table.header.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", table.header.len(), record.len()),
                });
            }
            table.rows.push(record.iter().map(str::to_string).collect());
            table.lines.push(line);
        }
        Ok(table)
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Infers a schema: a column is numerical iff it has at least one non-empty
/// cell and every non-empty cell parses as a finite real.
pub fn infer_schema(raw: &RawTable) -> Result<SchemaDescriptor> {
    if raw.header.is_empty() {
        return Err(Error::Schema("cannot infer a schema with zero columns".into()));
    }
    let mut out = Vec::with_capacity(raw.header.len());
    for (j, name) in raw.header.iter().enumerate() {
        let cells = raw.rows.iter().map(|r| r[j].as_str());
        let non_empty: Vec<&str> = cells.clone().filter(|s| !s.is_empty()).collect();
        let parsed: Option<Vec<f64>> = non_empty.iter().map(|s| parse_finite(s)).collect();
        let attr = match parsed {
            Some(xs) if !xs.is_empty() => {
                let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Attribute::numerical(name, min, max)?
            }
            _ => {
                let mut distinct: BTreeSet<String> = cells.map(str::to_string).collect();
                if distinct.is_empty() {
                    distinct.insert(String::new());
                }
                Attribute::categorical(name, distinct)?
            }
        };
        out.push(attr.into());
    }
    Ok(out)
}

/// Parses CSV bytes into a dataset. When `schema` is given its entries are
/// matched to header columns by name; entries without a domain get one
/// inferred from the data.
pub fn load_csv(bytes: &[u8], schema: Option<&[AttributeDescriptor]>) -> Result<Dataset> {
    let raw = RawTable::parse(bytes)?;
    let inferred = infer_schema(&raw)?;
    let attributes: Vec<Attribute> = match schema {
        None => inferred.into_iter().map(Attribute::try_from).collect::<Result<_>>()?,
        Some(declared) => {
            if declared.len() != raw.header.len() {
                return Err(Error::Schema(format!(
                    "schema has {} attributes but the header has {} columns",
                    declared.len(),
                    raw.header.len()
                )));
            }
            raw.header
                .iter()
                .map(|name| {
                    let d = declared
                        .iter()
                        .find(|d| &d.name == name)
                        .ok_or_else(|| Error::Schema(format!("column {name:?} missing from schema")))?;
                    match &d.domain {
                        Some(domain) => parse_domain(name, d.kind, domain),
                        None => infer_domain(&raw, name, d.kind),
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    type_rows(&raw, attributes)
}

fn infer_domain(raw: &RawTable, name: &str, kind: Kind) -> Result<Attribute> {
    let j = raw.header.iter().position(|h| h == name).expect("name comes from header");
    match kind {
        Kind::Categorical => {
            let mut distinct: BTreeSet<String> = raw.rows.iter().map(|r| r[j].clone()).collect();
            if distinct.is_empty() {
                distinct.insert(String::new());
            }
            Attribute::categorical(name, distinct)
        }
        Kind::Numerical => {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for (r, row) in raw.rows.iter().enumerate() {
                if row[j].is_empty() {
                    continue;
                }
                let x = parse_finite(&row[j]).ok_or_else(|| Error::Parse {
                    line: raw.lines[r],
                    message: format!("{:?} is not a number (attribute {name:?})", row[j]),
                })?;
                min = min.min(x);
                max = max.max(x);
            }
            if min > max {
                min = 0.0;
                max = 0.0;
            }
            Attribute::numerical(name, min, max)
        }
    }
}

fn type_rows(raw: &RawTable, schema: Vec<Attribute>) -> Result<Dataset> {
    let mut columns = Vec::with_capacity(schema.len());
    for (j, attr) in schema.iter().enumerate() {
        let col = match &attr.domain {
            Domain::Categorical(values) => {
                let lookup: HashMap<&str, u32> =
                    values.iter().enumerate().map(|(i, v)| (v.as_str(), i as u32)).collect();
                let mut codes = Vec::with_capacity(raw.rows.len());
                for (r, row) in raw.rows.iter().enumerate() {
                    if row[j].is_empty() {
                        return Err(Error::MissingCell { line: raw.lines[r], attribute: attr.name.clone() });
                    }
                    let code = lookup.get(row[j].as_str()).ok_or_else(|| Error::Domain {
                        line: raw.lines[r],
                        attribute: attr.name.clone(),
                        value: row[j].clone(),
                    })?;
                    codes.push(*code);
                }
                Column::Categorical(codes)
            }
            Domain::Numerical { min, max } => {
                let mut xs = Vec::with_capacity(raw.rows.len());
                for (r, row) in raw.rows.iter().enumerate() {
                    let cell = &row[j];
                    if cell.is_empty() {
                        return Err(Error::MissingCell { line: raw.lines[r], attribute: attr.name.clone() });
                    }
                    let x = parse_finite(cell).ok_or_else(|| Error::Parse {
                        line: raw.lines[r],
                        message: format!("{cell:?} is not a number (attribute {:?})", attr.name),
                    })?;
                    if x < *min || x > *max {
                        return Err(Error::Domain {
                            line: raw.lines[r],
                            attribute: attr.name.clone(),
                            value: cell.clone(),
                        });
                    }
                    xs.push(x);
                }
                Column::Numerical(xs)
            }
        };
        columns.push(col);
    }
    Dataset::new(schema, columns)
}

/// One attribute's row predicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Predicate {
    /// Keep rows whose categorical value is in the set.
    Values { values: Vec<String> },
    /// Keep rows whose numerical value lies in the closed interval.
    Range { min: f64, max: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FilterSpec {
    pub predicates: BTreeMap<String, Predicate>,
}

impl FilterSpec {
    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn with(mut self, attr: &str, p: Predicate) -> Self {
        self.predicates.insert(attr.to_string(), p);
        self
    }

    pub fn validate(&self, schema: &[Attribute]) -> Result<()> {
        for (name, p) in &self.predicates {
            let attr = schema.iter().find(|a| &a.name == name).ok_or_else(|| Error::UnknownAttribute(name.clone()))?;
            match (p, attr.kind()) {
                (Predicate::Values { .. }, Kind::Categorical) => {}
                (Predicate::Range { min, max }, Kind::Numerical) => {
                    if min > max {
                        return Err(Error::invalid(format!("empty range [{min}, {max}] for {name:?}")));
                    }
                }
                _ => return Err(Error::invalid(format!("predicate kind does not match attribute {name:?}"))),
            }
        }
        Ok(())
    }

    /// Indices of rows satisfying every predicate.
    pub fn matching_rows(&self, ds: &Dataset) -> Result<Vec<usize>> {
        self.validate(ds.schema())?;
        let mut keep = vec![true; ds.n_rows()];
        for (name, p) in &self.predicates {
            let j = ds.index_of(name)?;
            match (p, ds.column(j)) {
                (Predicate::Values { values }, Column::Categorical(codes)) => {
                    let cats = ds.schema()[j].categories().unwrap_or_default();
                    let allowed: BTreeSet<u32> =
                        cats.iter().enumerate().filter(|(_, c)| values.contains(c)).map(|(i, _)| i as u32).collect();
                    for (k, code) in keep.iter_mut().zip(codes) {
                        *k &= allowed.contains(code);
                    }
                }
                (Predicate::Range { min, max }, Column::Numerical(xs)) => {
                    for (k, x) in keep.iter_mut().zip(xs) {
                        *k &= *x >= *min && *x <= *max;
                    }
                }
                _ => unreachable!("validated above"),
            }
        }
        Ok(keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect())
    }
}

pub fn apply_filter(ds: &Dataset, filter: &FilterSpec) -> Result<Dataset> {
    let rows = filter.matching_rows(ds)?;
    Ok(ds.select_rows(&rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Bins {
    /// Identity mapping of the categorical domain.
    Categorical { values: Vec<String> },
    /// Interval edges `e_0 < … < e_m`; bin `i` is `[e_i, e_{i+1})`, the last
    /// bin is closed on the right.
    Numerical { edges: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub attribute: String,
    pub bins: Bins,
}

impl Discretization {
    pub fn n_bins(&self) -> usize {
        match &self.bins {
            Bins::Categorical { values } => values.len(),
            Bins::Numerical { edges } => edges.len() - 1,
        }
    }

    pub fn bin_of_number(&self, x: f64) -> usize {
        match &self.bins {
            Bins::Numerical { edges } => {
                let inner = &edges[1..edges.len() - 1];
                inner.partition_point(|&e| e <= x)
            }
            Bins::Categorical { .. } => panic!("bin_of_number on categorical attribute {:?}", self.attribute),
        }
    }

    /// Lower and upper edge of a numerical bin.
    pub fn bin_range(&self, bin: usize) -> Option<(f64, f64)> {
        match &self.bins {
            Bins::Numerical { edges } => Some((edges[bin], edges[bin + 1])),
            Bins::Categorical { .. } => None,
        }
    }

    pub fn bin_label(&self, bin: usize) -> String {
        match &self.bins {
            Bins::Categorical { values } => values[bin].clone(),
            Bins::Numerical { edges } => {
                let close = if bin + 2 == edges.len() { ']' } else { ')' };
                format!("[{}, {}{close}", edges[bin], edges[bin + 1])
            }
        }
    }

    /// Bin index of every row of the attribute's column.
    pub fn encode(&self, column: &Column) -> Vec<u32> {
        match column {
            Column::Categorical(codes) => codes.clone(),
            Column::Numerical(xs) => xs.iter().map(|&x| self.bin_of_number(x) as u32).collect(),
        }
    }
}

/// Discretizations for every attribute of a schema, in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Discretizations(pub Vec<Discretization>);

impl Discretizations {
    pub fn get(&self, attr: &str) -> Result<&Discretization> {
        self.0.iter().find(|d| d.attribute == attr).ok_or_else(|| Error::UnknownAttribute(attr.to_string()))
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.0.iter().map(Discretization::n_bins).collect()
    }

    /// Checks that the discretizations line up with `ds`'s schema.
    pub fn check(&self, ds: &Dataset) -> Result<()> {
        if self.0.len() != ds.n_attrs() {
            return Err(Error::invalid("discretizations do not cover the schema"));
        }
        for (d, a) in self.0.iter().zip(ds.schema()) {
            let ok = d.attribute == a.name
                && match (&d.bins, &a.domain) {
                    (Bins::Categorical { values }, Domain::Categorical(dom)) => values == dom,
                    (Bins::Numerical { .. }, Domain::Numerical { .. }) => true,
                    _ => false,
                };
            if !ok {
                return Err(Error::invalid(format!("discretization does not match attribute {:?}", a.name)));
            }
        }
        Ok(())
    }
}

/// Lloyd's algorithm on sorted 1-D data with quantile seeding
/// (centroid `i` starts at quantile `(i + 0.5) / k`). Returns the non-empty
/// centroids in ascending order and the within-cluster SSE.
pub fn kmeans_1d(sorted: &[f64], k: usize) -> (Vec<f64>, f64) {
    assert!(k >= 1 && !sorted.is_empty());
    let n = sorted.len();
    let mut centroids: Vec<f64> = (0..k)
        .map(|i| {
            let idx = (((i as f64 + 0.5) / k as f64) * n as f64).floor() as usize;
            sorted[idx.min(n - 1)]
        })
        .collect();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..500 {
        let mut changed = false;
        for (a, &x) in assign.iter_mut().zip(sorted) {
            let mut best = 0;
            for c in 1..k {
                if (x - centroids[c]).abs() < (x - centroids[best]).abs() {
                    best = c;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (&a, &x) in assign.iter().zip(sorted) {
            sum[a] += x;
            count[a] += 1;
        }
        for c in 0..k {
            if count[c] > 0 {
                centroids[c] = sum[c] / count[c] as f64;
            }
        }
    }
    let mut count = vec![0usize; k];
    let mut sse = 0.0;
    for (&a, &x) in assign.iter().zip(sorted) {
        count[a] += 1;
        sse += (x - centroids[a]).powi(2);
    }
    let mut used: Vec<f64> = (0..k).filter(|&c| count[c] > 0).map(|c| centroids[c]).collect();
    used.sort_by(f64::total_cmp);
    used.dedup();
    (used, sse)
}

/// Picks the number of clusters by the largest second difference of SSE.
///
/// `sse[k - 1]` holds SSE for `k` clusters. Falls back to
/// `min(2, distinct, max_k)` when no second difference is positive.
pub fn elbow(sse: &[f64], distinct: usize) -> usize {
    let max_k = sse.len();
    let fallback = 2.min(distinct).min(max_k).max(1);
    if max_k < 3 {
        return fallback;
    }
    let mut best_k = 0;
    let mut best = 0.0;
    for k in 2..max_k {
        let second = sse[k - 2] - 2.0 * sse[k - 1] + sse[k];
        if second > best {
            best = second;
            best_k = k;
        }
    }
    if best_k == 0 {
        fallback
    } else {
        best_k
    }
}

pub fn discretize(ds: &Dataset, attr: &str, max_k: usize) -> Result<Discretization> {
    if max_k < 1 {
        return Err(Error::invalid("max_k must be at least 1"));
    }
    let j = ds.index_of(attr)?;
    let attribute = &ds.schema()[j];
    if let Domain::Categorical(values) = &attribute.domain {
        return Ok(Discretization { attribute: attr.to_string(), bins: Bins::Categorical { values: values.clone() } });
    }
    if ds.n_rows() == 0 {
        return Err(Error::Empty(format!("cannot discretize {attr:?} with zero rows")));
    }
    let (min, max) = attribute.range().expect("numerical");
    let mut xs = ds.numeric(attr)?.to_vec();
    xs.sort_by(f64::total_cmp);
    let mut distinct = xs.clone();
    distinct.dedup();
    let runs: Vec<(Vec<f64>, f64)> =
        (1..=max_k).map(|k| if k >= distinct.len() { (distinct.clone(), 0.0) } else { kmeans_1d(&xs, k) }).collect();
    let sse: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let k = elbow(&sse, distinct.len());
    let centroids = &runs[k - 1].0;
    let mut edges = vec![min];
    edges.extend(centroids.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(max);
    Ok(Discretization { attribute: attr.to_string(), bins: Bins::Numerical { edges } })
}

pub fn discretize_all(ds: &Dataset, max_k: usize) -> Result<Discretizations> {
    ds.schema().iter().map(|a| discretize(ds, &a.name, max_k)).collect::<Result<Vec<_>>>().map(Discretizations)
}

/// Per-attribute bin codes of a dataset under a set of discretizations.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub names: Vec<String>,
    pub codes: Vec<Vec<u32>>,
    pub cards: Vec<usize>,
    pub n_rows: usize,
}

impl Encoded {
    pub fn new(ds: &Dataset, discs: &Discretizations) -> Result<Self> {
        discs.check(ds)?;
        Ok(Encoded {
            names: ds.schema().iter().map(|a| a.name.clone()).collect(),
            codes: discs.0.iter().zip(ds.columns()).map(|(d, c)| d.encode(c)).collect(),
            cards: discs.cardinalities(),
            n_rows: ds.n_rows(),
        })
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn people() -> Dataset {
        let csv = "name,age,heart_attack\nann,25,no\nbob,35,no\ncid,45,yes\ndee,60,yes\neve,72,yes\n";
        load_csv(csv.as_bytes(), None).unwrap()
    }

    #[test]
    fn load_with_schema() {
        let schema: SchemaDescriptor =
            serde_json::from_str(r#"[{"name":"a","type":"categorical"},{"name":"b","type":"numerical"}]"#).unwrap();
        let ds = load_csv(b"a,b\nx,1\ny,2\n", Some(&schema)).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.n_attrs(), 2);
        assert_eq!(ds.value(1, 0), Value::Cat("y".into()));
        assert_eq!(ds.value(1, 1), Value::Num(2.0));
    }

    #[test]
    fn header_only_is_empty() {
        let ds = load_csv(b"a,b\n", None).unwrap();
        assert_eq!(ds.n_rows(), 0);
        assert_eq!(ds.n_attrs(), 2);
    }

    #[test]
    fn bad_number_reports_line() {
        let schema = vec![
            Attribute::categorical("a", ["x"]).unwrap().into(),
            AttributeDescriptor { name: "b".into(), kind: Kind::Numerical, domain: None },
        ];
        match load_csv(b"a,b\nx,notanumber\n", Some(&schema)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_arity_reports_line() {
        match load_csv(b"a,b\nx,1\ny\n", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_domain_value() {
        let schema = vec![Attribute::categorical("a", ["x"]).unwrap().into()];
        assert!(matches!(load_csv(b"a\nz\n", Some(&schema)), Err(Error::Domain { line: 2, .. })));
        let schema = vec![Attribute::numerical("b", 0.0, 1.0).unwrap().into()];
        assert!(matches!(load_csv(b"b\n0.5\n3\n", Some(&schema)), Err(Error::Domain { line: 3, .. })));
    }

    #[test]
    fn missing_numerical_cell_rejected() {
        assert!(matches!(load_csv(b"a,b\n1,x\n,y\n", None), Err(Error::MissingCell { line: 3, .. })));
    }

    #[test]
    fn infer_examples() {
        let raw = RawTable::parse(b"n,m,e\n1,1,\n2,x,\n3,1,\n").unwrap();
        let s = infer_schema(&raw).unwrap();
        let attrs: Vec<Attribute> = s.into_iter().map(|d| d.try_into().unwrap()).collect();
        assert_eq!(attrs[0].domain, Domain::Numerical { min: 1.0, max: 3.0 });
        assert_eq!(attrs[1].domain, Domain::Categorical(vec!["1".into(), "x".into()]));
        assert_eq!(attrs[2].domain, Domain::Categorical(vec!["".into()]));
    }

    #[test]
    fn zero_columns_is_error() {
        assert!(RawTable::parse(b"").is_err());
        assert!(infer_schema(&RawTable::default()).is_err());
    }

    #[test]
    fn filter_examples() {
        let ds = people();
        assert_eq!(apply_filter(&ds, &FilterSpec::default()).unwrap(), ds);
        let none = FilterSpec::default().with("age", Predicate::Range { min: 100.0, max: 200.0 });
        assert_eq!(apply_filter(&ds, &none).unwrap().n_rows(), 0);

        let mid = FilterSpec::default().with("age", Predicate::Range { min: 30.0, max: 60.0 });
        let out = apply_filter(&ds, &mid).unwrap();
        let expected: Vec<usize> = (0..ds.n_rows())
            .filter(|&r| matches!(ds.value(r, 1), Value::Num(a) if (30.0..=60.0).contains(&a)))
            .collect();
        assert_eq!(expected, vec![1, 2, 3]);
        assert_eq!(out, ds.select_rows(&expected));

        let unknown = FilterSpec::default().with("zzz", Predicate::Range { min: 0.0, max: 1.0 });
        assert!(matches!(apply_filter(&ds, &unknown), Err(Error::UnknownAttribute(_))));
    }

    #[test]
    fn filter_json_shape() {
        let f: FilterSpec =
            serde_json::from_str(r#"{"age":{"min":30,"max":60},"heart_attack":{"values":["yes"]}}"#).unwrap();
        let out = apply_filter(&people(), &f).unwrap();
        assert_eq!(out.n_rows(), 2);
    }

    #[test]
    fn constant_column_single_bin() {
        let ds = load_csv(b"x\n3\n3\n3\n", None).unwrap();
        let d = discretize(&ds, "x", 8).unwrap();
        assert_eq!(d.n_bins(), 1);
        assert_eq!(d.bins, Bins::Numerical { edges: vec![3.0, 3.0] });
    }

    #[test]
    fn categorical_identity_bins() {
        let ds = load_csv(b"c\na\nb\na\n", None).unwrap();
        let d = discretize(&ds, "c", 8).unwrap();
        assert_eq!(d.bins, Bins::Categorical { values: vec!["a".into(), "b".into()] });
    }

    #[test]
    fn discretize_zero_rows_is_error() {
        let ds = load_csv(b"x\n", Some(&[Attribute::numerical("x", 0.0, 1.0).unwrap().into()])).unwrap();
        assert!(matches!(discretize(&ds, "x", 4), Err(Error::Empty(_))));
    }

    /// Optimal 1-D clustering is contiguous in sorted order, so enumerating
    /// every contiguous partition gives the exact minimum SSE for each k.
    fn brute_force_sse(sorted: &[f64], k: usize) -> f64 {
        fn sse(xs: &[f64]) -> f64 {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum()
        }
        fn go(xs: &[f64], k: usize) -> f64 {
            if k == 1 {
                return sse(xs);
            }
            (1..=xs.len() - (k - 1)).map(|cut| sse(&xs[..cut]) + go(&xs[cut..], k - 1)).fold(f64::INFINITY, f64::min)
        }
        go(sorted, k)
    }

    #[test]
    fn elbow_two_clusters() {
        let xs = [0.0, 0.1, 0.2, 10.0, 10.1];
        let oracle: Vec<f64> = (1..=5).map(|k| brute_force_sse(&xs, k)).collect();
        let oracle_k = (2..5)
            .max_by(|&a, &b| {
                let sa = oracle[a - 2] - 2.0 * oracle[a - 1] + oracle[a];
                let sb = oracle[b - 2] - 2.0 * oracle[b - 1] + oracle[b];
                sa.total_cmp(&sb).then(b.cmp(&a))
            })
            .unwrap();
        assert_eq!(oracle_k, 2);

        let csv: String =
            std::iter::once("x".to_string()).chain(xs.iter().map(|x| x.to_string())).collect::<Vec<_>>().join("\n");
        let ds = load_csv(csv.as_bytes(), None).unwrap();
        let d = discretize(&ds, "x", 5).unwrap();
        assert_eq!(d.n_bins(), 2);
        let Bins::Numerical { edges } = &d.bins else { panic!() };
        assert_eq!(edges.len(), 3);
        assert!(edges[1] > 0.2 && edges[1] < 10.0);
        assert_eq!(edges[0], 0.0);
        assert_eq!(edges[2], 10.1);
    }

    #[test]
    fn kmeans_is_deterministic_and_near_optimal() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 + if i % 3 == 0 { 50.0 } else { 0.0 }).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let a = kmeans_1d(&sorted, 3);
        let b = kmeans_1d(&sorted, 3);
        assert_eq!(a, b);
        assert!(a.1 >= brute_force_sse(&sorted, 3) - 1e-9);
    }

    #[test]
    fn round_trip_csv() {
        let ds = people();
        let schema = ds.schema_descriptor();
        let back = load_csv(ds.to_csv().as_bytes(), Some(&schema)).unwrap();
        assert_eq!(back, ds);
    }
}
