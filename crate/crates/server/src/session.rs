//! Per-session state: the uploaded dataset, the filtered view derived from
//! it, charts, the pattern catalog and generated schemes.

use std::sync::Arc;

use dpchart_core::analytics::{
    network_layout, node_distributions, relationship_graph, sankey_flow, FlowData, NetworkLayout, NodeDistribution,
    RelationshipGraph,
};
use dpchart_core::charts::{render_chart_data, ChartData, ChartSpec, PatternCatalog, PatternConstraint, Selection};
use dpchart_core::data::{apply_filter, discretize_all, Dataset, Discretizations, FilterSpec, Kind};
use dpchart_core::dp::{split_budget, Privacy, DEFAULT_STRUCTURE_FRACTION};
use dpchart_core::engine::{generate_scheme, Scheme, SchemeConfig};
use dpchart_core::metrics::evaluate_scheme;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ApiError;

type Result<T> = std::result::Result<T, ApiError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settings {
    /// Upper bound on bins per numerical attribute.
    pub max_k: usize,
    /// Default network degree for schemes and influence probes.
    pub degree_k: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { max_k: dpchart_core::data::DEFAULT_MAX_BINS, degree_k: dpchart_core::engine::DEFAULT_DEGREE }
    }
}

/// Attribute selection and row predicates applied to the uploaded data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    /// Attributes kept, in order; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<String>>,
    #[serde(default)]
    pub predicates: FilterSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeRequest {
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Ignore all pattern weights (the unconstrained pipeline).
    #[serde(default)]
    pub baseline: bool,
    /// Noise-free run for testing; the result is marked non-private.
    #[serde(default)]
    pub oracle: bool,
}

impl SchemeRequest {
    pub fn config(&self, settings: &Settings) -> Result<SchemeConfig> {
        let fraction = self.structure_fraction.unwrap_or(DEFAULT_STRUCTURE_FRACTION);
        split_budget(self.epsilon, fraction)?;
        if self.n_out == Some(0) {
            return Err(ApiError::bad_request("n_out must be positive"));
        }
        Ok(SchemeConfig {
            epsilon: self.epsilon,
            structure_fraction: fraction,
            k: self.k.unwrap_or(settings.degree_k),
            n_out: self.n_out,
            seed: self.seed.unwrap_or(0),
            privacy: if self.oracle { Privacy::Oracle } else { Privacy::Private },
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeRecord {
    pub id: String,
    pub status: Status,
    pub request: SchemeRequest,
    pub error: Option<String>,
    pub scheme: Option<Arc<Scheme>>,
}

/// Everything a generation run needs, detached from the session lock.
#[derive(Clone, Debug)]
pub struct Job {
    pub id: String,
    view: Dataset,
    discs: Discretizations,
    weighted: Vec<PatternConstraint>,
    evaluated: Vec<PatternConstraint>,
    charts: Vec<ChartSpec>,
    config: SchemeConfig,
}

impl Job {
    /// Generates the scheme and attaches its metrics report.
    pub fn run(&self) -> dpchart_core::Result<Scheme> {
        let mut scheme = generate_scheme(&self.view, &self.discs, &self.weighted, &self.config)?;
        scheme.id = self.id.clone();
        scheme.metrics = Some(evaluate_scheme(&self.view, scheme.synthetic(), &self.evaluated, &self.charts)?);
        Ok(scheme)
    }
}

/// Inputs for the relationship graph, cloned out of the session.
#[derive(Clone, Debug)]
pub struct RelationshipJob {
    view: Dataset,
    discs: Discretizations,
    patterns: Vec<PatternConstraint>,
    k: usize,
}

impl RelationshipJob {
    pub fn run(&self) -> Result<RelationshipGraph> {
        Ok(relationship_graph(&self.view, &self.discs, &self.patterns, self.k)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub id: String,
    pub settings: Settings,
    pub(crate) source: Option<Dataset>,
    pub(crate) view_spec: ViewSpec,
    pub(crate) view: Option<Dataset>,
    pub(crate) discs: Option<Discretizations>,
    pub(crate) charts: Vec<ChartSpec>,
    pub(crate) next_chart: u64,
    pub(crate) catalog: PatternCatalog,
    pub(crate) schemes: Vec<SchemeRecord>,
    pub(crate) next_scheme: u64,
}

/// Attribute summary without any row values.
pub fn describe(ds: &Dataset, discs: Option<&Discretizations>) -> Value {
    let attributes: Vec<Value> = ds
        .schema()
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let mut v = json!({ "name": a.name, "type": a.kind() });
            match a.kind() {
                Kind::Categorical => v["domain"] = json!(a.categories()),
                Kind::Numerical => v["domain"] = json!(a.range().map(|(lo, hi)| [lo, hi])),
            }
            if let Some(d) = discs.map(|d| &d.0[j]) {
                v["bins"] = json!((0..d.n_bins()).map(|b| d.bin_label(b)).collect::<Vec<_>>());
            }
            v
        })
        .collect();
    json!({ "rows": ds.n_rows(), "attributes": attributes })
}

impl Session {
    pub fn new(id: &str, settings: Settings) -> Self {
        Session {
            id: id.to_string(),
            settings,
            source: None,
            view_spec: ViewSpec::default(),
            view: None,
            discs: None,
            charts: Vec::new(),
            next_chart: 1,
            catalog: PatternCatalog::default(),
            schemes: Vec::new(),
            next_scheme: 1,
        }
    }

    pub fn in_flight(&self) -> bool {
        self.schemes.iter().any(|s| s.status == Status::Running)
    }

    fn no_generation_running(&self) -> Result<()> {
        if self.in_flight() {
            Err(ApiError::conflict("a scheme generation is in flight for this session"))
        } else {
            Ok(())
        }
    }

    pub fn view(&self) -> Result<&Dataset> {
        self.view.as_ref().ok_or_else(|| ApiError::unprocessable("no dataset uploaded"))
    }

    fn discs(&self) -> Result<&Discretizations> {
        self.view()?;
        self.discs.as_ref().ok_or_else(|| ApiError::unprocessable("the filtered view has no rows"))
    }

    pub fn summary(&self) -> Value {
        json!({
            "id": self.id,
            "settings": self.settings,
            "dataset": self.view.as_ref().map(|v| describe(v, self.discs.as_ref())),
            "filter": self.view_spec,
            "charts": self.charts.iter().map(|c| &c.id).collect::<Vec<_>>(),
            "patterns": self.catalog.patterns().iter().map(|p| &p.id).collect::<Vec<_>>(),
            "schemes": self.schemes.iter().map(|s| &s.id).collect::<Vec<_>>(),
        })
    }

    /// Replaces the dataset. Charts, patterns and schemes belong to the old
    /// data and are cleared; id counters keep running.
    pub fn upload(&mut self, ds: Dataset) -> Result<Value> {
        self.no_generation_running()?;
        self.source = Some(ds);
        self.view_spec = ViewSpec::default();
        self.charts.clear();
        self.catalog = PatternCatalog::default();
        self.schemes.clear();
        self.rebuild_view()?;
        let view = self.view()?;
        Ok(describe(view, self.discs.as_ref()))
    }

    pub(crate) fn rebuild_view(&mut self) -> Result<Vec<String>> {
        let Some(source) = &self.source else {
            self.view = None;
            self.discs = None;
            return Ok(Vec::new());
        };
        let filtered = apply_filter(source, &self.view_spec.predicates)?;
        let view = match &self.view_spec.attributes {
            Some(names) => filtered.select_columns(names)?,
            None => filtered,
        };
        self.discs = if view.n_rows() > 0 { Some(discretize_all(&view, self.settings.max_k)?) } else { None };
        let dropped = self.catalog.refresh(&view, &self.charts);
        self.view = Some(view);
        Ok(dropped)
    }

    /// Applies a new view. On any validation error the previous view stays.
    pub fn set_view(&mut self, spec: ViewSpec) -> Result<Value> {
        self.no_generation_running()?;
        let source = self.source.as_ref().ok_or_else(|| ApiError::unprocessable("no dataset uploaded"))?;
        spec.predicates.validate(source.schema())?;
        if let Some(names) = &spec.attributes {
            if names.is_empty() {
                return Err(ApiError::bad_request("attribute selection is empty"));
            }
            source.select_columns(names)?;
        }
        let previous = std::mem::replace(&mut self.view_spec, spec);
        match self.rebuild_view() {
            Ok(dropped) => {
                let view = self.view()?;
                Ok(json!({
                    "rows": view.n_rows(),
                    "attributes": view.schema().iter().map(|a| &a.name).collect::<Vec<_>>(),
                    "dropped_patterns": dropped,
                }))
            }
            Err(e) => {
                self.view_spec = previous;
                self.rebuild_view()?;
                Err(e)
            }
        }
    }

    pub fn add_chart(&mut self, mut spec: ChartSpec) -> Result<ChartSpec> {
        spec.validate(self.view()?)?;
        if spec.id.is_empty() {
            spec.id = format!("c{}", self.next_chart);
        }
        if self.charts.iter().any(|c| c.id == spec.id) {
            return Err(ApiError::conflict(format!("chart id {:?} already exists", spec.id)));
        }
        self.next_chart += 1;
        self.charts.push(spec.clone());
        Ok(spec)
    }

    pub fn charts(&self) -> &[ChartSpec] {
        &self.charts
    }

    pub fn chart(&self, cid: &str) -> Result<&ChartSpec> {
        self.charts.iter().find(|c| c.id == cid).ok_or_else(|| ApiError::not_found(format!("unknown chart {cid:?}")))
    }

    pub fn chart_data(&self, cid: &str) -> Result<ChartData> {
        Ok(render_chart_data(self.view()?, self.chart(cid)?)?)
    }

    pub fn add_pattern(&mut self, chart: &str, selection: Selection, weight: f64) -> Result<PatternConstraint> {
        let spec = self.chart(chart)?.clone();
        let view = self.view.as_ref().ok_or_else(|| ApiError::unprocessable("no dataset uploaded"))?;
        Ok(self.catalog.add(view, &spec, selection, weight)?.clone())
    }

    pub fn patterns(&self) -> &[PatternConstraint] {
        self.catalog.patterns()
    }

    pub fn pattern(&self, pid: &str) -> Result<&PatternConstraint> {
        Ok(self.catalog.get(pid)?)
    }

    pub fn set_weight(&mut self, pid: &str, weight: f64) -> Result<PatternConstraint> {
        self.catalog.get(pid)?;
        Ok(self.catalog.set_weight(pid, weight)?.clone())
    }

    pub fn remove_pattern(&mut self, pid: &str) -> Result<PatternConstraint> {
        Ok(self.catalog.remove(pid)?)
    }

    /// Registers a running scheme and returns the detached job for it.
    pub fn start_scheme(&mut self, request: SchemeRequest) -> Result<Job> {
        let config = request.config(&self.settings)?;
        self.no_generation_running()?;
        let view = self.view()?.clone();
        let discs = self.discs()?.clone();
        let id = format!("S{}", self.next_scheme);
        self.next_scheme += 1;
        let evaluated = self.catalog.patterns().to_vec();
        let job = Job {
            id: id.clone(),
            view,
            discs,
            weighted: if request.baseline { Vec::new() } else { evaluated.clone() },
            evaluated,
            charts: self.charts.clone(),
            config,
        };
        self.schemes.push(SchemeRecord { id, status: Status::Running, request, error: None, scheme: None });
        Ok(job)
    }

    pub fn finish_scheme(&mut self, id: &str, outcome: dpchart_core::Result<Scheme>) {
        if let Some(rec) = self.schemes.iter_mut().find(|s| s.id == id) {
            match outcome {
                Ok(s) => {
                    rec.status = Status::Complete;
                    rec.scheme = Some(Arc::new(s));
                }
                Err(e) => {
                    rec.status = Status::Failed;
                    rec.error = Some(e.to_string());
                }
            }
        }
    }

    pub fn schemes(&self) -> &[SchemeRecord] {
        &self.schemes
    }

    pub fn scheme(&self, sid: &str) -> Result<&SchemeRecord> {
        self.schemes.iter().find(|s| s.id == sid).ok_or_else(|| ApiError::not_found(format!("unknown scheme {sid:?}")))
    }

    /// A finished scheme, or 409 while it is still running.
    pub fn complete_scheme(&self, sid: &str) -> Result<Arc<Scheme>> {
        let rec = self.scheme(sid)?;
        match (&rec.status, &rec.scheme) {
            (Status::Complete, Some(s)) => Ok(s.clone()),
            (Status::Running, _) => Err(ApiError::conflict(format!("scheme {sid} is still running"))),
            _ => Err(ApiError::unprocessable(format!(
                "scheme {sid} failed: {}",
                rec.error.as_deref().unwrap_or("unknown error")
            ))),
        }
    }

    /// `sid`, or the most recent complete scheme when absent.
    pub fn resolve_scheme(&self, sid: Option<&str>) -> Result<Arc<Scheme>> {
        match sid {
            Some(sid) => self.complete_scheme(sid),
            None => self
                .schemes
                .iter()
                .rev()
                .find_map(|s| s.scheme.clone())
                .ok_or_else(|| ApiError::not_found("no complete scheme in this session")),
        }
    }

    pub fn relationship_job(&self) -> Result<RelationshipJob> {
        Ok(RelationshipJob {
            view: self.view()?.clone(),
            discs: self.discs()?.clone(),
            patterns: self.catalog.patterns().to_vec(),
            k: self.settings.degree_k,
        })
    }

    pub fn flow(&self, columns: Option<Vec<String>>, highlight: Option<&str>) -> Result<FlowData> {
        let view = self.view()?;
        let columns = columns.unwrap_or_else(|| view.schema().iter().map(|a| a.name.clone()).collect());
        let pattern = highlight.map(|h| self.pattern(h)).transpose()?;
        Ok(sankey_flow(view, self.discs()?, &columns, pattern)?)
    }

    pub fn network(&self, sid: Option<&str>) -> Result<(String, NetworkLayout, Value)> {
        let s = self.resolve_scheme(sid)?;
        Ok((s.id.clone(), network_layout(s.network()), serde_json::to_value(s.network())?))
    }

    pub fn distributions(&self, attr: &str, sid: Option<&str>) -> Result<(String, NodeDistribution)> {
        let s = self.resolve_scheme(sid)?;
        Ok((s.id.clone(), node_distributions(self.view()?, s.synthetic(), attr)?))
    }
}

/// Scheme with its network and noisy marginals. Contains no source rows.
pub fn scheme_json(s: &Scheme) -> Value {
    let mut v = serde_json::to_value(s).expect("scheme serializes");
    v["network"] = serde_json::to_value(s.network()).expect("network serializes");
    v["marginals"] = serde_json::to_value(&s.marginals).expect("marginals serialize");
    v["synthetic_rows"] = json!(s.synthetic().n_rows());
    v
}

pub fn record_json(rec: &SchemeRecord) -> Value {
    let mut v = json!({ "id": rec.id, "status": rec.status, "request": rec.request });
    if let Some(e) = &rec.error {
        v["error"] = json!(e);
    }
    if let Some(s) = &rec.scheme {
        v["scheme"] = scheme_json(s);
    }
    v
}

/// One ranking-list row: configuration plus flattened metrics.
pub fn ranking_row(rec: &SchemeRecord) -> Value {
    let mut v = json!({
        "id": rec.id,
        "status": rec.status,
        "epsilon": rec.request.epsilon,
        "baseline": rec.request.baseline,
    });
    if let Some(s) = &rec.scheme {
        v["k"] = json!(s.config.k);
        v["seed"] = json!(s.seed);
        v["private"] = json!(s.private);
        v["weights"] = json!(s.weights);
        if let Some(m) = &s.metrics {
            v["metrics"] = m.flat().into_iter().map(|(k, x)| (k, json!(x))).collect::<serde_json::Map<_, _>>().into();
        }
    }
    v
}
