//! File-backed session persistence: one directory per session holding
//! `session.json`, `source.csv` and one subdirectory per finished scheme.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dpchart_core::charts::{ChartSpec, PatternCatalog};
use dpchart_core::data::{load_csv, SchemaDescriptor};
use dpchart_core::engine::Scheme;
use serde::{Deserialize, Serialize};

use crate::session::{SchemeRecord, SchemeRequest, Session, Settings, Status, ViewSpec};
use crate::PAYLOAD_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("state directory {path}: {message}")]
    Directory { path: PathBuf, message: String },
    #[error("session {id:?} not found in the store")]
    Unknown { id: String },
    #[error("session {id:?}: {file}: {message}")]
    Corrupt { id: String, file: String, message: String },
}

#[derive(Serialize, Deserialize)]
struct SchemeMeta {
    id: String,
    status: Status,
    request: SchemeRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    v: u32,
    id: String,
    settings: Settings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<SchemaDescriptor>,
    view: ViewSpec,
    charts: Vec<ChartSpec>,
    next_chart: u64,
    catalog: PatternCatalog,
    schemes: Vec<SchemeMeta>,
    next_scheme: u64,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl Store {
    /// Opens `root`, creating it if needed, and checks it is writable.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let err = |e: std::io::Error| StoreError::Directory { path: root.to_path_buf(), message: e.to_string() };
        fs::create_dir_all(root).map_err(err)?;
        let probe = root.join(".write-probe");
        fs::write(&probe, b"").map_err(err)?;
        fs::remove_file(&probe).map_err(err)?;
        Ok(Store { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn save(&self, s: &Session) -> std::io::Result<()> {
        let dir = self.dir(&s.id);
        fs::create_dir_all(&dir)?;
        if let Some(src) = &s.source {
            write_atomic(&dir.join("source.csv"), src.to_csv().as_bytes())?;
        }
        for rec in &s.schemes {
            if let Some(scheme) = &rec.scheme {
                let sdir = dir.join("schemes").join(&rec.id);
                if !sdir.join("scheme.json").exists() {
                    scheme.save_dir(&sdir).map_err(std::io::Error::other)?;
                }
            }
        }
        let file = SessionFile {
            v: PAYLOAD_VERSION,
            id: s.id.clone(),
            settings: s.settings,
            schema: s.source.as_ref().map(|d| d.schema_descriptor()),
            view: s.view_spec.clone(),
            charts: s.charts.clone(),
            next_chart: s.next_chart,
            catalog: s.catalog.clone(),
            schemes: s
                .schemes
                .iter()
                .map(|r| SchemeMeta {
                    id: r.id.clone(),
                    status: r.status,
                    request: r.request.clone(),
                    error: r.error.clone(),
                })
                .collect(),
            next_scheme: s.next_scheme,
        };
        write_atomic(&dir.join("session.json"), &serde_json::to_vec_pretty(&file)?)
    }

    /// Rebuilds a session. A generation interrupted by shutdown is restored
    /// as failed.
    pub fn load(&self, id: &str) -> Result<Session, StoreError> {
        let dir = self.dir(id);
        let path = dir.join("session.json");
        if !path.exists() {
            return Err(StoreError::Unknown { id: id.to_string() });
        }
        let corrupt =
            |file: &str, message: String| StoreError::Corrupt { id: id.to_string(), file: file.into(), message };
        let bytes = fs::read(&path).map_err(|e| corrupt("session.json", e.to_string()))?;
        let file: SessionFile = serde_json::from_slice(&bytes).map_err(|e| corrupt("session.json", e.to_string()))?;
        if file.v != PAYLOAD_VERSION {
            return Err(corrupt("session.json", format!("unsupported version {}", file.v)));
        }
        if file.id != id {
            return Err(corrupt("session.json", format!("records id {:?}", file.id)));
        }
        let mut s = Session::new(id, file.settings);
        if let Some(schema) = &file.schema {
            let csv = fs::read(dir.join("source.csv")).map_err(|e| corrupt("source.csv", e.to_string()))?;
            s.source = Some(load_csv(&csv, Some(schema)).map_err(|e| corrupt("source.csv", e.to_string()))?);
        }
        s.view_spec = file.view;
        s.charts = file.charts;
        s.next_chart = file.next_chart;
        s.next_scheme = file.next_scheme;
        for meta in file.schemes {
            let (status, error, scheme) = match meta.status {
                Status::Complete => {
                    let name = format!("schemes/{}", meta.id);
                    let loaded = Scheme::load_dir(&dir.join("schemes").join(&meta.id))
                        .map_err(|e| corrupt(&name, e.to_string()))?;
                    (Status::Complete, None, Some(Arc::new(loaded)))
                }
                Status::Running => (Status::Failed, Some("interrupted by shutdown".to_string()), None),
                Status::Failed => (Status::Failed, meta.error, None),
            };
            s.schemes.push(SchemeRecord { id: meta.id, status, request: meta.request, error, scheme });
        }
        // The catalog is stored after the view is rebuilt so that pattern
        // records are exactly the persisted ones.
        s.rebuild_view().map_err(|e| corrupt("session.json", e.message))?;
        s.catalog = file.catalog;
        Ok(s)
    }

    /// Every session directory in the store; unreadable ones are reported
    /// and skipped.
    pub fn load_all(&self) -> (Vec<Session>, Vec<StoreError>) {
        let mut ok = Vec::new();
        let mut bad = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) => {
                bad.push(StoreError::Directory { path: self.root.clone(), message: e.to_string() });
                return (ok, bad);
            }
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("session.json").exists())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        for id in ids {
            match self.load(&id) {
                Ok(s) => ok.push(s),
                Err(e) => bad.push(e),
            }
        }
        (ok, bad)
    }
}
