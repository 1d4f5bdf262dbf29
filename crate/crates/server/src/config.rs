use std::path::PathBuf;

use crate::session::Settings;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

/// Server settings read from `DPCHART_*` environment variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerConfig {
    pub listen: String,
    pub state_dir: Option<PathBuf>,
    /// Directory of prebuilt UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
    pub settings: Settings,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { listen: DEFAULT_LISTEN.into(), state_dir: None, static_dir: None, settings: Settings::default() }
    }
}

fn positive(name: &str, raw: &str) -> Result<usize, String> {
    match raw.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("{name} must be a positive integer, got {raw:?}")),
    }
}

impl ServerConfig {
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut c = ServerConfig::default();
        if let Some(v) = get("DPCHART_LISTEN") {
            c.listen = v;
        }
        c.state_dir = get("DPCHART_STATE_DIR").filter(|v| !v.is_empty()).map(PathBuf::from);
        c.static_dir = get("DPCHART_STATIC_DIR").filter(|v| !v.is_empty()).map(PathBuf::from);
        if let Some(v) = get("DPCHART_MAX_K") {
            c.settings.max_k = positive("DPCHART_MAX_K", &v)?;
        }
        if let Some(v) = get("DPCHART_DEGREE_K") {
            c.settings.degree_k =
                v.trim().parse().map_err(|_| format!("DPCHART_DEGREE_K must be a non-negative integer, got {v:?}"))?;
        }
        Ok(c)
    }
}
