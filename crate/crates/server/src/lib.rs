//! HTTP service around the synthesis engine: sessions own a dataset, its
//! filtered view, charts, a pattern catalog and generated schemes.
//! Generation runs in the background; clients poll the scheme until its
//! status is `complete`.

pub mod api;
pub mod config;
pub mod error;
pub mod export;
pub mod session;
pub mod store;

use std::future::Future;
use std::path::PathBuf;

pub use api::{router, AppState, Shared};
pub use config::ServerConfig;
pub use error::ApiError;
pub use session::Settings;
pub use store::{Store, StoreError};

/// Version stamped on every JSON payload as `"v"`.
pub const PAYLOAD_VERSION: u32 = 1;

/// Serves until `shutdown` resolves, then persists every session.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Shared,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state.clone(), static_dir)).with_graceful_shutdown(shutdown).await?;
    for e in state.persist_all() {
        eprintln!("warning: {e}");
    }
    Ok(())
}
