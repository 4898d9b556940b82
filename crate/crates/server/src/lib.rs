//! Review service: exposes the HITs of a completed run over HTTP+JSON and
//! records reviewer decisions.
//!
//! Reads are served from an immutable snapshot of the run state. Decisions
//! are serialized through a single writer: each one is validated, the run
//! is re-executed with the extended resolution log, the decision is appended
//! durably to the resolution file, and only then is the new snapshot
//! published and the request acknowledged.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use viewlink::config::RunConfig;
use viewlink::hits::HitResolution;
use viewlink::pipeline::{PipelineError, RunReport, RunState, Workbench, REPORT_FILE, RESOLUTIONS_FILE};

mod routes;

pub use routes::{router, ResolutionBody};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("no completed run in {0}; run the pipeline first")]
    NoRun(PathBuf),
    #[error("unreadable run report {path}: {reason}")]
    BadReport { path: PathBuf, reason: String },
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server failure: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) struct Snapshot {
    pub log: Vec<HitResolution>,
    pub state: RunState,
}

pub struct ReviewService {
    bench: Workbench,
    started_at: String,
    stale: bool,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: tokio::sync::Mutex<()>,
    static_dir: Option<PathBuf>,
}

impl ReviewService {
    /// Loads the study and the stored resolution log of a completed run.
    ///
    /// If the run report on disk was produced from different inputs or
    /// configuration, the service opens read-only.
    pub fn open(config: RunConfig) -> Result<Self, ServeError> {
        let bench = Workbench::prepare(config)?;
        let report_path = bench.config.output_dir.join(REPORT_FILE);
        let recorded = recorded_hash(&report_path)?;
        let stale = recorded != bench.manifest_hash;
        if stale {
            log::warn!(
                "outputs in {} were produced from different inputs ({} vs {}); serving read-only",
                bench.config.output_dir.display(),
                recorded,
                bench.manifest_hash
            );
        }
        let log = bench.stored_resolutions()?;
        let state = bench.execute(&log)?;
        Ok(Self {
            bench,
            started_at: chrono::Utc::now().to_rfc3339(),
            stale,
            snapshot: RwLock::new(Arc::new(Snapshot { log, state })),
            writer: tokio::sync::Mutex::new(()),
            static_dir: None,
        })
    }

    /// Serves files from `dir` for paths the API does not claim.
    pub fn with_static_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.static_dir = Some(dir.into());
        self
    }

    pub fn manifest_hash(&self) -> &str {
        &self.bench.manifest_hash
    }

    pub fn is_read_only(&self) -> bool {
        self.stale
    }

    pub fn workbench(&self) -> &Workbench {
        &self.bench
    }

    pub fn resolution_path(&self) -> PathBuf {
        self.bench.config.output_dir.join(RESOLUTIONS_FILE)
    }

    pub(crate) fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub(crate) fn publish(&self, next: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
    }

    pub(crate) fn started_at(&self) -> &str {
        &self.started_at
    }

    /// Current report as it would be written to disk.
    pub fn report(&self) -> Result<RunReport, PipelineError> {
        self.bench.report(&self.snapshot().state, &self.started_at)
    }
}

fn recorded_hash(path: &Path) -> Result<String, ServeError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ServeError::NoRun(path.parent().unwrap_or(path).to_path_buf()))
        }
        Err(e) => {
            return Err(ServeError::BadReport {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        }
    };
    let report: RunReport = serde_json::from_str(&text).map_err(|e| ServeError::BadReport {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(report.manifest.manifest_hash)
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|source| {
        if source.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::AddressInUse(addr)
        } else {
            ServeError::Bind { addr, source }
        }
    })
}

/// Serves the review API on an already bound listener until the process
/// is stopped.
pub async fn serve(service: Arc<ReviewService>, listener: tokio::net::TcpListener) -> Result<(), ServeError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("review service listening on http://{addr}");
    }
    axum::serve(listener, router(service)).await?;
    Ok(())
}
