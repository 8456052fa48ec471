//! HTTP service exposing the engine: projects, tree editing, planning,
//! execution, assets, the timeline, export and session metrics.
//!
//! Every error uses the envelope `{code, message, details}`; `code` is the
//! engine's stable error name.

mod error;
mod routes;

pub use error::{status_for, ApiError};
pub use routes::{content_type, AppState, Body};

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use anyhow::Context;
use axum::http::{HeaderValue, Method};
use axum::Router;
use reeltree_core::config::Config;
use reeltree_core::engine::Engine;
use reeltree_core::store::{DataDirLock, FsStore};
use tokio::sync::oneshot;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::{ServeDir, ServeFile};

#[derive(Clone, Debug, Default)]
pub struct RouterOptions {
    /// Allowed browser origins; `*` allows any.
    pub cors_allow: Vec<String>,
    /// Built frontend served for paths no endpoint claims.
    pub static_dir: Option<PathBuf>,
}

pub fn router(state: AppState, opts: &RouterOptions) -> Router {
    let mut app = routes::routes().with_state(state);
    if !opts.cors_allow.is_empty() {
        let origins = if opts.cors_allow.iter().any(|o| o == "*") {
            AllowOrigin::from(Any)
        } else {
            AllowOrigin::list(opts.cors_allow.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
        };
        let cors = CorsLayer::new()
            .allow_origin(origins)
            .allow_methods([Method::GET, Method::POST, Method::PATCH, Method::DELETE])
            .allow_headers(Any);
        app = app.layer(cors);
    }
    if let Some(dir) = &opts.static_dir {
        let index = dir.join("index.html");
        app = app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)));
    }
    app
}

/// Opens the data directory named by `config` (taking its single-instance
/// lock), builds the engine, starts the job workers and serves until
/// ctrl-c.
pub async fn serve(config: Config) -> anyhow::Result<()> {
    let lock = DataDirLock::acquire(&config.data_dir).context("locking the data directory")?;
    let engine = open_engine(&config)?;
    let workers = engine.start_workers(config.parallelism);
    let state = AppState {
        engine,
        export_root: config.data_dir.join("exports"),
    };
    let opts = RouterOptions {
        cors_allow: config.cors_allow.clone(),
        static_dir: config.static_dir.clone(),
    };
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, &opts))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::spawn_blocking(move || workers.shutdown()).await?;
    drop(lock);
    Ok(())
}

pub fn open_engine(config: &Config) -> anyhow::Result<Arc<Engine>> {
    let mut store = FsStore::open(&config.data_dir)?;
    if !config.fsync {
        store = store.without_fsync();
    }
    Ok(Arc::new(config.build_engine(Arc::new(store))?))
}

/// A server running on its own thread and runtime; stops on drop. Used by
/// tests and the CLI's HTTP replay driver.
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl BackgroundServer {
    /// Binds `127.0.0.1` on an ephemeral port. Job workers are the caller's
    /// business.
    pub fn start(state: AppState, opts: RouterOptions) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                let _ = axum::serve(listener, router(state, &opts))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
