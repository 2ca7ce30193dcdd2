//! HTTP front end for the telemetry store.
//!
//! Routes:
//!
//! | method | path | body | success |
//! |---|---|---|---|
//! | GET  | `/health` | | `{"status":"ok"}` |
//! | GET  | `/channels` | | channel ids |
//! | POST | `/channels` | `{id, write_key, field_names?, min_write_interval_ms?}` | 201 `{id}` |
//! | POST | `/channels/{id}/update` | `{write_key, field1..field8, status?}` | 200 `{entry_id}`, 429, 401, 404 |
//! | GET  | `/channels/{id}/feed?results=N` | | `{channel, records:[...]}` oldest first |
//! | GET  | `/crops` | | catalogue |
//! | POST | `/crops/select` | `{crop_name}` | active profile, 404 if unknown |
//! | GET  | `/crops/threshold` | | `{crop_name, threshold_sm, release_sm}` |
//! | POST | `/nodes/{id}/images` | PPM/PGM bytes | 201 `{image_id}` |
//! | GET  | `/nodes/{id}/images/latest` | | PNM bytes, `x-image-id`, `x-timestamp-ms` |
//! | POST | `/nodes/{id}/predictions` | `{label, confidence, image_id, lesion_box?}` | 201 `{prediction_id}` |
//! | GET  | `/nodes/{id}/predictions/latest` | | prediction record |
//!
//! Errors carry `{"error": message, "code": kind}`.

pub mod api;
pub mod client;

use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use scrop_core::clock::{Clock, Epoch, SystemClock};
use scrop_core::cloud::{ChannelConfig, CloudError, CloudStore, StoreOptions, VISIBILITY_DELAY_MS};
use tokio::sync::oneshot;

pub use api::{router, AppState};
pub use client::HttpCloudClient;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot open store: {0}")]
    Store(#[from] CloudError),
    #[error("network: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub data_dir: Option<PathBuf>,
    /// Hold accepted writes back from readers for the modelled upload latency.
    pub simulated_latency: bool,
    /// Channels created at start-up if missing.
    pub channels: Vec<ChannelConfig>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            simulated_latency: false,
            channels: Vec::new(),
        }
    }
}

/// Opens the wall-clock store described by `config`, replaying any logs.
pub fn open_store(config: &ServerConfig) -> Result<CloudStore, ServerError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let mut options = StoreOptions::live(config.data_dir.clone());
    if config.simulated_latency {
        options.visibility_delay_ms = VISIBILITY_DELAY_MS;
    }
    let store = CloudStore::open(clock, options)?;
    for channel in &config.channels {
        store.create_channel(channel.clone())?;
    }
    Ok(store)
}

fn app(store: Arc<CloudStore>) -> axum::Router {
    router(AppState {
        store,
        epoch: Epoch::unix(),
    })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    store: Arc<CloudStore>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app(store)).with_graceful_shutdown(shutdown).await
}

/// A server running on its own thread; stops when dropped.
pub struct RunningServer {
    addr: SocketAddr,
    store: Arc<CloudStore>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn store(&self) -> &Arc<CloudStore> {
        &self.store
    }

    pub fn client(&self) -> HttpCloudClient {
        HttpCloudClient::new(self.url())
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take().map(|t| t.join()) {
            Some(Ok(result)) => result,
            Some(Err(_)) => Err(std::io::Error::other("server thread panicked")),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Binds `bind` (port 0 picks a free port) and serves `store` on a background thread.
pub fn spawn(store: Arc<CloudStore>, bind: SocketAddr) -> Result<RunningServer, ServerError> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let served = store.clone();
    let thread = std::thread::Builder::new().name("scrop-server".into()).spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            serve(served, listener, async {
                let _ = stopped.await;
            })
            .await
        })
    })?;
    Ok(RunningServer {
        addr,
        store,
        stop: Some(stop),
        thread: Some(thread),
    })
}
