//! Interactive critiquing sessions over HTTP.
//!
//! Sessions live in memory and are evicted after a period of inactivity. The
//! model, dataset and blender are loaded once and only ever read.

pub mod api;
pub mod config;
pub mod error;
pub mod state;

use std::net::SocketAddr;
use std::time::Instant;

use tokio::net::TcpListener;

pub use api::router;
pub use config::ServiceConfig;
pub use error::{ApiError, ServiceError};
pub use state::{AppState, Loaded, SessionView};

pub async fn bind(port: u16) -> Result<TcpListener, ServiceError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}

/// Serves `state` on `listener` until ctrl-c, evicting idle sessions in the
/// background.
pub async fn run(listener: TcpListener, state: AppState) -> Result<(), ServiceError> {
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweeper.eviction_period());
        loop {
            tick.tick().await;
            let n = sweeper.evict_idle(Instant::now());
            if n > 0 {
                log::info!("evicted {n} idle sessions");
            }
        }
    });
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}
