use std::net::SocketAddr;

use digico_core::api::DEFAULT_PORT;
use digico_server::{serve, AppState, ADDR_ENV};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();

    let addr: SocketAddr = match std::env::var(ADDR_ENV) {
        Ok(raw) => match raw.parse() {
            Ok(a) => a,
            Err(e) => {
                eprintln!("bad {ADDR_ENV} `{raw}`: {e}");
                std::process::exit(2);
            }
        },
        Err(_) => SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
    };
    let state = AppState::from_env();
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot bind {addr}: {e}");
            std::process::exit(1);
        }
    };
    tracing::info!(%addr, out = %state.default_out().display(), "digico service listening");
    let server = serve(listener, state);
    tokio::select! {
        res = server => {
            if let Err(e) = res {
                eprintln!("server error: {e}");
                std::process::exit(1);
            }
        }
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
    }
}
