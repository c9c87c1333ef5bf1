use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use feedstation::server::{JsonlStorage, Server, SystemClock};
use feedstation_server::{router, AppState};
use log::{error, info};

/// Telemetry server for feeding stations.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "FEEDSTATION_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Write-ahead log holding all server state.
    #[arg(long, env = "FEEDSTATION_STORAGE", default_value = "feedstation-server.jsonl")]
    storage: PathBuf,
    /// Bearer token required for operator requests.
    #[arg(long, env = "FEEDSTATION_OPERATOR_TOKEN", hide_env_values = true)]
    token: String,
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if args.token.trim().is_empty() {
        error!("operator token must not be empty");
        return ExitCode::FAILURE;
    }
    let server = match Server::open(JsonlStorage::new(&args.storage), SystemClock) {
        Ok(s) => s,
        Err(e) => {
            error!("cannot open {}: {e}", args.storage.display());
            return ExitCode::FAILURE;
        }
    };
    let app = router(AppState::new(server, args.token));
    let listener = match tokio::net::TcpListener::bind(args.bind).await {
        Ok(l) => l,
        Err(e) => {
            error!("cannot bind {}: {e}", args.bind);
            return ExitCode::FAILURE;
        }
    };
    info!("listening on {}", args.bind);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
        info!("shutting down");
    };
    if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
        error!("server failed: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
