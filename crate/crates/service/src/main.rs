use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stopline_service::{router, AppState, ServiceOptions};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "stopline-serve", version, about = "Operator API for stop-line violation review")]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Frame list the pipeline ran over.
    #[arg(long)]
    list: Option<PathBuf>,
    /// Defaults to `<store stem>.ckpt` next to the store.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Directory relative frame paths resolve against.
    #[arg(long)]
    frames_base: Option<PathBuf>,
    /// Config patch audit log; defaults to `<config>.audit.jsonl`.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long, env = "STOPLINE_TOKEN", hide_env_values = true)]
    token: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    if args.token.is_empty() {
        eprintln!("error: --token must not be empty");
        return ExitCode::from(2);
    }
    let mut options = ServiceOptions::new(args.config, args.store, args.list, args.token);
    if let Some(dir) = args.checkpoints {
        options.checkpoint_dir = dir;
    }
    if let Some(dir) = args.frames_base {
        options.frames_base = dir;
    }
    if let Some(path) = args.audit {
        options.audit_path = path;
    }
    let state = match AppState::open(options) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let listener = match tokio::net::TcpListener::bind(args.addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: bind {}: {e}", args.addr);
            return ExitCode::from(1);
        }
    };
    tracing::info!(addr = %args.addr, "listening");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
