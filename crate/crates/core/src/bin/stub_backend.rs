//! Test backend: answers `POST` with `{"text": "<model_id>:<query hash>"}`.

use std::net::SocketAddr;
use std::time::Duration;

use clap::Parser;
use qroute::gateway::StubBackend;

#[derive(Parser)]
#[command(version, about = "Stub LLM backend for exercising the routing gateway")]
struct Args {
    /// Model id echoed in every response.
    #[arg(long)]
    model_id: String,
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: SocketAddr,
    /// Artificial delay before answering.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let stub = StubBackend::spawn(&args.model_id, args.listen, Duration::from_millis(args.delay_ms)).await?;
    println!("{} listening on {}", args.model_id, stub.endpoint());
    tokio::signal::ctrl_c().await?;
    stub.shutdown().await;
    Ok(())
}
