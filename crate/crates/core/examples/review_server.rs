//! Serves the review API for a directory of sessions.
//!
//! `cargo run --example review_server -- <root> [port]`
//!
//! Then, for example:
//! `curl -X POST localhost:8080/sessions -d '{"manifest":"data/manifest.jsonl","scores":"scores.jsonl"}'`

use std::sync::Arc;

use cerhv::review::server::{serve, ReviewService};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = args.next().ok_or("usage: review_server <root> [port]")?;
    let port: u16 = args.next().map(|p| p.parse()).transpose()?.unwrap_or(8080);
    let service = Arc::new(ReviewService::open(root.as_ref())?);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        serve(listener, service).await
    })?;
    Ok(())
}
