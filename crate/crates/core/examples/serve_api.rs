//! Builds a small run and serves it on the default port until ctrl-c.
//!
//! ```text
//! curl localhost:8750/runs
//! curl 'localhost:8750/runs/<id>/clusters?granularity=day'
//! ```

use std::net::SocketAddr;
use std::sync::Arc;

use fundaml::pipeline::{self, BatchProfile, RunStore};
use fundaml::service::{serve, ServiceConfig, DEFAULT_PORT};
use fundaml::synthgen::{generate, PopulationSpec};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let store = Arc::new(RunStore::open(std::env::temp_dir().join("fundaml-serve-example"))?);
    if store.list_runs()?.is_empty() {
        let spec = PopulationSpec {
            n_customers: 300,
            injections: vec!["rapid:5".parse()?],
            ..Default::default()
        };
        let (records, _) = generate(&spec)?;
        let s = store.clone();
        tokio::task::spawn_blocking(move || pipeline::run_batch(&s, &records, &BatchProfile::default())).await??;
    }
    let config = ServiceConfig {
        analyst_token: Some("letmein".into()),
        ..Default::default()
    };
    serve(store, config, SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT))).await?;
    Ok(())
}
