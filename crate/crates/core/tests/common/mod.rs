#![allow(dead_code)]

use fundaml::classifier::NetworkConfig;
use fundaml::ingest::RawTransactionRecord;
use fundaml::pipeline::{self, BatchProfile, RunStore};
use fundaml::synthgen::{generate, GroundTruth, PopulationSpec};

pub fn population(customers: usize, seed: u64) -> (Vec<RawTransactionRecord>, GroundTruth) {
    let spec = PopulationSpec {
        n_customers: customers,
        injections: vec!["rapid:6".parse().unwrap(), "exchange:3".parse().unwrap()],
        rng_seed: seed,
        ..Default::default()
    };
    generate(&spec).unwrap()
}

/// Default profile with a short training schedule.
pub fn quick_profile() -> BatchProfile {
    BatchProfile {
        network: NetworkConfig {
            training_cycles: 400,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn store_with_run() -> (tempfile::TempDir, RunStore, String, GroundTruth) {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    let (records, truth) = population(300, 5);
    let run = pipeline::run_batch(&store, &records, &quick_profile()).unwrap();
    (dir, store, run, truth)
}
