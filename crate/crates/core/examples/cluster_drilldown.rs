//! Repeated clustering inside the most suspicious cluster until it is
//! tight enough, the way an analyst narrows down a large fund.

use fundaml::calendar::Granularity;
use fundaml::clustering::{drill_until, rank_clusters_by_suspicion, ClusterSelection, ClusteringConfig, DrillDecision};
use fundaml::features::{bucketize, compute_points};
use fundaml::synthgen::{generate, PopulationSpec};

fn main() {
    let spec = PopulationSpec {
        n_customers: 2000,
        injections: vec!["rapid:20".parse().unwrap()],
        rng_seed: 11,
        ..Default::default()
    };
    let (records, truth) = generate(&spec).unwrap();
    let points = compute_points(&bucketize(&records, Granularity::Day), 3);
    let coords: Vec<[f64; 2]> = points.iter().map(|p| p.coords()).collect();
    let config = ClusteringConfig::default();

    let outcome = drill_until(&coords, &config, |step| {
        let top = rank_clusters_by_suspicion(&step.result)[0];
        let [d1, d2] = step.result.centroids[top];
        println!(
            "level with {:>6} points: top cluster {top} centroid ({d1:.3}, {d2:.3}), {} members",
            step.members.len(),
            step.result.per_cluster_sizes[top]
        );
        if d1.min(d2) >= 0.6 {
            DrillDecision::Accept(top)
        } else {
            DrillDecision::Descend(ClusterSelection::TopRanked)
        }
    })
    .unwrap();

    let hits = outcome
        .selected
        .iter()
        .filter(|&&i| truth.contains(&points[i].key.customer_id))
        .count();
    println!("{:?} after {} levels: {} points, {hits} from injected customers", outcome.stop, outcome.levels.len(), outcome.selected.len());
}
