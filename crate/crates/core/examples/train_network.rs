use fundaml::calendar::Granularity;
use fundaml::classifier::{gradient_check, train, LabeledSample, NetworkConfig, TrainingSet};
use fundaml::features::{AggregateKey, DeltaPoint};

fn point(n: usize, delta1: f64, delta2: f64) -> DeltaPoint {
    DeltaPoint {
        key: AggregateKey {
            customer_id: format!("X{n:03}"),
            fund_id: "F".into(),
            granularity: Granularity::Day,
            period_index: 0,
        },
        delta1,
        delta2,
        lookback_k: 3,
        data_quality_flag: false,
    }
}

fn main() {
    let config = NetworkConfig::default();
    let err = gradient_check(&config, &LabeledSample { input: [0.7, 0.3], target: 1.0 }).unwrap();
    println!("gradient check relative error {err:.2e}");

    // High on both axes is suspicious, everything else is not.
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..20 {
        let t = i as f64 / 20.0;
        positives.push(point(i, 0.85 + 0.15 * t, 0.6 + 0.4 * (1.0 - t)));
        negatives.push(point(100 + i, t, 0.05 * t));
        negatives.push(point(200 + i, 0.3 * t, 0.9 * t));
    }
    let set = TrainingSet { positives, negatives, negative_sampling_rate: 1.0 };
    let model = train(&set, &config, Granularity::Day).unwrap();
    println!("{model}");
    println!("accuracy {:.3}", model.accuracy(&set));
    for (d1, d2) in [(0.98, 0.83), (0.0019, 0.01), (0.5, 0.5)] {
        println!("degree({d1}, {d2}) = {:.4}", model.degree(d1, d2));
    }
}
