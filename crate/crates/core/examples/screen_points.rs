use fundaml::calendar::Granularity;
use fundaml::features::{bucketize, compute_points};
use fundaml::screening::{screen, ScreeningThresholds};
use fundaml::synthgen::{generate, PopulationSpec};

fn main() {
    let spec = PopulationSpec {
        n_customers: 300,
        injections: vec!["rapid:5".parse().unwrap()],
        rng_seed: 3,
        ..Default::default()
    };
    let (records, truth) = generate(&spec).unwrap();
    let points = compute_points(&bucketize(&records, Granularity::Day), 3);

    for (s, big_s) in [(0.0, 0.0), (0.2, 0.2), (0.4, 0.4), (0.8, 0.8)] {
        let t = ScreeningThresholds::new(s, big_s).unwrap();
        let kept = screen(&points, &t);
        let injected = kept.iter().filter(|p| truth.contains(&p.key.customer_id)).count();
        println!("s={s:.1} S={big_s:.1}: {:>6} of {} points, {injected} from injected customers", kept.len(), points.len());
    }
}
