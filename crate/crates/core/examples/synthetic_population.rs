use std::collections::BTreeMap;

use fundaml::synthgen::{generate, PopulationSpec};

fn main() {
    let spec = PopulationSpec {
        injections: vec!["rapid:10".parse().unwrap(), "exchange:5".parse().unwrap()],
        rng_seed: 7,
        ..Default::default()
    };
    let (records, truth) = generate(&spec).unwrap();

    let mut by_direction = BTreeMap::new();
    for r in &records {
        *by_direction.entry(r.direction.code()).or_insert(0usize) += 1;
    }
    println!("{} records {by_direction:?}", records.len());

    for c in &truth.customers {
        println!("{} {} {:?} on {:?}", c.customer_id, c.fund_id, c.kind, c.dates.iter().map(|d| d.to_string()).collect::<Vec<_>>());
        for r in records.iter().filter(|r| r.customer_id == c.customer_id && c.dates.contains(&r.date)) {
            println!("    {} {:<5} {:>12.2}  shares {:>12.2}", r.date, r.direction.code(), r.amount, r.shares_value.unwrap_or(0.0));
        }
    }
}
