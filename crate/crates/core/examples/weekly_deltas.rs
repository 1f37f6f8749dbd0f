//! Weekly delta1/delta2 of four investors in one fund, with and without lookback.

use fundaml::calendar::Granularity;
use fundaml::features::{bucketize, compute_points, display2};
use fundaml::ingest::parse_transactions;

const CSV: &str = include_str!("../tests/data/fund_a_weeks.csv");

fn main() {
    let parsed = parse_transactions(CSV.as_bytes()).expect("fixture parses");
    let aggregates = bucketize(&parsed.records, Granularity::Week);

    println!("{:<4} {:>8} {:>6} {:>6} {:>8} {:>6} {:>6} {:>10}", "id", "week", "sub", "red", "shares", "d1", "d2", "d1 (k=3)");
    let plain = compute_points(&aggregates, 0);
    let lookback = compute_points(&aggregates, 3);
    for ((a, p), l) in aggregates.iter().zip(&plain).zip(&lookback) {
        let week = a.key.period_start().to_naive().format("%V");
        println!(
            "{:<4} {:>8} {:>6} {:>6} {:>8} {:>6} {:>6} {:>10}",
            a.key.customer_id,
            week,
            a.alpha,
            a.beta,
            a.theta,
            display2(p.delta1),
            display2(p.delta2),
            display2(l.delta1),
        );
    }
}
