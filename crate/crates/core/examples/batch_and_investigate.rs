//! A complete batch run followed by an analyst session: investigate the
//! best-ranked customer, dispose the case and retrain.

use fundaml::calendar::Granularity;
use fundaml::pipeline::{self, BatchProfile, Disposition, InvestigateRequest, RunStore};
use fundaml::synthgen::{generate, PopulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("fundaml-example-runs");
    let store = RunStore::open(&root)?;

    let spec = PopulationSpec {
        injections: vec!["rapid:10".parse()?, "exchange:5".parse()?],
        rng_seed: 1,
        ..Default::default()
    };
    let (records, truth) = generate(&spec)?;
    let run = pipeline::run_batch(&store, &records, &BatchProfile::default())?;
    println!("run {run} in {}", store.run_dir(&run).display());

    let ranked = pipeline::score_all(&store, &run, &[Granularity::Day, Granularity::Week])?;
    let customers = pipeline::rank_customers(&ranked);
    for c in customers.iter().take(5) {
        let mark = if truth.contains(&c.customer_id) { "*" } else { " " };
        println!("{mark} {} {} {} {:.4}", c.customer_id, c.granularity, c.period_start, c.degree);
    }

    let top = &customers[0];
    let case = pipeline::investigate(
        &store,
        &run,
        &InvestigateRequest {
            customer_id: top.customer_id.clone(),
            fund_id: Some(top.fund_id.clone()),
            date: top.period_start,
            granularities: None,
        },
    )?;
    println!("{} {:?} {}: {:?}", case.case_id, case.degrees, case.alert_level, case.rationale);

    let case = pipeline::record_disposition(&store, &run, &case.case_id, Disposition::Suspicious, Some("confirmed".into()))?;
    println!("{} is now {}", case.case_id, case.disposition.as_str());
    for (g, fp) in pipeline::retrain(&store, &run)? {
        println!("retrained {g}: {}", &fp[..16]);
    }
    Ok(())
}
