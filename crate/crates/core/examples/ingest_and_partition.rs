//! Cleaning a messy extract: bad rows are reported, copies collapsed,
//! customers split into individual and corporate populations.

use fundaml::ingest::{clean_mapping_errors, parse_transactions, partition_by_customer_type, JointPolicy};

const RAW: &str = "\
customer_id,fund_id,sub_fund_id,date,direction,amount,shares_value,customer_type
C1,F1,,2000-03-01,SUB,1000,5000,individual
C1,F1,,2000-03-01,SUB,1000,5000,individual
C1,F1,,2000-03-02,RED,800,5200,individual
C2,F1,,2000-03-02,SUB,-10,900,corporate
C2,F1,,2000-03-05,SUB,250,900,corporate
C2,F1,,2000-03-05,SUB,250,910,corporate
C3,F1,,2000-02-30,RED,10,20,joint
C3,F1,,2000-03-07,RED,0,20,joint
C3,F1,,2000-03-08,EXOUT,15,20,joint
";

fn main() {
    let parsed = parse_transactions(RAW.as_bytes()).unwrap();
    for r in &parsed.rejections {
        println!("line {:>2}: {} {}", r.line_number, r.reason.as_str(), r.detail);
    }

    // Same customer, fund, date, direction and amount: a mapping copy.
    let (records, removed) = clean_mapping_errors(parsed.records);
    println!("{:?}, {removed} mapping copies removed", parsed.report.summary());

    for (part, recs) in partition_by_customer_type(records, JointPolicy::default()) {
        let ids: Vec<&str> = recs.iter().map(|r| r.customer_id.as_str()).collect();
        println!("{part:?}: {ids:?}");
    }
}
