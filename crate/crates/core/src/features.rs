//! Period aggregation and the two suspicion parameters.
//!
//! For every customer × fund × period the subscriptions (`alpha`),
//! redemptions (`beta`) and holdings (`theta`) are totalled. `delta1` is the
//! min/max ratio of subscriptions to redemptions, optionally taking the
//! largest subscription over the previous `k` periods; `delta2` is the share
//! of holdings redeemed. Both live in `[0, 1]`.

use std::collections::HashMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::calendar::{Day, Granularity};
use crate::ingest::RawTransactionRecord;

/// Lookback used when none is configured.
pub const DEFAULT_LOOKBACK: u32 = 3;
/// Range accepted from the command line.
pub const LOOKBACK_RANGE: std::ops::RangeInclusive<u32> = 1..=10;

pub const POINTS_CSV_HEADER: [&str; 11] = [
    "customer_id",
    "fund_id",
    "granularity",
    "period_index",
    "alpha",
    "beta",
    "theta",
    "delta1",
    "delta2",
    "lookback_k",
    "flag",
];

#[derive(Debug, thiserror::Error)]
pub enum FeaturesError {
    #[error("points CSV I/O: {0}")]
    Csv(#[from] csv::Error),
    #[error("points CSV line {line}: {message}")]
    BadRow { line: u64, message: String },
}

/// Identifies one customer × fund × period bucket.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AggregateKey {
    pub customer_id: String,
    pub fund_id: String,
    pub granularity: Granularity,
    pub period_index: i64,
}

impl AggregateKey {
    pub fn period_start(&self) -> Day {
        self.granularity.period_start(self.period_index)
    }

    /// Stable textual identifier, used in exports.
    pub fn id(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.customer_id, self.fund_id, self.granularity, self.period_index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodAggregate {
    #[serde(flatten)]
    pub key: AggregateKey,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPoint {
    #[serde(flatten)]
    pub key: AggregateKey,
    pub delta1: f64,
    pub delta2: f64,
    /// 0 means same-period subscriptions only.
    pub lookback_k: u32,
    /// Set when `delta2` had to be clamped (redemption above recorded holdings).
    pub data_quality_flag: bool,
}

impl DeltaPoint {
    pub fn coords(&self) -> [f64; 2] {
        [self.delta1, self.delta2]
    }
}

/// Buckets records into per-period totals at `granularity`.
///
/// `theta` is the shares value of the latest record at or before the end of
/// the period. A series that never reports a shares value falls back to its
/// running net position (subscriptions minus redemptions, floored at zero).
/// Output is sorted by customer, fund, then period.
pub fn bucketize(records: &[RawTransactionRecord], granularity: Granularity) -> Vec<PeriodAggregate> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        (&ra.customer_id, &ra.fund_id, ra.date).cmp(&(&rb.customer_id, &rb.fund_id, rb.date))
    });

    let mut out: Vec<PeriodAggregate> = Vec::new();
    let mut series_start = 0;
    while series_start < order.len() {
        let first = &records[order[series_start]];
        let mut end = series_start;
        while end < order.len() {
            let r = &records[order[end]];
            if r.customer_id != first.customer_id || r.fund_id != first.fund_id {
                break;
            }
            end += 1;
        }

        let mut last_shares: Option<f64> = None;
        let mut net = 0.0_f64;
        let mut current: Option<PeriodAggregate> = None;
        for &i in &order[series_start..end] {
            let r = &records[i];
            let period = granularity.period_index(r.date);
            if current.as_ref().is_some_and(|c| c.key.period_index != period) {
                out.extend(current.take());
            }
            let agg = current.get_or_insert_with(|| PeriodAggregate {
                key: AggregateKey {
                    customer_id: r.customer_id.clone(),
                    fund_id: r.fund_id.clone(),
                    granularity,
                    period_index: period,
                },
                alpha: 0.0,
                beta: 0.0,
                theta: 0.0,
            });
            if r.direction.is_inflow() {
                agg.alpha += r.amount;
                net += r.amount;
            } else {
                agg.beta += r.amount;
                net -= r.amount;
            }
            if let Some(v) = r.shares_value {
                last_shares = Some(v);
            }
            agg.theta = last_shares.unwrap_or(net.max(0.0));
        }
        out.extend(current);
        series_start = end;
    }
    out
}

/// Same-period ratio: `min(alpha, beta) / max(alpha, beta)`, zero when either side is zero.
pub fn delta1_simple(alpha: f64, beta: f64) -> f64 {
    if alpha <= 0.0 || beta <= 0.0 {
        return 0.0;
    }
    if alpha <= beta {
        alpha / beta
    } else {
        beta / alpha
    }
}

/// Lookback ratio at period `j`: the largest subscription in periods
/// `[j - k, j]` against the redemption in period `j`.
///
/// `series` holds the aggregates of one customer × fund sorted by period.
/// Missing periods contribute zero subscription; the window is clamped at
/// the start of the series.
pub fn delta1_lookback(series: &[PeriodAggregate], j: i64, k: u32) -> f64 {
    let beta = series
        .binary_search_by_key(&j, |a| a.key.period_index)
        .map(|i| series[i].beta)
        .unwrap_or(0.0);
    let lo = j - i64::from(k);
    let alpha = series
        .iter()
        .filter(|a| (lo..=j).contains(&a.key.period_index))
        .map(|a| a.alpha)
        .fold(0.0_f64, f64::max);
    delta1_simple(alpha, beta)
}

/// Share of holdings redeemed, clamped to 1. The flag reports clamping.
pub fn delta2(beta: f64, theta: f64) -> (f64, bool) {
    if beta <= 0.0 {
        return (0.0, false);
    }
    if theta <= 0.0 {
        return (1.0, true);
    }
    let ratio = beta / theta;
    if ratio > 1.0 {
        (1.0, true)
    } else {
        (ratio, false)
    }
}

/// One point per aggregate. `k == 0` uses same-period subscriptions only.
///
/// Aggregates must come from a single granularity; they are grouped into
/// customer × fund series internally, so input order does not matter.
pub fn compute_points(aggregates: &[PeriodAggregate], k: u32) -> Vec<DeltaPoint> {
    let mut by_series: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (i, a) in aggregates.iter().enumerate() {
        by_series
            .entry((&a.key.customer_id, &a.key.fund_id))
            .or_default()
            .push(i);
    }

    let mut delta1 = vec![0.0; aggregates.len()];
    for idx in by_series.values_mut() {
        idx.sort_by_key(|&i| aggregates[i].key.period_index);
        for (pos, &i) in idx.iter().enumerate() {
            let a = &aggregates[i];
            delta1[i] = if k == 0 {
                delta1_simple(a.alpha, a.beta)
            } else {
                let lo = a.key.period_index - i64::from(k);
                let window_max = idx[..=pos]
                    .iter()
                    .rev()
                    .map(|&w| &aggregates[w])
                    .take_while(|w| w.key.period_index >= lo)
                    .map(|w| w.alpha)
                    .fold(0.0_f64, f64::max);
                delta1_simple(window_max, a.beta)
            };
        }
    }

    aggregates
        .iter()
        .zip(delta1)
        .map(|(a, d1)| {
            let (d2, clamped) = delta2(a.beta, a.theta);
            DeltaPoint {
                key: a.key.clone(),
                delta1: d1,
                delta2: d2,
                lookback_k: k,
                data_quality_flag: clamped,
            }
        })
        .collect()
}

/// Two-decimal, round-half-even presentation of a ratio. Never feed the
/// result back into computation.
pub fn display2(x: f64) -> String {
    format!("{:.2}", (x * 100.0).round_ties_even() / 100.0)
}

/// A row of the points CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub aggregate: PeriodAggregate,
    pub point: DeltaPoint,
    pub screened: Option<bool>,
}

/// Writes aggregates and their points; `screened`, when given, adds the
/// trailing `screened` column.
pub fn write_points_csv<W: io::Write>(
    sink: W,
    aggregates: &[PeriodAggregate],
    points: &[DeltaPoint],
    screened: Option<&[bool]>,
) -> Result<(), FeaturesError> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = POINTS_CSV_HEADER.to_vec();
    if screened.is_some() {
        header.push("screened");
    }
    w.write_record(&header)?;
    for (i, (a, p)) in aggregates.iter().zip(points).enumerate() {
        debug_assert_eq!(a.key, p.key);
        let mut row = vec![
            a.key.customer_id.clone(),
            a.key.fund_id.clone(),
            a.key.granularity.to_string(),
            a.key.period_index.to_string(),
            a.alpha.to_string(),
            a.beta.to_string(),
            a.theta.to_string(),
            p.delta1.to_string(),
            p.delta2.to_string(),
            p.lookback_k.to_string(),
            p.data_quality_flag.to_string(),
        ];
        if let Some(s) = screened {
            row.push(s[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_points_csv<R: io::Read>(source: R) -> Result<Vec<FeatureRow>, FeaturesError> {
    let mut reader = csv::Reader::from_reader(source);
    let has_screened = reader.headers()?.iter().any(|h| h == "screened");
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| FeaturesError::BadRow { line, message };
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("missing column {}", i + 1)));
        let num = |i: usize| -> Result<f64, FeaturesError> {
            let f = field(i)?;
            f.parse().map_err(|_| bad(format!("not a number: {f:?}")))
        };
        let key = AggregateKey {
            customer_id: field(0)?.to_string(),
            fund_id: field(1)?.to_string(),
            granularity: field(2)?.parse().map_err(|e| bad(format!("{e}")))?,
            period_index: field(3)?.parse().map_err(|_| bad("bad period_index".into()))?,
        };
        let flag = |i: usize| -> Result<bool, FeaturesError> {
            let f = field(i)?;
            f.parse().map_err(|_| bad(format!("not a boolean: {f:?}")))
        };
        rows.push(FeatureRow {
            aggregate: PeriodAggregate {
                key: key.clone(),
                alpha: num(4)?,
                beta: num(5)?,
                theta: num(6)?,
            },
            point: DeltaPoint {
                key,
                delta1: num(7)?,
                delta2: num(8)?,
                lookback_k: field(9)?.parse().map_err(|_| bad("bad lookback_k".into()))?,
                data_quality_flag: flag(10)?,
            },
            screened: if has_screened { Some(flag(11)?) } else { None },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CustomerType, Direction};
    use proptest::prelude::*;

    fn tx(customer: &str, date: Day, direction: Direction, amount: f64, shares: Option<f64>) -> RawTransactionRecord {
        RawTransactionRecord {
            customer_id: customer.into(),
            fund_id: "A".into(),
            sub_fund_id: None,
            date,
            direction,
            amount,
            shares_value: shares,
            customer_type: CustomerType::Corporate,
        }
    }

    fn agg(period: i64, alpha: f64, beta: f64, theta: f64) -> PeriodAggregate {
        PeriodAggregate {
            key: AggregateKey {
                customer_id: "C".into(),
                fund_id: "F".into(),
                granularity: Granularity::Week,
                period_index: period,
            },
            alpha,
            beta,
            theta,
        }
    }

    #[test]
    fn week_thirty_aggregate() {
        let mon = Day::from_ymd(2000, 7, 24).unwrap();
        let records = vec![
            tx("A01", mon, Direction::Subscription, 100.0, Some(200.0)),
            tx("A01", mon.add_days(3), Direction::Redemption, 90.0, Some(110.0)),
        ];
        let aggs = bucketize(&records, Granularity::Week);
        assert_eq!(aggs.len(), 1);
        assert_eq!((aggs[0].alpha, aggs[0].beta, aggs[0].theta), (100.0, 90.0, 110.0));
    }

    #[test]
    fn monthly_summation_and_empty_input() {
        assert!(bucketize(&[], Granularity::Day).is_empty());
        let d = Day::from_ymd(2000, 3, 2).unwrap();
        let records = vec![
            tx("C", d, Direction::Subscription, 40.0, None),
            tx("C", d.add_days(20), Direction::Subscription, 60.0, None),
        ];
        let aggs = bucketize(&records, Granularity::Month);
        assert_eq!(aggs.len(), 1);
        assert_eq!((aggs[0].alpha, aggs[0].beta), (100.0, 0.0));
        // No shares value anywhere: theta falls back to the net position.
        assert_eq!(aggs[0].theta, 100.0);
    }

    #[test]
    fn exchange_legs_map_onto_flows() {
        let d = Day::from_ymd(2000, 3, 2).unwrap();
        let records = vec![
            tx("C", d, Direction::ExchangeOut, 70.0, Some(100.0)),
            tx("C", d, Direction::ExchangeIn, 70.0, Some(100.0)),
        ];
        let aggs = bucketize(&records, Granularity::Day);
        assert_eq!((aggs[0].alpha, aggs[0].beta), (70.0, 70.0));
    }

    #[test]
    fn theta_carries_forward_latest_known_value() {
        let d = Day::from_ymd(2000, 1, 3).unwrap();
        let records = vec![
            tx("C", d, Direction::Subscription, 10.0, Some(500.0)),
            tx("C", d.add_days(7), Direction::Redemption, 50.0, None),
        ];
        let aggs = bucketize(&records, Granularity::Week);
        assert_eq!(aggs[1].theta, 500.0);
    }

    #[test]
    fn simple_ratio_examples() {
        assert_eq!(delta1_simple(100.0, 90.0), 0.9);
        assert_eq!(delta1_simple(50.0, 20.0), 0.4);
        assert_eq!(delta1_simple(0.0, 75.0), 0.0);
        assert_eq!(delta1_simple(75.0, 0.0), 0.0);
    }

    #[test]
    fn holdings_ratio_examples() {
        let (d, clamped) = delta2(90.0, 110.0);
        assert!((d - 0.818_181_818).abs() < 1e-9 && !clamped);
        assert_eq!(display2(d), "0.82");
        assert_eq!(display2(delta2(400.0, 900.0).0), "0.44");
        assert_eq!(delta2(0.0, 300.0), (0.0, false));
        assert_eq!(delta2(10.0, 0.0), (1.0, true));
        assert_eq!(delta2(120.0, 100.0), (1.0, true));
    }

    #[test]
    fn display_rounds_half_even() {
        assert_eq!(display2(0.125), "0.12");
        assert_eq!(display2(0.375), "0.38");
    }

    #[test]
    fn lookback_worked_example() {
        let series = vec![agg(30, 100.0, 0.0, 110.0), agg(33, 0.0, 90.0, 120.0)];
        assert_eq!(delta1_lookback(&series, 33, 3), 0.9);
        // Outside the window.
        assert_eq!(delta1_lookback(&series, 33, 2), 0.0);
        // No redemption at j.
        assert_eq!(delta1_lookback(&series, 30, 3), 0.0);
        let zeros = vec![agg(1, 0.0, 0.0, 10.0), agg(2, 0.0, 50.0, 100.0)];
        assert_eq!(delta1_lookback(&zeros, 2, 3), 0.0);
    }

    #[test]
    fn lookback_window_clamps_at_series_start() {
        let series = vec![agg(0, 80.0, 40.0, 100.0)];
        let pts = compute_points(&series, 5);
        assert_eq!(pts[0].delta1, 0.5);
        assert_eq!(pts[0].lookback_k, 5);
    }

    #[test]
    fn compute_points_is_deterministic() {
        let series = vec![agg(1, 10.0, 5.0, 100.0), agg(2, 1.0, 9.0, 50.0), agg(4, 0.0, 3.0, 40.0)];
        assert_eq!(compute_points(&series, 3), compute_points(&series, 3));
    }

    #[test]
    fn points_csv_round_trip() {
        let aggs = vec![agg(1, 10.0, 5.0, 100.0), agg(2, 1.0, 9.0, 0.0)];
        let pts = compute_points(&aggs, 3);
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &aggs, &pts, Some(&[true, false])).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("customer_id,fund_id,granularity,period_index,alpha,beta,theta,delta1,delta2,lookback_k,flag,screened\n"));
        let rows = read_points_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].point, pts[1]);
        assert_eq!(rows[1].aggregate, aggs[1]);
        assert_eq!(rows[0].screened, Some(true));
    }

    /// Brute-force window: materialise every period in `[j-k, j]`,
    /// clamped at the first period of the series.
    fn oracle_lookback(series: &[(i64, f64, f64)], j: i64, k: u32) -> f64 {
        let start = series.iter().map(|s| s.0).min().unwrap();
        let mut window = Vec::new();
        let mut p = (j - i64::from(k)).max(start);
        while p <= j {
            window.push(series.iter().find(|s| s.0 == p).map(|s| s.1).unwrap_or(0.0));
            p += 1;
        }
        let alpha = window.into_iter().fold(0.0, f64::max);
        let beta = series.iter().find(|s| s.0 == j).map(|s| s.2).unwrap_or(0.0);
        if alpha == 0.0 || beta == 0.0 {
            0.0
        } else {
            alpha.min(beta) / alpha.max(beta)
        }
    }

    fn arb_series() -> impl Strategy<Value = Vec<(i64, f64, f64)>> {
        prop::collection::btree_map(0i64..20, (0u32..5, 0u32..5), 1..=12).prop_map(|m| {
            m.into_iter()
                .map(|(p, (a, b))| (p, f64::from(a) * 25.0, f64::from(b) * 20.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn lookback_matches_brute_force(series in arb_series(), k in 1u32..6) {
            let aggs: Vec<_> = series.iter().map(|&(p, a, b)| agg(p, a, b, 100.0)).collect();
            let pts = compute_points(&aggs, k);
            for (i, &(p, _, _)) in series.iter().enumerate() {
                let expected = oracle_lookback(&series, p, k);
                prop_assert_eq!(delta1_lookback(&aggs, p, k), expected);
                prop_assert_eq!(pts[i].delta1, expected);
            }
        }

        #[test]
        fn ratios_stay_in_unit_interval(alpha in 0.0f64..1e9, beta in 0.0f64..1e9, theta in 0.0f64..1e9) {
            let d1 = delta1_simple(alpha, beta);
            let (d2, _) = delta2(beta, theta);
            prop_assert!((0.0..=1.0).contains(&d1));
            prop_assert!((0.0..=1.0).contains(&d2));
        }

        #[test]
        fn simple_ratio_is_symmetric(a in 1e-6f64..1e9, b in 1e-6f64..1e9) {
            prop_assert_eq!(delta1_simple(a, b), delta1_simple(b, a));
        }

        #[test]
        fn scale_invariance(alpha in 1.0f64..1e6, beta in 1.0f64..1e6, theta in 1.0f64..1e6, c in prop::sample::select(vec![0.5, 2.0, 4.0, 0.25, 1024.0])) {
            // Power-of-two factors keep the ratios exact in binary floating point.
            prop_assert_eq!(delta1_simple(alpha, beta), delta1_simple(c * alpha, c * beta));
            prop_assert_eq!(delta2(beta, theta), delta2(c * beta, c * theta));
        }

        #[test]
        fn lookback_dominates_simple_when_redemption_covers_window(series in arb_series(), k in 1u32..6) {
            let aggs: Vec<_> = series.iter().map(|&(p, a, b)| agg(p, a, b, 100.0)).collect();
            let lookback = compute_points(&aggs, k);
            let simple = compute_points(&aggs, 0);
            for (i, &(p, _, beta)) in series.iter().enumerate() {
                let window_ok = series
                    .iter()
                    .filter(|s| s.0 >= p - i64::from(k) && s.0 <= p)
                    .all(|s| s.1 <= beta);
                if window_ok {
                    prop_assert!(lookback[i].delta1 >= simple[i].delta1);
                }
            }
        }
    }
}
