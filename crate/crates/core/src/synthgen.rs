//! Synthetic fund populations with known laundering-like injections.
//!
//! Background customers hold a position, subscribe log-normal amounts and
//! occasionally redeem a small slice of their holdings. Injected customers
//! additionally run one of two patterns:
//!
//! * `RapidInOut`: a large subscription redeemed at 90-99% within a few days.
//! * `ExchangeRoundTrip`: nearly the whole position moved out of one
//!   sub-fund into another and later back again.
//!
//! Every record carries `shares_value` = the customer's holdings at the
//! opening of that day, so holdings stay coherent with the flow history.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::calendar::Day;
use crate::ingest::{CustomerType, Direction, RawTransactionRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("infeasible population: {0}")]
    Infeasible(String),
    #[error("bad injection spec {0:?} (expected rapid:N or exchange:N)")]
    BadInjection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    RapidInOut,
    ExchangeRoundTrip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub kind: PatternKind,
    pub count: usize,
}

impl FromStr for InjectionSpec {
    type Err = SynthError;

    /// `rapid:10`, `exchange:5`.
    fn from_str(s: &str) -> Result<Self, SynthError> {
        let bad = || SynthError::BadInjection(s.to_string());
        let (kind, count) = s.split_once(':').ok_or_else(bad)?;
        let kind = match kind.trim().to_ascii_lowercase().as_str() {
            "rapid" | "rapid_in_out" | "rapidinout" => PatternKind::RapidInOut,
            "exchange" | "exchange_round_trip" | "exchangeroundtrip" => PatternKind::ExchangeRoundTrip,
            _ => return Err(bad()),
        };
        let count = count.trim().parse().map_err(|_| bad())?;
        Ok(InjectionSpec { kind, count })
    }
}

/// Background trading behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    /// Probability that a customer trades on any given day.
    pub daily_trade_probability: f64,
    /// Probability that a trade is a redemption rather than a subscription.
    pub redemption_probability: f64,
    /// Log-normal parameters of subscription amounts.
    pub amount_log_mean: f64,
    pub amount_log_sigma: f64,
    /// Log-normal parameters of the opening position.
    pub holdings_log_mean: f64,
    pub holdings_log_sigma: f64,
    /// Redemptions take a uniform fraction of holdings in this range.
    pub redemption_fraction: (f64, f64),
    /// Daily multiplicative drift of holdings (fund performance).
    pub daily_growth: f64,
}

impl Default for ActivityModel {
    fn default() -> Self {
        ActivityModel {
            daily_trade_probability: 0.05,
            redemption_probability: 0.3,
            amount_log_mean: 7.0,
            amount_log_sigma: 0.8,
            holdings_log_mean: 10.0,
            holdings_log_sigma: 0.7,
            redemption_fraction: (0.01, 0.10),
            daily_growth: 0.0002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_customers: usize,
    pub n_funds: usize,
    pub start: Day,
    pub end: Day,
    pub activity: ActivityModel,
    pub injections: Vec<InjectionSpec>,
    pub corporate_fraction: f64,
    pub joint_fraction: f64,
    pub rng_seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            n_customers: 1000,
            n_funds: 3,
            start: Day::from_ymd(2000, 1, 1).expect("valid date"),
            end: Day::from_ymd(2000, 12, 31).expect("valid date"),
            activity: ActivityModel::default(),
            injections: Vec::new(),
            corporate_fraction: 0.3,
            joint_fraction: 0.1,
            rng_seed: 0,
        }
    }
}

impl PopulationSpec {
    pub fn injected_total(&self) -> usize {
        self.injections.iter().map(|i| i.count).sum()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let injected = self.injected_total();
        if injected > self.n_customers {
            return Err(SynthError::Infeasible(format!(
                "{injected} injections for {} customers",
                self.n_customers
            )));
        }
        if self.n_funds == 0 && self.n_customers > 0 {
            return Err(SynthError::Infeasible("at least one fund is required".into()));
        }
        if self.end.days_since_epoch() - self.start.days_since_epoch() < 30 {
            return Err(SynthError::Infeasible("date range must span at least 30 days".into()));
        }
        let a = &self.activity;
        if !(0.0..=1.0).contains(&a.daily_trade_probability)
            || !(0.0..=1.0).contains(&a.redemption_probability)
            || !(a.redemption_fraction.0 >= 0.0 && a.redemption_fraction.0 <= a.redemption_fraction.1 && a.redemption_fraction.1 <= 1.0)
            || a.amount_log_sigma < 0.0
            || a.holdings_log_sigma < 0.0
        {
            return Err(SynthError::Infeasible("activity model parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedCustomer {
    pub customer_id: String,
    pub fund_id: String,
    pub kind: PatternKind,
    /// Days carrying the pattern's legs.
    pub dates: Vec<Day>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub customers: Vec<InjectedCustomer>,
}

impl GroundTruth {
    pub fn contains(&self, customer_id: &str) -> bool {
        self.customers.iter().any(|c| c.customer_id == customer_id)
    }
}

struct Leg {
    day: Day,
    direction: Direction,
    sub_fund: usize,
    amount: Amount,
}

enum Amount {
    Fixed(f64),
    /// Fraction of the opening holdings of the day.
    OfHoldings(f64),
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Generates the population. Deterministic for a given spec.
pub fn generate(spec: &PopulationSpec) -> Result<(Vec<RawTransactionRecord>, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let act = &spec.activity;
    let amounts = LogNormal::new(act.amount_log_mean, act.amount_log_sigma)
        .map_err(|e| SynthError::Infeasible(e.to_string()))?;
    let holdings_dist = LogNormal::new(act.holdings_log_mean, act.holdings_log_sigma)
        .map_err(|e| SynthError::Infeasible(e.to_string()))?;

    // Which customers carry which pattern.
    let mut kinds: Vec<Option<PatternKind>> = vec![None; spec.n_customers];
    let picked = rand::seq::index::sample(&mut rng, spec.n_customers, spec.injected_total()).into_vec();
    let mut next = picked.into_iter();
    for inj in &spec.injections {
        for _ in 0..inj.count {
            kinds[next.next().expect("validated count")] = Some(inj.kind);
        }
    }

    let first = spec.start.days_since_epoch();
    let last = spec.end.days_since_epoch();
    let mut records = Vec::new();
    let mut truth = GroundTruth::default();

    for (c, kind) in kinds.iter().enumerate() {
        let customer_id = format!("C{c:05}");
        let fund = rng.random_range(0..spec.n_funds);
        let fund_id = format!("F{fund:02}");
        let customer_type = {
            let u: f64 = rng.random();
            if u < spec.corporate_fraction {
                CustomerType::Corporate
            } else if u < spec.corporate_fraction + spec.joint_fraction {
                CustomerType::Joint
            } else {
                CustomerType::Individual
            }
        };
        let mut holdings = cents(holdings_dist.sample(&mut rng));

        let mut legs: Vec<Leg> = Vec::new();
        let mut quiet = first - 1..first - 1;
        if let Some(kind) = kind {
            let (pattern, span) = match kind {
                PatternKind::RapidInOut => {
                    let gap = rng.random_range(1..=3);
                    let day = Day::from_days_since_epoch(rng.random_range(first + 7..=last - 7));
                    // The subscription dwarfs the existing position.
                    let size = rng.random_range(2.0..6.0);
                    let fraction = rng.random_range(0.90..0.99);
                    let sub = cents(holdings * size);
                    legs.push(Leg { day, direction: Direction::Subscription, sub_fund: 0, amount: Amount::Fixed(sub) });
                    legs.push(Leg {
                        day: day.add_days(gap),
                        direction: Direction::Redemption,
                        sub_fund: 0,
                        amount: Amount::Fixed(cents(sub * fraction)),
                    });
                    (vec![day, day.add_days(gap)], (day, day.add_days(gap)))
                }
                PatternKind::ExchangeRoundTrip => {
                    let back_after = rng.random_range(5..=20);
                    let day = Day::from_days_since_epoch(rng.random_range(first + 7..=last - 28));
                    let back = day.add_days(back_after);
                    for (d, from, to) in [(day, 0, 1), (back, 1, 0)] {
                        let fraction = rng.random_range(0.90..=1.0);
                        legs.push(Leg { day: d, direction: Direction::ExchangeOut, sub_fund: from, amount: Amount::OfHoldings(fraction) });
                        legs.push(Leg { day: d, direction: Direction::ExchangeIn, sub_fund: to, amount: Amount::OfHoldings(fraction) });
                    }
                    (vec![day, back], (day, back))
                }
            };
            // Keep background trades away from the pattern so it stays legible.
            quiet = span.0.days_since_epoch() - 3..span.1.days_since_epoch() + 4;
            truth.customers.push(InjectedCustomer {
                customer_id: customer_id.clone(),
                fund_id: fund_id.clone(),
                kind: *kind,
                dates: pattern,
            });
        }

        for d in first..=last {
            if rng.random::<f64>() >= act.daily_trade_probability || quiet.contains(&d) {
                continue;
            }
            let day = Day::from_days_since_epoch(d);
            if rng.random::<f64>() < act.redemption_probability {
                let f = rng.random_range(act.redemption_fraction.0..=act.redemption_fraction.1);
                legs.push(Leg { day, direction: Direction::Redemption, sub_fund: 0, amount: Amount::OfHoldings(f) });
            } else {
                let a = cents(amounts.sample(&mut rng)).max(0.01);
                legs.push(Leg { day, direction: Direction::Subscription, sub_fund: 0, amount: Amount::Fixed(a) });
            }
        }
        legs.sort_by_key(|l| l.day);

        let mut cursor = first;
        let mut i = 0;
        while i < legs.len() {
            let day = legs[i].day;
            holdings = cents(holdings * (1.0 + act.daily_growth).powi(day.days_since_epoch() - cursor));
            cursor = day.days_since_epoch();
            let opening = holdings;
            while i < legs.len() && legs[i].day == day {
                let leg = &legs[i];
                let amount = match leg.amount {
                    Amount::Fixed(a) => a,
                    Amount::OfHoldings(f) => cents(opening * f),
                };
                i += 1;
                if amount <= 0.0 && !leg.direction.is_inflow() {
                    continue;
                }
                if leg.direction.is_inflow() {
                    holdings += amount;
                } else {
                    holdings = (holdings - amount).max(0.0);
                }
                records.push(RawTransactionRecord {
                    customer_id: customer_id.clone(),
                    fund_id: fund_id.clone(),
                    sub_fund_id: Some(format!("{fund_id}-{}", ['A', 'B'][leg.sub_fund])),
                    date: day,
                    direction: leg.direction,
                    amount,
                    shares_value: Some(opening),
                    customer_type,
                });
            }
        }
    }

    records.sort_by_key(|r| r.date);
    Ok((records, truth))
}
