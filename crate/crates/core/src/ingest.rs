//! Parsing, validation, mapping-error cleaning and partitioning of raw
//! subscription/redemption records.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calendar::Day;

/// Exact header of the transaction CSV format.
pub const CSV_HEADER: [&str; 8] = [
    "customer_id",
    "fund_id",
    "sub_fund_id",
    "date",
    "direction",
    "amount",
    "shares_value",
    "customer_type",
];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("unreadable transaction source: {0}")]
    Io(#[from] io::Error),
    #[error("malformed CSV stream: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column {0:?} in header")]
    MissingColumn(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "SUB")]
    Subscription,
    #[serde(rename = "RED")]
    Redemption,
    #[serde(rename = "EXIN")]
    ExchangeIn,
    #[serde(rename = "EXOUT")]
    ExchangeOut,
}

impl Direction {
    pub fn code(self) -> &'static str {
        match self {
            Direction::Subscription => "SUB",
            Direction::Redemption => "RED",
            Direction::ExchangeIn => "EXIN",
            Direction::ExchangeOut => "EXOUT",
        }
    }

    /// Money flowing into the fund (counts towards subscriptions).
    pub fn is_inflow(self) -> bool {
        matches!(self, Direction::Subscription | Direction::ExchangeIn)
    }
}

impl FromStr for Direction {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "SUB" => Ok(Direction::Subscription),
            "RED" => Ok(Direction::Redemption),
            "EXIN" => Ok(Direction::ExchangeIn),
            "EXOUT" => Ok(Direction::ExchangeOut),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomerType {
    Individual,
    Corporate,
    Joint,
}

impl CustomerType {
    pub fn as_str(self) -> &'static str {
        match self {
            CustomerType::Individual => "individual",
            CustomerType::Corporate => "corporate",
            CustomerType::Joint => "joint",
        }
    }
}

impl FromStr for CustomerType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "individual" | "i" => Ok(CustomerType::Individual),
            "corporate" | "c" => Ok(CustomerType::Corporate),
            "joint" | "j" => Ok(CustomerType::Joint),
            _ => Err(()),
        }
    }
}

/// One subscription, redemption or exchange leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTransactionRecord {
    pub customer_id: String,
    pub fund_id: String,
    pub sub_fund_id: Option<String>,
    pub date: Day,
    pub direction: Direction,
    pub amount: f64,
    /// Customer's total share value in the fund as of `date`.
    pub shares_value: Option<f64>,
    pub customer_type: CustomerType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingField,
    UnparsableValue,
    NegativeAmount,
    /// Redemption legs must move a strictly positive amount.
    ZeroRedemption,
    Duplicate,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MissingField => "missing field",
            RejectReason::UnparsableValue => "unparsable value",
            RejectReason::NegativeAmount => "negative amount",
            RejectReason::ZeroRedemption => "zero redemption",
            RejectReason::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A row that did not make it into the canonical store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the source (the header is line 1).
    pub line_number: u64,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub missing_field: u64,
    pub unparsable_value: u64,
    pub negative_amount: u64,
    pub zero_redemption: u64,
    pub duplicate: u64,
}

impl RejectionCounts {
    fn bump(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::MissingField => self.missing_field += 1,
            RejectReason::UnparsableValue => self.unparsable_value += 1,
            RejectReason::NegativeAmount => self.negative_amount += 1,
            RejectReason::ZeroRedemption => self.zero_redemption += 1,
            RejectReason::Duplicate => self.duplicate += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.missing_field
            + self.unparsable_value
            + self.negative_amount
            + self.zero_redemption
            + self.duplicate
    }
}

/// Outcome counts of a parse. `records_read == records_accepted + records_rejected`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub records_read: u64,
    pub records_accepted: u64,
    pub records_rejected: u64,
    pub rejected_by_reason: RejectionCounts,
    pub duplicates_removed: u64,
}

impl CleaningReport {
    /// The `(read, accepted, rejected, duplicates_removed)` tuple.
    pub fn summary(&self) -> (u64, u64, u64, u64) {
        (
            self.records_read,
            self.records_accepted,
            self.records_rejected,
            self.duplicates_removed,
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTransactions {
    pub records: Vec<RawTransactionRecord>,
    pub report: CleaningReport,
    pub rejections: Vec<Rejection>,
}

struct Columns {
    customer_id: usize,
    fund_id: usize,
    sub_fund_id: usize,
    date: usize,
    direction: usize,
    amount: usize,
    shares_value: usize,
    customer_type: usize,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, IngestError> {
        let find = |name: &'static str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or(IngestError::MissingColumn(name))
        };
        Ok(Columns {
            customer_id: find("customer_id")?,
            fund_id: find("fund_id")?,
            sub_fund_id: find("sub_fund_id")?,
            date: find("date")?,
            direction: find("direction")?,
            amount: find("amount")?,
            shares_value: find("shares_value")?,
            customer_type: find("customer_type")?,
        })
    }
}

type RowError = (RejectReason, String);

fn required<'a>(row: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str, RowError> {
    match row.get(idx).map(str::trim) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err((RejectReason::MissingField, name.to_string())),
    }
}

fn optional(row: &csv::StringRecord, idx: usize) -> Option<&str> {
    row.get(idx).map(str::trim).filter(|v| !v.is_empty())
}

fn parse_money(raw: &str, name: &str) -> Result<f64, RowError> {
    let v: f64 = raw
        .parse()
        .map_err(|_| (RejectReason::UnparsableValue, format!("{name}={raw:?}")))?;
    if !v.is_finite() {
        return Err((RejectReason::UnparsableValue, format!("{name}={raw:?}")));
    }
    if v < 0.0 {
        return Err((RejectReason::NegativeAmount, format!("{name}={raw}")));
    }
    Ok(v)
}

fn parse_row(row: &csv::StringRecord, cols: &Columns) -> Result<RawTransactionRecord, RowError> {
    let customer_id = required(row, cols.customer_id, "customer_id")?;
    let fund_id = required(row, cols.fund_id, "fund_id")?;
    let date = required(row, cols.date, "date")?;
    let direction = required(row, cols.direction, "direction")?;
    let amount = required(row, cols.amount, "amount")?;
    let customer_type = required(row, cols.customer_type, "customer_type")?;

    let date: Day = date
        .parse()
        .map_err(|_| (RejectReason::UnparsableValue, format!("date={date:?}")))?;
    let direction: Direction = direction
        .parse()
        .map_err(|_| (RejectReason::UnparsableValue, format!("direction={direction:?}")))?;
    let customer_type: CustomerType = customer_type.parse().map_err(|_| {
        (
            RejectReason::UnparsableValue,
            format!("customer_type={customer_type:?}"),
        )
    })?;
    let amount = parse_money(amount, "amount")?;
    if !direction.is_inflow() && amount == 0.0 {
        return Err((RejectReason::ZeroRedemption, format!("{} of 0", direction.code())));
    }
    let shares_value = optional(row, cols.shares_value)
        .map(|v| parse_money(v, "shares_value"))
        .transpose()?;

    Ok(RawTransactionRecord {
        customer_id: customer_id.to_string(),
        fund_id: fund_id.to_string(),
        sub_fund_id: optional(row, cols.sub_fund_id).map(str::to_string),
        date,
        direction,
        amount,
        shares_value,
        customer_type,
    })
}

/// Parses the transaction CSV format.
///
/// Malformed rows are counted and reported, never silently dropped; a
/// byte-identical repeat of an accepted row is rejected as a duplicate.
/// Only an unreadable stream or a header missing a required column is fatal.
pub fn parse_transactions<R: io::Read>(source: R) -> Result<ParsedTransactions, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let cols = Columns::from_header(&header)?;

    let mut out = ParsedTransactions::default();
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut raw = csv::ByteRecord::new();

    loop {
        match reader.read_byte_record(&mut raw) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                // Structural CSV problem confined to one row; count and move on.
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.report.records_read += 1;
                reject(&mut out, line, RejectReason::UnparsableValue, e.to_string());
                continue;
            }
        }
        out.report.records_read += 1;
        let line = raw.position().map(|p| p.line()).unwrap_or(0);

        let row = match csv::StringRecord::from_byte_record(raw.clone()) {
            Ok(row) => row,
            Err(e) => {
                reject(&mut out, line, RejectReason::UnparsableValue, e.to_string());
                continue;
            }
        };
        match parse_row(&row, &cols) {
            Err((reason, detail)) => reject(&mut out, line, reason, detail),
            Ok(record) => {
                let key = raw.iter().collect::<Vec<_>>().join(&0x1f);
                if seen.insert(key) {
                    out.report.records_accepted += 1;
                    out.records.push(record);
                } else {
                    out.report.duplicates_removed += 1;
                    reject(&mut out, line, RejectReason::Duplicate, String::new());
                }
            }
        }
    }
    Ok(out)
}

fn reject(out: &mut ParsedTransactions, line: u64, reason: RejectReason, detail: String) {
    out.report.records_rejected += 1;
    out.report.rejected_by_reason.bump(reason);
    out.rejections.push(Rejection {
        line_number: line,
        reason,
        detail,
    });
}

/// Writes the rejection sidecar: `line_number,reason`.
pub fn write_rejections<W: io::Write>(sink: W, rejections: &[Rejection]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["line_number", "reason"])?;
    for r in rejections {
        w.write_record([r.line_number.to_string().as_str(), r.reason.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes records in the canonical transaction CSV format.
pub fn write_transactions<W: io::Write>(
    sink: W,
    records: &[RawTransactionRecord],
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.customer_id.as_str(),
            r.fund_id.as_str(),
            r.sub_fund_id.as_deref().unwrap_or(""),
            &r.date.to_string(),
            r.direction.code(),
            &r.amount.to_string(),
            &r.shares_value.map(|v| v.to_string()).unwrap_or_default(),
            r.customer_type.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Collapses copies introduced by system-to-system mapping.
///
/// Two records are copies when they agree on customer, fund, date, direction
/// and amount; the first occurrence wins. Output is sorted by
/// `(customer_id, fund_id, date)`, stable with respect to input order.
pub fn clean_mapping_errors(
    records: Vec<RawTransactionRecord>,
) -> (Vec<RawTransactionRecord>, usize) {
    let before = records.len();
    let mut seen = HashSet::with_capacity(before);
    let mut kept: Vec<RawTransactionRecord> = records
        .into_iter()
        .filter(|r| {
            seen.insert((
                r.customer_id.clone(),
                r.fund_id.clone(),
                r.date,
                r.direction,
                r.amount.to_bits(),
            ))
        })
        .collect();
    kept.sort_by(|a, b| {
        (&a.customer_id, &a.fund_id, a.date).cmp(&(&b.customer_id, &b.fund_id, b.date))
    });
    let removed = before - kept.len();
    (kept, removed)
}

/// The two investor populations analysed separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Individual,
    Corporate,
}

/// Where joint accounts go. Defaults to the individual population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointPolicy {
    #[default]
    AsIndividual,
    AsCorporate,
}

impl JointPolicy {
    pub fn partition_of(self, kind: CustomerType) -> Partition {
        match (kind, self) {
            (CustomerType::Corporate, _) | (CustomerType::Joint, JointPolicy::AsCorporate) => {
                Partition::Corporate
            }
            _ => Partition::Individual,
        }
    }
}

/// Splits records into the individual and corporate populations. Both keys
/// are always present, possibly with empty lists.
pub fn partition_by_customer_type(
    records: Vec<RawTransactionRecord>,
    joint: JointPolicy,
) -> BTreeMap<Partition, Vec<RawTransactionRecord>> {
    let mut out = BTreeMap::from([(Partition::Individual, Vec::new()), (Partition::Corporate, Vec::new())]);
    for r in records {
        out.entry(joint.partition_of(r.customer_type))
            .or_default()
            .push(r);
    }
    out
}
