//! Claim records, the observed portfolio truncated at the horizon, and the
//! one-row-per-payment CSV format.
//!
//! Times are fractional days since the portfolio's origin date. A calendar
//! date maps to the start of that day; timestamps keep their sub-day part.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = [
    "claim_id",
    "claim_type",
    "occurrence_date",
    "reporting_date",
    "payment_date",
    "payment_amount",
];

const NANOS_PER_DAY: f64 = 86_400e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Payment {
    pub time: f64,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub claim_type: String,
    pub occurrence_time: f64,
    pub reporting_time: f64,
    pub payments: Vec<Payment>,
}

impl ClaimRecord {
    pub fn reporting_delay(&self) -> f64 {
        self.reporting_time - self.occurrence_time
    }

    pub fn payment_count(&self) -> usize {
        self.payments.len()
    }

    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::Validation {
            claim_id: self.claim_id.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.occurrence_time.is_finite() || !self.reporting_time.is_finite() {
            return Err(self.invalid("occurrence and reporting times must be finite"));
        }
        if self.occurrence_time > self.reporting_time {
            return Err(self.invalid(format!(
                "occurrence time {} is after reporting time {}",
                self.occurrence_time, self.reporting_time
            )));
        }
        let mut previous = f64::NEG_INFINITY;
        for p in &self.payments {
            if !p.time.is_finite() {
                return Err(self.invalid("payment time must be finite"));
            }
            if p.time < self.reporting_time {
                return Err(self.invalid(format!(
                    "payment at {} precedes reporting time {}",
                    p.time, self.reporting_time
                )));
            }
            if p.time <= previous {
                return Err(self.invalid(format!(
                    "payment times must be strictly increasing ({} after {})",
                    p.time, previous
                )));
            }
            if !(p.amount > 0.0) || !p.amount.is_finite() {
                return Err(self.invalid(format!("payment amount {} is not positive", p.amount)));
            }
            previous = p.time;
        }
        Ok(())
    }

    fn latest_time(&self) -> f64 {
        self.payments.iter().fold(self.reporting_time, |m, p| m.max(p.time))
    }
}

/// Reported claims observed up to `horizon_a`, sorted by reporting time
/// (ties broken by claim id). Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    records: Vec<ClaimRecord>,
    horizon_a: f64,
    origin_date: NaiveDate,
}

impl Portfolio {
    pub fn new(mut records: Vec<ClaimRecord>, horizon_a: f64, origin_date: NaiveDate) -> Result<Self> {
        if !horizon_a.is_finite() {
            return Err(Error::Range(format!("horizon {horizon_a} is not finite")));
        }
        for r in &mut records {
            r.payments.sort_by(|a, b| a.time.total_cmp(&b.time));
            r.validate()?;
            if r.reporting_time > horizon_a || r.latest_time() > horizon_a {
                return Err(r.invalid(format!("record has times beyond the horizon {horizon_a}")));
            }
        }
        records.sort_by(|a, b| {
            a.reporting_time
                .total_cmp(&b.reporting_time)
                .then_with(|| a.claim_id.cmp(&b.claim_id))
        });
        if let Some(w) = records.windows(2).find(|w| w[0].claim_id == w[1].claim_id) {
            return Err(w[0].invalid("duplicate claim id"));
        }
        Ok(Portfolio {
            records,
            horizon_a,
            origin_date,
        })
    }

    pub fn empty(horizon_a: f64, origin_date: NaiveDate) -> Self {
        Portfolio {
            records: Vec::new(),
            horizon_a,
            origin_date,
        }
    }

    pub fn records(&self) -> &[ClaimRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon_a
    }

    pub fn origin_date(&self) -> NaiveDate {
        self.origin_date
    }

    pub fn reporting_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.reporting_time)
    }

    pub fn payment_count(&self) -> usize {
        self.records.iter().map(|r| r.payments.len()).sum()
    }

    /// Same records observed up to a later horizon (no new information).
    pub fn with_horizon(&self, horizon_a: f64) -> Result<Portfolio> {
        Portfolio::new(self.records.clone(), horizon_a, self.origin_date)
    }

    /// Data as they would have been observed at horizon `a`: drops claims
    /// reported after `a` and payments made after `a`.
    pub fn truncate(&self, a: f64) -> Portfolio {
        let records = self
            .records
            .iter()
            .filter(|r| r.reporting_time <= a)
            .map(|r| ClaimRecord {
                payments: r.payments.iter().copied().filter(|p| p.time <= a).collect(),
                ..r.clone()
            })
            .collect();
        Portfolio {
            records,
            horizon_a: a,
            origin_date: self.origin_date,
        }
    }

    /// The reporting counting process M(t) = #{i : Z_i ≤ t} at each grid point.
    pub fn counting_path(&self, grid: &[f64]) -> Result<Vec<u64>> {
        let mut previous = f64::NEG_INFINITY;
        let mut out = Vec::with_capacity(grid.len());
        for &t in grid {
            if !(0.0..=self.horizon_a).contains(&t) {
                return Err(Error::Range(format!("grid point {t} outside [0, {}]", self.horizon_a)));
            }
            if t < previous {
                return Err(Error::Range("grid must be nondecreasing".into()));
            }
            previous = t;
            out.push(self.records.partition_point(|r| r.reporting_time <= t) as u64);
        }
        Ok(out)
    }
}

/// Converts a CSV date or timestamp into days since `origin`.
pub fn parse_time(origin: NaiveDate, text: &str) -> std::result::Result<f64, String> {
    let text = text.trim();
    let datetime = if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        d.and_time(NaiveTime::MIN)
    } else {
        ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"]
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
            .ok_or_else(|| format!("'{text}' is not an ISO-8601 date"))?
    };
    let days = (datetime.date() - origin).num_days() as f64;
    let time = datetime.time();
    let nanos = time.num_seconds_from_midnight() as f64 * 1e9 + time.nanosecond() as f64;
    Ok(days + nanos / NANOS_PER_DAY)
}

/// Renders days since `origin` as a date, or as a nanosecond timestamp when
/// the time has a sub-day part.
pub fn format_time(origin: NaiveDate, days: f64) -> String {
    let whole = days.floor();
    let mut date = origin + Duration::days(whole as i64);
    let mut nanos = ((days - whole) * NANOS_PER_DAY).round() as i64;
    if nanos >= NANOS_PER_DAY as i64 {
        date += Duration::days(1);
        nanos = 0;
    }
    if nanos == 0 {
        date.format("%Y-%m-%d").to_string()
    } else {
        let dt = date.and_time(NaiveTime::MIN) + Duration::nanoseconds(nanos);
        dt.format("%Y-%m-%dT%H:%M:%S%.9f").to_string()
    }
}

struct RowDraft {
    claim_type: String,
    occurrence_time: f64,
    reporting_time: f64,
    payments: Vec<Payment>,
    first_line: u64,
}

/// Reads the one-row-per-payment CSV. `horizon` overrides the default horizon
/// (latest observed date) and must not precede any observed time.
pub fn read_csv<R: Read>(reader: R, origin: NaiveDate, horizon: Option<f64>) -> Result<Portfolio> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 6];
    for (slot, name) in index.iter_mut().zip(CSV_HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column '{name}'"),
        })?;
    }

    let mut order: Vec<String> = Vec::new();
    let mut drafts: HashMap<String, RowDraft> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| row.get(index[k]).unwrap_or("");
        let parse_err = |message: String| Error::Parse { line, message };

        let claim_id = field(0).to_string();
        if claim_id.is_empty() {
            return Err(parse_err("empty claim_id".into()));
        }
        let occurrence = parse_time(origin, field(2)).map_err(parse_err)?;
        let reporting = parse_time(origin, field(3)).map_err(parse_err)?;
        let payment = match (field(4), field(5)) {
            ("", "") => None,
            (date, amount) if !date.is_empty() && !amount.is_empty() => {
                let time = parse_time(origin, date).map_err(parse_err)?;
                let amount: f64 = amount
                    .parse()
                    .map_err(|_| parse_err(format!("'{amount}' is not a decimal amount")))?;
                Some(Payment { time, amount })
            }
            _ => {
                return Err(parse_err(
                    "payment_date and payment_amount must both be present or both empty".into(),
                ))
            }
        };

        match drafts.get_mut(&claim_id) {
            Some(d) => {
                if d.claim_type != field(1) || d.occurrence_time != occurrence || d.reporting_time != reporting {
                    return Err(Error::Validation {
                        claim_id,
                        message: format!("line {line} disagrees with line {} on type or dates", d.first_line),
                    });
                }
                d.payments.extend(payment);
            }
            None => {
                order.push(claim_id.clone());
                drafts.insert(
                    claim_id,
                    RowDraft {
                        claim_type: field(1).to_string(),
                        occurrence_time: occurrence,
                        reporting_time: reporting,
                        payments: payment.into_iter().collect(),
                        first_line: line,
                    },
                );
            }
        }
    }

    let records: Vec<ClaimRecord> = order
        .into_iter()
        .map(|id| {
            let d = drafts.remove(&id).expect("draft exists for every id");
            ClaimRecord {
                claim_id: id,
                claim_type: d.claim_type,
                occurrence_time: d.occurrence_time,
                reporting_time: d.reporting_time,
                payments: d.payments,
            }
        })
        .collect();

    let latest = records
        .iter()
        .map(|r| r.latest_time())
        .fold(f64::NEG_INFINITY, f64::max);
    let horizon_a = match horizon {
        Some(a) => a,
        None if records.is_empty() => 0.0,
        None => latest,
    };
    Portfolio::new(records, horizon_a, origin)
}

pub fn load_csv(path: impl AsRef<Path>, origin: NaiveDate, horizon: Option<f64>) -> Result<Portfolio> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), origin, horizon)
}

pub fn write_csv<W: Write>(portfolio: &Portfolio, writer: W) -> Result<()> {
    let origin = portfolio.origin_date;
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for r in &portfolio.records {
        let occurrence = format_time(origin, r.occurrence_time);
        let reporting = format_time(origin, r.reporting_time);
        if r.payments.is_empty() {
            wtr.write_record([&r.claim_id, &r.claim_type, &occurrence, &reporting, "", ""])?;
        }
        for p in &r.payments {
            wtr.write_record([
                r.claim_id.as_str(),
                r.claim_type.as_str(),
                &occurrence,
                &reporting,
                &format_time(origin, p.time),
                &p.amount.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(portfolio: &Portfolio, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(portfolio, std::io::BufWriter::new(file))
}
