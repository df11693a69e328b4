//! Synthetic portfolios from fully specified models, for testing estimators
//! and forecasts against a known truth.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::claims_data::{ClaimRecord, Payment, Portfolio};
use crate::cond_dist::CondDistModel;
use crate::error::{Error, Result};
use crate::intensity::{IntensityModel, MarkIntensityModel};
use crate::rng::{Purpose, RngStream};
use crate::simulate::{sample_nhpp, sample_payments};

/// Origin date used when a spec or config does not name one.
pub fn default_origin() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub reporting: IntensityModel,
    pub delay: CondDistModel,
    pub mark: MarkIntensityModel,
    pub amounts: CondDistModel,
    pub horizon_a: f64,
    pub seed: u64,
    #[serde(default = "default_origin")]
    pub origin_date: NaiveDate,
}

impl GroundTruth {
    /// Checks that the conditional distributions are admissible on [0, a].
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_a >= 0.0) || !self.horizon_a.is_finite() {
            return Err(Error::Input(format!(
                "horizon {} must be finite and nonnegative",
                self.horizon_a
            )));
        }
        let n = 200;
        for k in 0..=n {
            let z = self.horizon_a * k as f64 / n as f64;
            self.delay.params_at(z)?;
            self.amounts.params_at(z)?;
        }
        Ok(())
    }
}

struct Claims {
    records: Vec<ClaimRecord>,
}

fn observed_stream(gt: &GroundTruth) -> RngStream {
    RngStream::new(gt.seed).derive(Purpose::Holdout, 0)
}

fn future_stream(gt: &GroundTruth) -> RngStream {
    RngStream::new(gt.seed).derive(Purpose::Holdout, 1)
}

fn payments_with_amounts(gt: &GroundTruth, z: f64, lo: f64, hi: f64, stream: &RngStream) -> Result<Vec<Payment>> {
    let path = sample_payments(&gt.mark, z, lo, hi, &stream.derive(Purpose::PaymentTimes, 0))?;
    let mut rng = stream.derive(Purpose::PaymentAmounts, 0).rng();
    path.arrivals
        .into_iter()
        .map(|time| {
            Ok(Payment {
                time,
                amount: gt.amounts.sample(z, &mut rng)?,
            })
        })
        .collect()
}

fn observed_claims(gt: &GroundTruth) -> Result<Claims> {
    gt.validate()?;
    let a = gt.horizon_a;
    let stream = observed_stream(gt);
    let reports = if a > 0.0 {
        sample_nhpp(&gt.reporting, 0.0, a, &stream.derive(Purpose::ReportingTimes, 0))?.arrivals
    } else {
        Vec::new()
    };
    let mut records = Vec::with_capacity(reports.len());
    for (j, z) in reports.into_iter().enumerate() {
        let claim_stream = stream.derive(Purpose::NewClaims, j as u64);
        let w = gt
            .delay
            .sample(z, &mut claim_stream.derive(Purpose::ReportingDelay, 0).rng())?;
        records.push(ClaimRecord {
            claim_id: format!("c{:06}", j + 1),
            claim_type: "synthetic".into(),
            occurrence_time: z - w,
            reporting_time: z,
            payments: payments_with_amounts(gt, z, z, a, &claim_stream)?,
        });
    }
    Ok(Claims { records })
}

/// The portfolio observed at the horizon a.
pub fn generate(gt: &GroundTruth) -> Result<Portfolio> {
    let claims = observed_claims(gt)?;
    Portfolio::new(claims.records, gt.horizon_a, gt.origin_date)
}

/// The portfolio at a plus the realized total paid on (a, b], including
/// claims reported inside (a, b].
pub fn generate_holdout(gt: &GroundTruth, b: f64) -> Result<(Portfolio, f64)> {
    let a = gt.horizon_a;
    if !(b >= a) {
        return Err(Error::Range(format!("holdout end {b} precedes the horizon {a}")));
    }
    let claims = observed_claims(gt)?;
    let mut total = 0.0;
    if b > a {
        let stream = future_stream(gt);
        for (i, r) in claims.records.iter().enumerate() {
            let pays = payments_with_amounts(
                gt,
                r.reporting_time,
                a,
                b,
                &stream.derive(Purpose::ExistingClaims, i as u64),
            )?;
            total += pays.iter().map(|p| p.amount).sum::<f64>();
        }
        let reports = sample_nhpp(&gt.reporting, a, b, &stream.derive(Purpose::ReportingTimes, 0))?.arrivals;
        for (j, z) in reports.into_iter().enumerate() {
            let pays = payments_with_amounts(gt, z, z, b, &stream.derive(Purpose::NewClaims, j as u64))?;
            total += pays.iter().map(|p| p.amount).sum::<f64>();
        }
    }
    let portfolio = Portfolio::new(claims.records, a, gt.origin_date)?;
    Ok((portfolio, total))
}
