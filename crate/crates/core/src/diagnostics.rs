//! Plot-ready diagnostic tables: cumulative intensity overlay, quarterly
//! delay back-test, and pairwise PIT independence checks.

use std::io::Write;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::claims_data::Portfolio;
use crate::cond_dist::{pit_transform, CondDistModel};
use crate::error::{Error, Result};
use crate::intensity::IntensityModel;

/// Minimum number of complete pairs for a correlation cell.
pub const MIN_PAIRS: usize = 5;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Cumulative intensity overlay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSeriesRow {
    pub t: f64,
    /// M(t); absent beyond the horizon.
    pub observed_m: Option<u64>,
    pub fitted_cumulative: f64,
    /// ψ(t); absent where ψ is undefined (t = 0 for `log_periodic`).
    pub fitted_intensity: Option<f64>,
    pub extrapolated: bool,
}

pub fn intensity_fit_series(p: &Portfolio, model: &IntensityModel, grid: &[f64]) -> Result<Vec<FitSeriesRow>> {
    let a = p.horizon();
    let times: Vec<f64> = p.reporting_times().collect();
    grid.iter()
        .map(|&t| {
            if !(t >= 0.0) {
                return Err(Error::Range(format!("grid point {t} is negative")));
            }
            let extrapolated = t > a;
            Ok(FitSeriesRow {
                t,
                observed_m: (!extrapolated).then(|| times.partition_point(|&z| z <= t) as u64),
                fitted_cumulative: model.cumulative(t)?,
                fitted_intensity: model.eval(t).ok(),
                extrapolated,
            })
        })
        .collect()
}

/// sup |M(t) − Ψ(t)| / sqrt(Ψ(a)) over the observed part of the series.
pub fn standardized_max_deviation(series: &[FitSeriesRow], cumulative_at_horizon: f64) -> Option<f64> {
    if !(cumulative_at_horizon > 0.0) {
        return None;
    }
    series
        .iter()
        .filter_map(|r| r.observed_m.map(|m| (m as f64 - r.fitted_cumulative).abs()))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .map(|d| d / cumulative_at_horizon.sqrt())
}

pub fn write_fit_series_csv<W: Write>(rows: &[FitSeriesRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "observed_M", "fitted_Psi", "fitted_psi", "extrapolated"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.observed_m.map(|m| m.to_string()).unwrap_or_default(),
            r.fitted_cumulative.to_string(),
            opt(r.fitted_intensity),
            r.extrapolated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Quarterly delay back-test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarter {
    pub label: String,
    /// Start of the quarter, days since origin (inclusive).
    pub lo: f64,
    /// End of the quarter (exclusive).
    pub hi: f64,
}

fn quarter_start(date: NaiveDate) -> NaiveDate {
    let month = (date.month0() / 3) * 3 + 1;
    NaiveDate::from_ymd_opt(date.year(), month, 1).expect("valid quarter start")
}

fn next_quarter(start: NaiveDate) -> NaiveDate {
    let (y, m) = if start.month() >= 10 {
        (start.year() + 1, 1)
    } else {
        (start.year(), start.month() + 3)
    };
    NaiveDate::from_ymd_opt(y, m, 1).expect("valid quarter start")
}

/// Calendar quarters covering [lo, hi] days since `origin`.
pub fn calendar_quarters(origin: NaiveDate, lo: f64, hi: f64) -> Vec<Quarter> {
    let days = |d: NaiveDate| (d - origin).num_days() as f64;
    let first = origin + chrono::Duration::days(lo.floor() as i64);
    let mut start = quarter_start(first);
    let mut out = Vec::new();
    while days(start) <= hi {
        let end = next_quarter(start);
        out.push(Quarter {
            label: format!("{}Q{}", start.year(), start.month0() / 3 + 1),
            lo: days(start),
            hi: days(end),
        });
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBacktestRow {
    pub quarter: String,
    pub lo: f64,
    pub hi: f64,
    pub claims: usize,
    pub observed_mean_delay: Option<f64>,
    pub predicted_mean_delay: Option<f64>,
    /// Sample sd of observed delays (n ≥ 2).
    pub observed_sd: Option<f64>,
}

/// Observed vs model mean reporting delay for claims reported in each quarter.
pub fn quarterly_delay_backtest(
    p: &Portfolio,
    delay: &CondDistModel,
    quarters: &[Quarter],
) -> Result<Vec<DelayBacktestRow>> {
    quarters
        .iter()
        .map(|q| {
            let claims: Vec<_> = p
                .records()
                .iter()
                .filter(|r| r.reporting_time >= q.lo && r.reporting_time < q.hi)
                .collect();
            let n = claims.len();
            let (observed, predicted, sd) = if n == 0 {
                (None, None, None)
            } else {
                let delays: Vec<f64> = claims.iter().map(|r| r.reporting_delay()).collect();
                let mean = delays.iter().sum::<f64>() / n as f64;
                let mut pred = 0.0;
                for r in &claims {
                    pred += delay.mean(r.reporting_time)?;
                }
                let sd =
                    (n >= 2).then(|| (delays.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
                (Some(mean), Some(pred / n as f64), sd)
            };
            Ok(DelayBacktestRow {
                quarter: q.label.clone(),
                lo: q.lo,
                hi: q.hi,
                claims: n,
                observed_mean_delay: observed,
                predicted_mean_delay: predicted,
                observed_sd: sd,
            })
        })
        .collect()
}

pub fn write_backtest_csv<W: Write>(rows: &[DelayBacktestRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "quarter",
        "lo",
        "hi",
        "claims",
        "observed_mean_delay",
        "predicted_mean_delay",
        "observed_sd",
    ])?;
    for r in rows {
        w.write_record([
            r.quarter.clone(),
            r.lo.to_string(),
            r.hi.to_string(),
            r.claims.to_string(),
            opt(r.observed_mean_delay),
            opt(r.predicted_mean_delay),
            opt(r.observed_sd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PIT independence grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub first: String,
    pub second: String,
    pub pairs: usize,
    pub correlation: Option<f64>,
    pub threshold: Option<f64>,
    pub flagged: bool,
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceGrid {
    /// "W", "X1", …, "X<max_payments>".
    pub columns: Vec<String>,
    pub claim_ids: Vec<String>,
    /// Transformed values per claim; absent when the claim has too few payments.
    pub samples: Vec<Vec<Option<f64>>>,
    pub cells: Vec<CorrelationCell>,
    /// CDF values clamped away from 0 or 1 by the PIT.
    pub clamped: usize,
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    let r = sxy / (sxx * syy).sqrt();
    r.is_finite().then_some(r)
}

/// Correlations of Φ⁻¹(F̂(·)) transforms of the delay W and the first
/// `max_payments` payment amounts, computed pairwise.
pub fn independence_grid(
    p: &Portfolio,
    delay: &CondDistModel,
    amounts: &CondDistModel,
    max_payments: usize,
) -> Result<IndependenceGrid> {
    if max_payments < 2 {
        return Err(Error::Input("max_payments must be at least 2".into()));
    }
    let records = p.records();
    let delays: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.reporting_time, r.reporting_delay()))
        .collect();
    let w = pit_transform(delay, &delays)?;
    let mut clamped = w.clamped;
    let mut columns: Vec<Vec<Option<f64>>> = vec![w.values.into_iter().map(Some).collect()];
    for k in 0..max_payments {
        let obs: Vec<(usize, (f64, f64))> = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.payments.get(k).map(|pay| (i, (r.reporting_time, pay.amount))))
            .collect();
        let pit = pit_transform(amounts, &obs.iter().map(|o| o.1).collect::<Vec<_>>())?;
        clamped += pit.clamped;
        let mut col = vec![None; records.len()];
        for ((i, _), v) in obs.iter().zip(pit.values) {
            col[*i] = Some(v);
        }
        columns.push(col);
    }

    let names: Vec<String> = std::iter::once("W".to_string())
        .chain((1..=max_payments).map(|k| format!("X{k}")))
        .collect();
    let mut cells = Vec::new();
    for i in 0..columns.len() {
        for j in (i + 1)..columns.len() {
            let pairs: Vec<(f64, f64)> = columns[i]
                .iter()
                .zip(&columns[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .collect();
            let n = pairs.len();
            let insufficient = n < MIN_PAIRS;
            let correlation = if insufficient { None } else { pearson(&pairs) };
            let threshold = (!insufficient).then(|| 3.0 / (n as f64).sqrt());
            let flagged = matches!((correlation, threshold), (Some(r), Some(t)) if r.abs() > t);
            cells.push(CorrelationCell {
                first: names[i].clone(),
                second: names[j].clone(),
                pairs: n,
                correlation,
                threshold,
                flagged,
                insufficient,
            });
        }
    }
    let samples = (0..records.len())
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect();
    Ok(IndependenceGrid {
        columns: names,
        claim_ids: records.iter().map(|r| r.claim_id.clone()).collect(),
        samples,
        cells,
        clamped,
    })
}

pub fn write_independence_samples_csv<W: Write>(grid: &IndependenceGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["claim_id".to_string()];
    header.extend(grid.columns.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in grid.claim_ids.iter().zip(&grid.samples) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_independence_cells_csv<W: Write>(grid: &IndependenceGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "first",
        "second",
        "pairs",
        "correlation",
        "threshold",
        "flagged",
        "insufficient",
    ])?;
    for c in &grid.cells {
        w.write_record([
            c.first.clone(),
            c.second.clone(),
            c.pairs.to_string(),
            opt(c.correlation),
            opt(c.threshold),
            c.flagged.to_string(),
            c.insufficient.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
