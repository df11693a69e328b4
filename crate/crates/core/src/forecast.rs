//! Predictive distribution of future payments and back-prediction of the
//! occurrence-time intensity.
//!
//! Displacement: a claim reported at z with delay W occurred at t = z − W, so
//! the occurrence intensity is
//!
//! μ(t) = ∫_{z ≥ t} ψ(z) f_W(z − t | z) dz.
//!
//! The delay density is evaluated at the delay value z − t with parameters at
//! the reporting time z; with a constant ψ = ρ and a z-free delay this gives
//! μ ≡ ρ away from the boundaries.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims_data::Portfolio;
use crate::cond_dist::CondDistModel;
use crate::error::{Error, Result};
use crate::intensity::{IntensityModel, MarkIntensityModel, RateFunction};
use crate::quadrature::{integrate_with_breaks, Tolerance};
use crate::rng::RngStream;
use crate::simulate::MarkedSimulator;

pub const DEFAULT_SIMULATIONS: usize = 10_000;
pub const LOWER_PERCENTILE: f64 = 0.005;
pub const UPPER_PERCENTILE: f64 = 0.995;

/// Delay mass beyond this quantile is ignored by the displacement integral.
const DELAY_TAIL: f64 = 1e-8;
const DISPLACEMENT_REL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub sd: Option<f64>,
    pub cv: Option<f64>,
    pub pct_lo: f64,
    pub pct_hi: f64,
}

/// Simulated totals of future payments, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub window: (f64, f64),
    pub totals: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PredictiveJson {
    window: [f64; 2],
    #[serde(rename = "S")]
    s: usize,
    totals: Vec<f64>,
    summary: Option<Summary>,
}

impl Serialize for PredictiveDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PredictiveJson {
            window: [self.window.0, self.window.1],
            s: self.totals.len(),
            totals: self.totals.clone(),
            summary: summarize(self).ok(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PredictiveDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PredictiveJson::deserialize(d)?;
        let mut totals = raw.totals;
        totals.sort_by(f64::total_cmp);
        Ok(PredictiveDistribution {
            window: (raw.window[0], raw.window[1]),
            totals,
        })
    }
}

impl PredictiveDistribution {
    pub fn from_totals(window: (f64, f64), mut totals: Vec<f64>) -> Self {
        totals.sort_by(f64::total_cmp);
        PredictiveDistribution { window, totals }
    }

    pub fn len(&self) -> usize {
        self.totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }
}

/// Type-7 percentile (linear interpolation of order statistics) of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(d: &PredictiveDistribution) -> Result<Summary> {
    let x = &d.totals;
    let n = x.len();
    if n == 0 {
        return Err(Error::Input("cannot summarize an empty distribution".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    let cv = sd.and_then(|s| (mean != 0.0).then(|| s / mean));
    Ok(Summary {
        mean,
        median: percentile(x, 0.5),
        sd,
        cv,
        pct_lo: percentile(x, LOWER_PERCENTILE),
        pct_hi: percentile(x, UPPER_PERCENTILE),
    })
}

/// Monte Carlo distribution of the total paid on (a, b], a = portfolio horizon.
///
/// Replicate s uses the stream `stream.replicate(s)`, so results do not
/// depend on the number of worker threads.
pub fn predict_total(
    p: &Portfolio,
    reporting: &IntensityModel,
    mark: &MarkIntensityModel,
    amounts: &CondDistModel,
    b: f64,
    simulations: usize,
    stream: &RngStream,
) -> Result<PredictiveDistribution> {
    if simulations == 0 {
        return Err(Error::Input("number of simulations must be at least 1".into()));
    }
    let sim = MarkedSimulator::new(reporting, mark, amounts, p, b)?;
    let totals = (0..simulations)
        .into_par_iter()
        .map(|s| {
            sim.sample(&stream.replicate(s as u64))
                .map(|draw| draw.total())
                .map_err(|e| Error::Replicate {
                    index: s,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PredictiveDistribution::from_totals((p.horizon(), b), totals))
}

/// μ̂ on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceIntensity {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Share of each value coming from reporting times beyond the horizon,
    /// where ψ is extrapolated.
    pub extrapolated_share: Vec<f64>,
}

/// Expected number of occurrences in a bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCount {
    pub lo: f64,
    pub hi: f64,
    pub expected: f64,
    pub extrapolated_share: f64,
}

/// Precomputed integration limits for the displacement integral.
struct Displacement<'a> {
    reporting: &'a IntensityModel,
    delay: &'a CondDistModel,
    horizon: f64,
    max_delay: f64,
}

impl<'a> Displacement<'a> {
    fn new(reporting: &'a IntensityModel, delay: &'a CondDistModel, horizon: f64) -> Result<Self> {
        let q = |z: f64| delay.quantile(1.0 - DELAY_TAIL, z);
        let n = 256;
        let mut max_delay = 0.0_f64;
        for k in 0..=n {
            max_delay = max_delay.max(q(horizon.max(0.0) * k as f64 / n as f64)?);
        }
        // Reports beyond the horizon come from delays evaluated there too.
        let reach = horizon + max_delay;
        for k in 0..=n {
            max_delay = max_delay.max(q(horizon + (reach - horizon) * k as f64 / n as f64)?);
        }
        if !max_delay.is_finite() {
            return Err(Error::numerical("delay tail quantile is not finite", f64::INFINITY));
        }
        Ok(Displacement {
            reporting,
            delay,
            horizon,
            max_delay,
        })
    }

    fn breaks_for(&self, t: f64) -> Result<Vec<f64>> {
        let z = t.max(0.0);
        let mut breaks = vec![self.horizon];
        for u in [DELAY_TAIL, 0.01, 0.5, 0.99] {
            breaks.push(t + self.delay.quantile(u, z)?);
        }
        Ok(breaks)
    }

    fn lower(&self, t: f64) -> f64 {
        t.max(self.reporting.time_floor())
    }

    /// μ(t) and the part of it from z > horizon.
    fn mu(&self, t: f64) -> Result<(f64, f64)> {
        let lo = self.lower(t);
        let hi = t + self.max_delay;
        if hi <= lo {
            return Ok((0.0, 0.0));
        }
        let integrand = |z: f64| -> f64 {
            let psi = match self.reporting.rate(z) {
                Ok(v) => v,
                Err(_) => return f64::NAN,
            };
            if psi == 0.0 {
                return 0.0;
            }
            match self.delay.density(z - t, z) {
                Ok(f) => psi * f,
                Err(_) => f64::NAN,
            }
        };
        let tol = Tolerance::with_rel(DISPLACEMENT_REL_TOL);
        let breaks = self.breaks_for(t)?;
        let wrap = |e: Error| match e {
            Error::Numerical { message, achieved } => Error::Numerical {
                message: format!("occurrence intensity at t = {t}: {message}"),
                achieved,
            },
            other => other,
        };
        let total = integrate_with_breaks(integrand, lo, hi, &breaks, tol).map_err(wrap)?;
        let split = lo.max(self.horizon);
        let beyond = if split < hi {
            integrate_with_breaks(integrand, split, hi, &breaks, tol).map_err(wrap)?
        } else {
            0.0
        };
        Ok((total, beyond))
    }

    /// ∫_lo^hi μ(t) dt = ∫ ψ(z) [F(z − lo | z) − F(z − hi | z)] dz.
    fn bin(&self, lo: f64, hi: f64) -> Result<(f64, f64)> {
        let zlo = self.lower(lo);
        let zhi = hi + self.max_delay;
        if zhi <= zlo {
            return Ok((0.0, 0.0));
        }
        let integrand = |z: f64| -> f64 {
            let psi = match self.reporting.rate(z) {
                Ok(v) => v,
                Err(_) => return f64::NAN,
            };
            if psi == 0.0 {
                return 0.0;
            }
            let upper = self.delay.cdf(z - lo, z);
            let lower = if z > hi { self.delay.cdf(z - hi, z) } else { Ok(0.0) };
            match (upper, lower) {
                (Ok(u), Ok(l)) => psi * (u - l),
                _ => f64::NAN,
            }
        };
        let mut breaks = vec![hi, self.horizon];
        breaks.extend(self.breaks_for(lo)?);
        breaks.extend(self.breaks_for(hi)?);
        let tol = Tolerance::with_rel(DISPLACEMENT_REL_TOL);
        let wrap = |e: Error| match e {
            Error::Numerical { message, achieved } => Error::Numerical {
                message: format!("back-predicted count on [{lo}, {hi}]: {message}"),
                achieved,
            },
            other => other,
        };
        let total = integrate_with_breaks(integrand, zlo, zhi, &breaks, tol).map_err(wrap)?;
        let split = zlo.max(self.horizon);
        let beyond = if split < zhi {
            integrate_with_breaks(integrand, split, zhi, &breaks, tol).map_err(wrap)?
        } else {
            0.0
        };
        Ok((total, beyond))
    }
}

/// μ̂(t) on `grid`. `horizon` is the data horizon a; reporting times beyond
/// it use the extrapolated ψ and are reported in `extrapolated_share`.
pub fn occurrence_intensity(
    reporting: &IntensityModel,
    delay: &CondDistModel,
    grid: &[f64],
    horizon: f64,
) -> Result<OccurrenceIntensity> {
    let disp = Displacement::new(reporting, delay, horizon)?;
    let parts = grid
        .par_iter()
        .map(|&t| disp.mu(t))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok(OccurrenceIntensity {
        grid: grid.to_vec(),
        values: parts.iter().map(|p| p.0.max(0.0)).collect(),
        extrapolated_share: parts
            .iter()
            .map(|p| if p.0 > 0.0 { (p.1 / p.0).clamp(0.0, 1.0) } else { 0.0 })
            .collect(),
    })
}

/// Expected occurrence counts ∫_bin μ̂(t) dt.
pub fn backpredict_counts(
    reporting: &IntensityModel,
    delay: &CondDistModel,
    bins: &[(f64, f64)],
    horizon: f64,
) -> Result<Vec<BinCount>> {
    if let Some(&(lo, hi)) = bins.iter().find(|(lo, hi)| !(lo < hi)) {
        return Err(Error::Range(format!("bin [{lo}, {hi}] is empty")));
    }
    let disp = Displacement::new(reporting, delay, horizon)?;
    bins.par_iter()
        .map(|&(lo, hi)| {
            let (expected, beyond) = disp.bin(lo, hi)?;
            Ok(BinCount {
                lo,
                hi,
                expected: expected.max(0.0),
                extrapolated_share: if expected > 0.0 {
                    (beyond / expected).clamp(0.0, 1.0)
                } else {
                    0.0
                },
            })
        })
        .collect()
}

pub fn write_intensity_csv<W: Write>(mu: &OccurrenceIntensity, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "mu", "extrapolated_share"])?;
    for ((t, v), e) in mu.grid.iter().zip(&mu.values).zip(&mu.extrapolated_share) {
        w.write_record([t.to_string(), v.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bins_csv<W: Write>(bins: &[BinCount], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "bin_hi", "expected_count", "extrapolated_share"])?;
    for b in bins {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.expected.to_string(),
            b.extrapolated_share.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
