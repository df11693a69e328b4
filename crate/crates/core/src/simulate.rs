//! Thinning samplers for non-homogeneous Poisson processes and for the full
//! marked process (new reports, their payments, and payments on open claims).

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::claims_data::{ClaimRecord, Payment, Portfolio};
use crate::cond_dist::CondDistModel;
use crate::error::{Error, Result};
use crate::intensity::{IntensityModel, MarkAt, MarkIntensityModel, RateFunction, BOUND_GRID};
use crate::rng::{Purpose, RngStream};

/// Upper limit on the number of majorant cells.
pub const MAX_CELLS: usize = 32;

/// Sorted arrival times in (lo, hi].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub lo: f64,
    pub hi: f64,
    pub arrivals: Vec<f64>,
}

impl SimulatedPath {
    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// Number of arrivals in (lo, hi].
    pub fn count_in(&self, lo: f64, hi: f64) -> usize {
        let start = self.arrivals.partition_point(|&t| t <= lo);
        let end = self.arrivals.partition_point(|&t| t <= hi);
        end.saturating_sub(start)
    }
}

/// Piecewise-constant upper bound of a rate on (lo, hi].
#[derive(Debug, Clone, PartialEq)]
pub struct Majorant {
    lo: f64,
    hi: f64,
    /// (cell upper edge, bound on the cell)
    cells: Vec<(f64, f64)>,
}

impl Majorant {
    pub fn new<R: RateFunction + ?Sized>(rate: &R, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Range(format!(
                "sampling window ({lo}, {hi}] is empty or infinite"
            )));
        }
        let mut ncells = MAX_CELLS;
        if rate.exact_bound() {
            // A nearly flat monotone rate gains nothing from splitting.
            let (r0, r1) = (rate.rate(lo)?, rate.rate(hi)?);
            let (small, big) = (r0.min(r1), r0.max(r1));
            if big.is_finite() && big <= 2.0 * small {
                ncells = 1;
            }
        }
        let per_cell = (BOUND_GRID / ncells).max(32) + 1;
        let width = (hi - lo) / ncells as f64;
        let mut cells = Vec::with_capacity(ncells);
        for k in 0..ncells {
            let a = lo + width * k as f64;
            let b = if k + 1 == ncells {
                hi
            } else {
                lo + width * (k + 1) as f64
            };
            cells.push((b, rate.bound(a, b, per_cell)?));
        }
        Ok(Majorant { lo, hi, cells })
    }

    pub fn window(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// ∫ of the majorant over the window (expected number of proposals).
    pub fn mass(&self) -> f64 {
        let mut prev = self.lo;
        let mut total = 0.0;
        for &(edge, b) in &self.cells {
            total += b * (edge - prev);
            prev = edge;
        }
        total
    }
}

/// Lewis–Shedler thinning against a precomputed majorant.
pub fn thin<R: RateFunction + ?Sized, G: Rng + ?Sized>(rate: &R, majorant: &Majorant, rng: &mut G) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut start = majorant.lo;
    for &(edge, bound) in &majorant.cells {
        if bound > 0.0 {
            let mut t = start;
            loop {
                let gap: f64 = Exp1.sample(rng);
                t += gap / bound;
                if t > edge {
                    break;
                }
                let value = rate.rate(t)?;
                if value > bound {
                    return Err(Error::MajorantViolation { t, value, bound });
                }
                let u: f64 = rng.random();
                if u * bound < value {
                    out.push(t);
                }
            }
        }
        start = edge;
    }
    Ok(out)
}

/// Samples a Poisson process with the given rate on (lo, hi].
pub fn sample_nhpp<R: RateFunction + ?Sized>(rate: &R, lo: f64, hi: f64, stream: &RngStream) -> Result<SimulatedPath> {
    let majorant = Majorant::new(rate, lo, hi)?;
    let arrivals = thin(rate, &majorant, &mut stream.rng())?;
    Ok(SimulatedPath { lo, hi, arrivals })
}

/// How the payments of one claim are drawn on a window.
#[derive(Debug, Clone, PartialEq)]
enum PaymentPlan {
    Empty,
    Thin(Majorant),
    /// Time-change inversion through the closed-form Λ, used when λ is
    /// unbounded at the reporting time.
    Invert {
        lo: f64,
        hi: f64,
    },
}

impl PaymentPlan {
    fn new(mark: &MarkIntensityModel, z: f64, lo: f64, hi: f64) -> Result<Self> {
        let lo = lo.max(z);
        if lo >= hi {
            Ok(PaymentPlan::Empty)
        } else if lo <= z && mark.unbounded_at_report() {
            Ok(PaymentPlan::Invert { lo, hi })
        } else {
            Majorant::new(&MarkAt { model: mark, z }, lo, hi).map(PaymentPlan::Thin)
        }
    }

    fn draw<G: Rng + ?Sized>(&self, mark: &MarkIntensityModel, z: f64, rng: &mut G) -> Result<Vec<f64>> {
        match self {
            PaymentPlan::Empty => Ok(Vec::new()),
            PaymentPlan::Thin(maj) => thin(&MarkAt { model: mark, z }, maj, rng),
            &PaymentPlan::Invert { lo, hi } => {
                let end = mark.cumulative_mark_between(z, hi, z)?;
                let mut level = mark.cumulative_mark_between(z, lo, z)?;
                let mut out = Vec::new();
                loop {
                    let gap: f64 = Exp1.sample(rng);
                    level += gap;
                    if level > end {
                        break;
                    }
                    let t = mark
                        .inverse_cumulative_mark(level, z)
                        .ok_or_else(|| Error::Unsupported("mark family has no closed-form inverse".into()))?;
                    if t > lo && t <= hi {
                        out.push(t);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Payment process of one claim reported at `z`, on (lo, hi].
pub fn sample_payments(
    mark: &MarkIntensityModel,
    z: f64,
    lo: f64,
    hi: f64,
    stream: &RngStream,
) -> Result<SimulatedPath> {
    let plan = PaymentPlan::new(mark, z, lo, hi)?;
    let arrivals = plan.draw(mark, z, &mut stream.rng())?;
    Ok(SimulatedPath {
        lo: lo.max(z),
        hi,
        arrivals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimSource {
    /// Index into the existing portfolio's records.
    Existing(usize),
    /// Reported inside the prediction window.
    New,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedClaim {
    pub source: ClaimSource,
    pub reporting_time: f64,
    pub payments: Vec<Payment>,
}

/// One draw of the future on (a, b].
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedSample {
    pub window: (f64, f64),
    pub claims: Vec<SimulatedClaim>,
}

impl MarkedSample {
    pub fn total(&self) -> f64 {
        self.claims.iter().flat_map(|c| &c.payments).map(|p| p.amount).sum()
    }

    pub fn payment_count(&self) -> usize {
        self.claims.iter().map(|c| c.payments.len()).sum()
    }

    pub fn new_claims(&self) -> usize {
        self.claims.iter().filter(|c| c.source == ClaimSource::New).count()
    }

    /// Claim records holding the simulated payments. New claims get ids
    /// `sim-<n>` and an occurrence time drawn from `delay` (or equal to the
    /// reporting time without one).
    pub fn to_records(
        &self,
        existing: &Portfolio,
        delay: Option<&CondDistModel>,
        stream: &RngStream,
    ) -> Result<Vec<ClaimRecord>> {
        let mut out = Vec::with_capacity(self.claims.len());
        let mut new_index = 0u64;
        for c in &self.claims {
            match c.source {
                ClaimSource::Existing(i) => {
                    let r = &existing.records()[i];
                    out.push(ClaimRecord {
                        payments: c.payments.clone(),
                        ..r.clone()
                    });
                }
                ClaimSource::New => {
                    new_index += 1;
                    let occurrence = match delay {
                        Some(d) => {
                            let mut rng = stream.derive(Purpose::ReportingDelay, new_index).rng();
                            c.reporting_time - d.sample(c.reporting_time, &mut rng)?
                        }
                        None => c.reporting_time,
                    };
                    out.push(ClaimRecord {
                        claim_id: format!("sim-{new_index:06}"),
                        claim_type: "simulated".into(),
                        occurrence_time: occurrence,
                        reporting_time: c.reporting_time,
                        payments: c.payments.clone(),
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Procedure for sampling the marked process on (a, b], with majorants
/// prepared once and reused across replicates.
pub struct MarkedSimulator<'a> {
    reporting: &'a IntensityModel,
    mark: &'a MarkIntensityModel,
    amounts: &'a CondDistModel,
    existing: &'a Portfolio,
    a: f64,
    b: f64,
    reporting_majorant: Majorant,
    existing_plans: Vec<PaymentPlan>,
}

impl<'a> MarkedSimulator<'a> {
    pub fn new(
        reporting: &'a IntensityModel,
        mark: &'a MarkIntensityModel,
        amounts: &'a CondDistModel,
        existing: &'a Portfolio,
        b: f64,
    ) -> Result<Self> {
        let a = existing.horizon();
        if !(b > a) {
            return Err(Error::Range(format!("prediction end {b} must exceed the horizon {a}")));
        }
        let reporting_majorant = Majorant::new(reporting, a, b)?;
        let existing_plans = existing
            .records()
            .iter()
            .map(|r| PaymentPlan::new(mark, r.reporting_time, a, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(MarkedSimulator {
            reporting,
            mark,
            amounts,
            existing,
            a,
            b,
            reporting_majorant,
            existing_plans,
        })
    }

    pub fn window(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    fn amounts_for(&self, z: f64, times: Vec<f64>, stream: &RngStream) -> Result<Vec<Payment>> {
        let mut rng = stream.derive(Purpose::PaymentAmounts, 0).rng();
        times
            .into_iter()
            .map(|time| {
                Ok(Payment {
                    time,
                    amount: self.amounts.sample(z, &mut rng)?,
                })
            })
            .collect()
    }

    /// One replicate.
    pub fn sample(&self, stream: &RngStream) -> Result<MarkedSample> {
        let mut claims = Vec::new();

        for (i, (r, plan)) in self.existing.records().iter().zip(&self.existing_plans).enumerate() {
            if *plan == PaymentPlan::Empty {
                continue;
            }
            let claim_stream = stream.derive(Purpose::ExistingClaims, i as u64);
            let times = plan.draw(
                self.mark,
                r.reporting_time,
                &mut claim_stream.derive(Purpose::PaymentTimes, 0).rng(),
            )?;
            if times.is_empty() {
                continue;
            }
            claims.push(SimulatedClaim {
                source: ClaimSource::Existing(i),
                reporting_time: r.reporting_time,
                payments: self.amounts_for(r.reporting_time, times, &claim_stream)?,
            });
        }

        let reports = thin(
            self.reporting,
            &self.reporting_majorant,
            &mut stream.derive(Purpose::ReportingTimes, 0).rng(),
        )?;
        for (j, z) in reports.into_iter().enumerate() {
            let claim_stream = stream.derive(Purpose::NewClaims, j as u64);
            let path = sample_payments(self.mark, z, z, self.b, &claim_stream.derive(Purpose::PaymentTimes, 0))?;
            claims.push(SimulatedClaim {
                source: ClaimSource::New,
                reporting_time: z,
                payments: self.amounts_for(z, path.arrivals, &claim_stream)?,
            });
        }

        Ok(MarkedSample {
            window: (self.a, self.b),
            claims,
        })
    }
}

/// Samples new claims, their payments, and future payments on existing
/// claims over (a, b], where a is the portfolio horizon.
pub fn sample_marked(
    reporting: &IntensityModel,
    mark: &MarkIntensityModel,
    amounts: &CondDistModel,
    existing: &Portfolio,
    b: f64,
    stream: &RngStream,
) -> Result<MarkedSample> {
    MarkedSimulator::new(reporting, mark, amounts, existing, b)?.sample(stream)
}
