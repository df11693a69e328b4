//! Maximum likelihood for the reporting intensity ψ and the payment intensity λ.
//!
//! Reporting:  ℓ(ρ) = Σᵢ log ψ(Zᵢ; ρ) − Ψ(a; ρ)
//! Payments:   ℓ(θ) = Σᵢ { Σₖ log λ(Uᵢₖ, Zᵢ; θ) − Λ(a, Zᵢ; θ) }
//!
//! Optimization runs on an internal scale (log for positive parameters,
//! horizon-scaled time coefficients) with the objective divided by the
//! number of events; results and standard errors are on the natural scale.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims_data::Portfolio;
use crate::error::{Error, Result};
use crate::intensity::{IntensityFamily, IntensityModel, MarkFamily, MarkIntensityModel};
use crate::optim::{gradient_jacobian, minimize, sup_norm, OptimOptions};
use crate::quadrature::Tolerance;

/// Relative quadrature tolerance used inside likelihood evaluations.
const FIT_QUAD_REL: f64 = 1e-11;

/// A log-scale parameter this many e-folds below its start is at the boundary.
const BOUNDARY_EFOLDS: f64 = 20.0;

/// Expected vs observed information disagreement that triggers a warning.
const MISFIT_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationKind {
    Expected,
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub param_names: Vec<String>,
    pub estimate: Vec<f64>,
    /// `None` when the information matrix is singular.
    pub std_errors: Option<Vec<f64>>,
    pub loglik: f64,
    /// Rows of the information matrix at the estimate.
    pub information: Vec<Vec<f64>>,
    pub information_kind: InformationKind,
    /// Eigenvalues of the information matrix, ascending.
    pub eigenvalues: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm of the optimizer's gradient at the estimate.
    pub gradient_norm: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn information_matrix(&self) -> DMatrix<f64> {
        let q = self.information.len();
        DMatrix::from_fn(q, q, |i, j| self.information[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Candidate periods profiled before the final fit (periodic families).
    pub period_grid: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Generic engine
// ---------------------------------------------------------------------------

/// Map from an internal coordinate u to the natural parameter x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Transform {
    Identity,
    /// x = exp(u)
    Log,
    /// x = u / s
    Scale(f64),
}

impl Transform {
    pub(crate) fn to_natural(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Scale(s) => u / s,
        }
    }

    pub(crate) fn to_internal(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Scale(s) => x * s,
        }
    }

    /// dx/du at u.
    pub(crate) fn jacobian(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => u.exp(),
            Transform::Scale(s) => 1.0 / s,
        }
    }
}

pub(crate) struct MleOutcome {
    pub x: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

/// Maximizes a log-likelihood given on the natural scale.
///
/// `negloglik(x)` returns −ℓ(x) and its gradient, or an error when x is
/// outside the model domain. `info0` (natural scale) preconditions BFGS.
pub(crate) fn maximize<F>(
    negloglik: F,
    transforms: &[Transform],
    x0: &[f64],
    fixed: &[bool],
    normalizer: f64,
    info0: Option<&DMatrix<f64>>,
    opts: &OptimOptions,
) -> Result<MleOutcome>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let u0: Vec<f64> = transforms.iter().zip(x0).map(|(t, x)| t.to_internal(*x)).collect();
    if u0.iter().any(|u| !u.is_finite()) {
        return Err(Error::Initialization(format!(
            "starting point {x0:?} is outside the domain"
        )));
    }
    let free: Vec<usize> = (0..n).filter(|&j| !fixed[j]).collect();
    let scale = normalizer.max(1.0);

    let expand = |v: &[f64]| -> Vec<f64> {
        let mut u = u0.clone();
        for (k, &j) in free.iter().enumerate() {
            u[j] = v[k];
        }
        u
    };
    let objective = |v: &[f64], g: &mut [f64]| -> f64 {
        let u = expand(v);
        let x: Vec<f64> = transforms.iter().zip(&u).map(|(t, u)| t.to_natural(*u)).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        match negloglik(&x) {
            Ok((value, grad)) => {
                for (k, &j) in free.iter().enumerate() {
                    g[k] = grad[j] * transforms[j].jacobian(u[j]) / scale;
                }
                value / scale
            }
            Err(_) => f64::INFINITY,
        }
    };

    let h0 = info0.and_then(|info| {
        let m = free.len();
        let d: Vec<f64> = free.iter().map(|&j| transforms[j].jacobian(u0[j])).collect();
        let mut a = DMatrix::from_fn(m, m, |r, c| d[r] * info[(free[r], free[c])] * d[c] / scale);
        let ridge = 1e-10 * a.diagonal().amax().max(f64::MIN_POSITIVE);
        for k in 0..m {
            a[(k, k)] += ridge;
        }
        let inv = a.cholesky()?.inverse();
        inv.iter().all(|v| v.is_finite()).then_some(inv)
    });

    let v0: Vec<f64> = free.iter().map(|&j| u0[j]).collect();
    let out = minimize(objective, &v0, h0, opts)?;

    let u = expand(&out.x);
    let x: Vec<f64> = transforms.iter().zip(&u).map(|(t, u)| t.to_natural(*u)).collect();
    let (value, _) = negloglik(&x)?;

    let mut warnings = Vec::new();
    let mut converged = out.converged;
    for &j in &free {
        if transforms[j] == Transform::Log && u[j] < u0[j] - BOUNDARY_EFOLDS {
            converged = false;
            warnings.push(format!(
                "parameter {} moved towards the lower domain boundary (value {:e})",
                j + 1,
                x[j]
            ));
        }
    }
    if !out.converged {
        warnings.push(format!(
            "optimizer stopped ({:?}) with gradient sup-norm {:e}",
            out.reason,
            sup_norm(&out.gradient)
        ));
    }
    Ok(MleOutcome {
        x,
        loglik: -value,
        iterations: out.iterations,
        converged,
        gradient_norm: sup_norm(&out.gradient),
        warnings,
    })
}

/// sqrt of the diagonal of the inverse, if the matrix is positive definite.
pub(crate) fn standard_errors(info: &DMatrix<f64>) -> Option<Vec<f64>> {
    let inv = info.clone().cholesky()?.inverse();
    let se: Vec<f64> = inv.diagonal().iter().map(|v| v.sqrt()).collect();
    se.iter().all(|v| v.is_finite() && *v > 0.0).then_some(se)
}

pub(crate) fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Observed information from finite differences of the natural-scale score.
pub(crate) fn observed_information<F>(negloglik: &F, x: &[f64]) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut f = |p: &[f64], g: &mut [f64]| match negloglik(p) {
        Ok((v, grad)) => {
            g.copy_from_slice(&grad);
            v
        }
        Err(_) => f64::NAN,
    };
    gradient_jacobian(&mut f, x)
}

fn misfit_warning(expected: &DMatrix<f64>, observed: &DMatrix<f64>) -> Option<String> {
    let q = expected.nrows();
    let mut worst = 0.0_f64;
    for i in 0..q {
        for j in 0..q {
            let scale = (expected[(i, i)] * expected[(j, j)]).abs().sqrt();
            if scale > 0.0 {
                worst = worst.max((expected[(i, j)] - observed[(i, j)]).abs() / scale);
            }
        }
    }
    (worst > MISFIT_RATIO).then(|| {
        format!(
            "observed and expected information differ by {:.0}% (possible model misfit)",
            100.0 * worst
        )
    })
}

fn assemble(
    outcome: MleOutcome,
    names: Vec<String>,
    information: DMatrix<f64>,
    observed: Option<DMatrix<f64>>,
) -> FitResult {
    let mut warnings = outcome.warnings;
    if let Some(obs) = &observed {
        warnings.extend(misfit_warning(&information, obs));
    }
    let std_errors = standard_errors(&information);
    if std_errors.is_none() {
        warnings.push("information matrix is singular; standard errors unavailable".into());
    }
    FitResult {
        param_names: names,
        estimate: outcome.x,
        std_errors,
        loglik: outcome.loglik,
        eigenvalues: sorted_eigenvalues(&information),
        information: matrix_rows(&information),
        information_kind: InformationKind::Expected,
        converged: outcome.converged,
        iterations: outcome.iterations,
        gradient_norm: outcome.gradient_norm,
        warnings,
    }
}

// ---------------------------------------------------------------------------
// Reporting process
// ---------------------------------------------------------------------------

fn reporting_value_grad(p: &Portfolio, model: &IntensityModel, tol: Tolerance) -> Result<(f64, Vec<f64>)> {
    let q = model.dim();
    let mut sum = 0.0;
    let mut grad = vec![0.0; q];
    let mut g = vec![0.0; q];
    for z in p.reporting_times() {
        sum += model.log_eval_grad(z, &mut g)?;
        for (s, v) in grad.iter_mut().zip(&g) {
            *s += v;
        }
    }
    let (big, big_grad) = model.cumulative_with_grad(p.horizon(), tol)?;
    for (s, v) in grad.iter_mut().zip(&big_grad) {
        *s -= v;
    }
    Ok((sum - big, grad))
}

/// ℓ(ρ) = Σ log ψ(Zᵢ; ρ) − Ψ(a; ρ).
pub fn loglik_reporting(p: &Portfolio, model: &IntensityModel) -> Result<f64> {
    let mut sum = 0.0;
    for z in p.reporting_times() {
        sum += model.eval(z)?.ln();
    }
    Ok(sum - model.cumulative(p.horizon())?)
}

/// ∂ℓ/∂ρ.
pub fn score_reporting(p: &Portfolio, model: &IntensityModel) -> Result<Vec<f64>> {
    Ok(reporting_value_grad(p, model, Tolerance::with_rel(FIT_QUAD_REL))?.1)
}

fn reporting_transforms(family: IntensityFamily, q: usize, a: f64) -> Vec<Transform> {
    use Transform::*;
    let a = a.max(1.0);
    match family {
        IntensityFamily::Constant => vec![Log],
        IntensityFamily::Exponential => vec![Identity, Scale(a)],
        IntensityFamily::LogPeriodic => vec![Identity, Identity, Identity, Identity, Log],
        IntensityFamily::QuadPeriodic => vec![Identity, Scale(a), Scale(a * a), Identity, Identity, Log],
        IntensityFamily::Custom => vec![Identity; q],
    }
}

/// Least squares on log binned rates: returns coefficients for the basis
/// functions evaluated at bin midpoints.
fn binned_log_rate_fit(p: &Portfolio, basis: &dyn Fn(f64) -> Vec<f64>) -> Option<Vec<f64>> {
    let a = p.horizon();
    let m = p.len();
    let bins = ((m as f64).sqrt().round() as usize).clamp(5, 50);
    let width = a / bins as f64;
    let mut counts = vec![0.0; bins];
    for z in p.reporting_times() {
        let k = ((z / width) as usize).min(bins - 1);
        counts[k] += 1.0;
    }
    let k0 = basis(0.5 * width).len();
    let x = DMatrix::from_fn(bins, k0, |r, c| basis((r as f64 + 0.5) * width)[c]);
    let y = DVector::from_iterator(bins, counts.iter().map(|c| ((c + 0.5) / width).ln()));
    let svd = x.svd(true, true);
    let beta = svd.solve(&y, 1e-12).ok()?;
    beta.iter()
        .all(|v| v.is_finite())
        .then(|| beta.iter().copied().collect())
}

/// Family-specific starting values.
pub fn default_init_reporting(p: &Portfolio, family: IntensityFamily) -> Result<Vec<f64>> {
    let a = p.horizon();
    let m = p.len() as f64;
    if p.is_empty() || !(a > 0.0) {
        return Err(Error::Input(
            "reporting fit needs a nonempty portfolio with a > 0".into(),
        ));
    }
    let ls = |basis: &dyn Fn(f64) -> Vec<f64>| {
        binned_log_rate_fit(p, basis).ok_or_else(|| Error::Initialization("least-squares initializer failed".into()))
    };
    Ok(match family {
        IntensityFamily::Constant => vec![m / a],
        IntensityFamily::Exponential => {
            let b = ls(&|t| vec![1.0, t / a])?;
            vec![b[0], b[1] / a]
        }
        IntensityFamily::LogPeriodic => {
            let b = ls(&|t| vec![1.0, t.ln()])?;
            vec![b[0], b[1], 0.0, 0.0, 364.0]
        }
        IntensityFamily::QuadPeriodic => {
            let b = ls(&|t| vec![1.0, t / a, (t / a).powi(2)])?;
            vec![b[0], b[1] / a, b[2] / (a * a), 0.0, 0.0, 364.0]
        }
        IntensityFamily::Custom => {
            return Err(Error::Initialization(
                "custom families need explicit starting values".into(),
            ))
        }
    })
}

/// Fits ψ by maximum likelihood on the observed reporting times.
///
/// `family` supplies the family (and the closures, for custom families);
/// its parameters are ignored unless `init` is `None` and the family is custom.
pub fn fit_reporting(
    p: &Portfolio,
    family: &IntensityModel,
    init: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if p.is_empty() {
        return Err(Error::Input(
            "cannot fit the reporting intensity to an empty portfolio".into(),
        ));
    }
    let a = p.horizon();
    let fam = family.family();
    let x0 = match init {
        Some(x) => x.to_vec(),
        None if fam == IntensityFamily::Custom => family.params().to_vec(),
        None => default_init_reporting(p, fam)?,
    };
    let start = family.with_params(x0.clone())?;
    let q = start.dim();
    let transforms = reporting_transforms(fam, q, a);
    let tol = Tolerance::with_rel(FIT_QUAD_REL);
    let negloglik = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let m = family.with_params(x.to_vec())?;
        let (v, g) = reporting_value_grad(p, &m, tol)?;
        Ok((-v, g.into_iter().map(|v| -v).collect()))
    };
    let normalizer = p.len() as f64;
    let info0 = start.information_tol(a, Tolerance::with_rel(1e-8)).ok();

    let mut x_start = x0;
    if let (Some(grid), Some(k)) = (&opts.period_grid, fam.period_index()) {
        let mut fixed = vec![false; q];
        fixed[k] = true;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &period in grid {
            let mut xp = x_start.clone();
            xp[k] = period;
            if family.with_params(xp.clone()).is_err() {
                continue;
            }
            if let Ok(out) = maximize(
                negloglik,
                &transforms,
                &xp,
                &fixed,
                normalizer,
                info0.as_ref(),
                &opts.optim,
            ) {
                if best.as_ref().is_none_or(|(l, _)| out.loglik > *l) {
                    best = Some((out.loglik, out.x));
                }
            }
        }
        match best {
            Some((_, x)) => x_start = x,
            None => {
                return Err(Error::Initialization(
                    "no period in the grid gave a finite likelihood".into(),
                ))
            }
        }
    }

    let outcome = maximize(
        negloglik,
        &transforms,
        &x_start,
        &vec![false; q],
        normalizer,
        info0.as_ref(),
        &opts.optim,
    )?;
    let fitted = family.with_params(outcome.x.clone())?;
    let information = fitted.information(a)?;
    let observed = observed_information(&negloglik, &outcome.x);
    Ok(assemble(outcome, fitted.param_names(), information, observed))
}

// ---------------------------------------------------------------------------
// Payment process
// ---------------------------------------------------------------------------

fn marks_value_grad(p: &Portfolio, model: &MarkIntensityModel) -> Result<(f64, Vec<f64>)> {
    let a = p.horizon();
    let q = model.dim();
    let per_claim: Vec<Result<(f64, Vec<f64>)>> = p
        .records()
        .par_iter()
        .map(|r| {
            let z = r.reporting_time;
            let mut g = vec![0.0; q];
            let mut grad = vec![0.0; q];
            let mut sum = 0.0;
            for pay in &r.payments {
                sum += model.log_eval_grad(pay.time, z, &mut g)?;
                for (s, v) in grad.iter_mut().zip(&g) {
                    *s += v;
                }
            }
            sum -= model.cumulative_mark(a, z)?;
            for (s, v) in grad.iter_mut().zip(model.cumulative_mark_grad(a, z)?) {
                *s -= v;
            }
            Ok((sum, grad))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; q];
    for item in per_claim {
        let (v, g) = item?;
        total += v;
        for (s, x) in grad.iter_mut().zip(&g) {
            *s += x;
        }
    }
    Ok((total, grad))
}

/// ℓ(θ) = Σᵢ { Σₖ log λ(Uᵢₖ, Zᵢ; θ) − Λ(a, Zᵢ; θ) }.
pub fn loglik_marks(p: &Portfolio, model: &MarkIntensityModel) -> Result<f64> {
    let a = p.horizon();
    let mut total = 0.0;
    for r in p.records() {
        for pay in &r.payments {
            total += model.eval_mark(pay.time, r.reporting_time)?.ln();
        }
        total -= model.cumulative_mark(a, r.reporting_time)?;
    }
    Ok(total)
}

/// ∂ℓ/∂θ.
pub fn score_marks(p: &Portfolio, model: &MarkIntensityModel) -> Result<Vec<f64>> {
    Ok(marks_value_grad(p, model)?.1)
}

/// J(a; θ) = Σᵢ ∫_{Zᵢ}^a (∂λ)(∂λ)ᵀ/λ dτ.
pub fn mark_information(p: &Portfolio, model: &MarkIntensityModel) -> Result<DMatrix<f64>> {
    mark_information_tol(p, model, Tolerance::with_rel(1e-10))
}

fn mark_information_tol(p: &Portfolio, model: &MarkIntensityModel, tol: Tolerance) -> Result<DMatrix<f64>> {
    let a = p.horizon();
    let q = model.dim();
    let parts: Vec<Result<DMatrix<f64>>> = p
        .records()
        .par_iter()
        .map(|r| model.information_mark_tol(a, r.reporting_time, tol))
        .collect();
    let mut total = DMatrix::zeros(q, q);
    for part in parts {
        total += part?;
    }
    Ok(total)
}

fn mark_transforms(family: MarkFamily, q: usize, a: f64) -> Vec<Transform> {
    use Transform::*;
    let a = a.max(1.0);
    match family {
        MarkFamily::ConstantMark => vec![Log],
        MarkFamily::WeibullBaseline => vec![Log, Log, Scale(a)],
        MarkFamily::ExpTrendPeriodic => vec![Identity, Scale(a), Identity, Identity, Log],
        MarkFamily::Custom => vec![Identity; q],
    }
}

/// Family-specific starting values for the payment intensity.
pub fn default_init_marks(p: &Portfolio, family: MarkFamily) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::Input("payment fit needs a nonempty portfolio".into()));
    }
    let a = p.horizon();
    let exposure: f64 = p.reporting_times().map(|z| a - z).sum();
    if !(exposure > 0.0) {
        return Err(Error::Input("claims have no exposure before the horizon".into()));
    }
    // Half a pseudo-payment keeps the start interior when nothing was paid.
    let rate = (p.payment_count() as f64).max(0.5) / exposure;
    Ok(match family {
        MarkFamily::ConstantMark => vec![rate],
        MarkFamily::WeibullBaseline => vec![1.0, rate, 0.0],
        MarkFamily::ExpTrendPeriodic => vec![rate.ln(), 0.0, 0.0, 0.0, 364.0],
        MarkFamily::Custom => {
            return Err(Error::Initialization(
                "custom families need explicit starting values".into(),
            ))
        }
    })
}

/// Fits λ by maximum likelihood; claims without payments contribute −Λ only.
pub fn fit_marks(
    p: &Portfolio,
    family: &MarkIntensityModel,
    init: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if p.is_empty() {
        return Err(Error::Input(
            "cannot fit the payment intensity to an empty portfolio".into(),
        ));
    }
    let a = p.horizon();
    let fam = family.family();
    let x0 = match init {
        Some(x) => x.to_vec(),
        None if fam == MarkFamily::Custom => family.params().to_vec(),
        None => default_init_marks(p, fam)?,
    };
    let start = family.with_params(x0.clone())?;
    let q = start.dim();
    let transforms = mark_transforms(fam, q, a);
    let negloglik = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let m = family.with_params(x.to_vec())?;
        let (v, g) = marks_value_grad(p, &m)?;
        Ok((-v, g.into_iter().map(|v| -v).collect()))
    };
    let normalizer = (p.payment_count() + p.len()) as f64;
    let info0 = mark_information_tol(p, &start, Tolerance::with_rel(1e-7)).ok();

    let mut x_start = x0;
    if let (Some(grid), Some(k)) = (&opts.period_grid, fam.period_index()) {
        let mut fixed = vec![false; q];
        fixed[k] = true;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &period in grid {
            let mut xp = x_start.clone();
            xp[k] = period;
            if family.with_params(xp.clone()).is_err() {
                continue;
            }
            if let Ok(out) = maximize(
                negloglik,
                &transforms,
                &xp,
                &fixed,
                normalizer,
                info0.as_ref(),
                &opts.optim,
            ) {
                if best.as_ref().is_none_or(|(l, _)| out.loglik > *l) {
                    best = Some((out.loglik, out.x));
                }
            }
        }
        match best {
            Some((_, x)) => x_start = x,
            None => {
                return Err(Error::Initialization(
                    "no period in the grid gave a finite likelihood".into(),
                ))
            }
        }
    }

    let outcome = maximize(
        negloglik,
        &transforms,
        &x_start,
        &vec![false; q],
        normalizer,
        info0.as_ref(),
        &opts.optim,
    )?;
    let fitted = family.with_params(outcome.x.clone())?;
    let mut extra = Vec::new();
    let information = match mark_information(p, &fitted) {
        Ok(info) => info,
        Err(e) if e.is_numerical() => {
            extra.push(format!("information quadrature loosened to rel 1e-7: {e}"));
            mark_information_tol(p, &fitted, Tolerance::with_rel(1e-7))?
        }
        Err(e) => return Err(e),
    };
    let observed = observed_information(&negloglik, &outcome.x);
    let mut result = assemble(outcome, fitted.param_names(), information, observed);
    result.warnings.extend(extra);
    Ok(result)
}
