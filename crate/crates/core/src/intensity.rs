//! Parametric intensity families.
//!
//! Reporting intensities ψ(t; ρ):
//!
//! | family          | ψ(t; ρ)                                                      |
//! |-----------------|--------------------------------------------------------------|
//! | `constant`      | ρ                                                            |
//! | `exponential`   | exp{ρ₁ + ρ₂ t}                                               |
//! | `log_periodic`  | exp{ρ₁ + ρ₂ log t + ρ₃ cos(2πt/ρ₅) + ρ₄ sin(2πt/ρ₅)}          |
//! | `quad_periodic` | exp{ρ₁ + ρ₂ t + ρ₃ t² + ρ₄ cos(2πt/ρ₆) + ρ₅ sin(2πt/ρ₆)}      |
//!
//! Payment (mark) intensities λ(τ, z; θ), all zero for τ < z, with s = τ − z:
//!
//! | family               | λ(τ, z; θ)                                               |
//! |----------------------|----------------------------------------------------------|
//! | `constant_mark`      | θ                                                        |
//! | `weibull_baseline`   | ν₁ν₂ s^{ν₁−1} exp{η z}                                   |
//! | `exp_trend_periodic` | exp{ν₁ + ν₂ s + η₁ cos(2πz/η₃) + η₂ sin(2πz/η₃)}          |
//!
//! Every family also accepts user supplied closures (`custom`), with finite
//! differences standing in for missing derivatives.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_vec, Tolerance};

/// Smallest admissible time for `log_periodic` (log t is undefined at 0).
pub const LOG_TIME_FLOOR: f64 = 1e-9;

/// Safety factor applied to grid-searched intensity maxima.
pub const BOUND_SAFETY: f64 = 1.001;

/// Grid size used when bounding non-monotone intensities.
pub const BOUND_GRID: usize = 1024;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Value, gradient and Hessian of cc·cos(2πx/P) + cs·sin(2πx/P) with respect
/// to (cc, cs, P).
struct Seasonal {
    value: f64,
    grad: [f64; 3],
    hess: [[f64; 3]; 3],
}

fn seasonal(cc: f64, cs: f64, period: f64, x: f64) -> Seasonal {
    let a = TWO_PI * x / period;
    let (sin, cos) = a.sin_cos();
    let u = a / period;
    let u2 = a * a / (period * period);
    let d_period = (cc * sin - cs * cos) * u;
    let pp = cc * (-cos * u2 - 2.0 * sin * u / period) + cs * (-sin * u2 + 2.0 * cos * u / period);
    Seasonal {
        value: cc * cos + cs * sin,
        grad: [cos, sin, d_period],
        hess: [[0.0, 0.0, sin * u], [0.0, 0.0, -cos * u], [sin * u, -cos * u, pp]],
    }
}

/// (eˣ − 1)/x, continuous at 0.
pub(crate) fn expm1_over_x(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

/// d/dx (eˣ − 1)/x = (x eˣ − eˣ + 1)/x².
pub(crate) fn expm1_over_x_deriv(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // Σ_{k≥1} k x^{k−1} / (k+1)!
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 2.0;
        for k in 1..=16 {
            sum += k as f64 * pow / fact;
            pow *= x;
            fact *= (k + 2) as f64;
        }
        sum
    } else {
        (x * x.exp() - x.exp_m1()) / (x * x)
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..60 {
        if (hi - lo) <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    f1.max(f2)
}

/// 1.001 × the maximum of `f` over a grid on [lo, hi], refined by golden
/// section search around every grid-local maximum.
pub(crate) fn grid_bound<F: Fn(f64) -> Result<f64>>(f: F, lo: f64, hi: f64, points: usize) -> Result<f64> {
    let n = points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect();
    let mut ys = Vec::with_capacity(n);
    for &x in &xs {
        let y = f(x)?;
        if !y.is_finite() {
            return Err(Error::numerical(
                format!("intensity is not finite at t = {x} while bounding [{lo}, {hi}]"),
                f64::INFINITY,
            ));
        }
        ys.push(y);
    }
    let mut best = ys.iter().copied().fold(0.0_f64, f64::max);
    let safe = |x: f64| f(x).unwrap_or(f64::NEG_INFINITY);
    for k in 0..n {
        let left = if k == 0 { f64::NEG_INFINITY } else { ys[k - 1] };
        let right = if k == n - 1 { f64::NEG_INFINITY } else { ys[k + 1] };
        if ys[k] >= left && ys[k] >= right && ys[k] > 0.0 {
            let a = xs[k.saturating_sub(1)];
            let b = xs[(k + 1).min(n - 1)];
            let refined = golden_max(safe, a, b);
            if refined.is_finite() {
                best = best.max(refined);
            }
        }
    }
    Ok(BOUND_SAFETY * best)
}

fn central_grad<F: Fn(&[f64]) -> f64>(f: F, params: &[f64], out: &mut [f64]) {
    let mut p = params.to_vec();
    for j in 0..params.len() {
        let h = (1e-6 * params[j].abs()).max(1e-6);
        p[j] = params[j] + h;
        let up = f(&p);
        p[j] = params[j] - h;
        let down = f(&p);
        p[j] = params[j];
        out[j] = (up - down) / (2.0 * h);
    }
}

fn central_hessian<G: Fn(&[f64], &mut [f64])>(grad: G, params: &[f64]) -> DMatrix<f64> {
    let n = params.len();
    let mut p = params.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = (1e-4 * params[j].abs()).max(1e-4);
        p[j] = params[j] + step;
        grad(&p, &mut gp);
        p[j] = params[j] - step;
        grad(&p, &mut gm);
        p[j] = params[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

fn pack_outer(weight: f64, g: &[f64], out: &mut [f64]) {
    let mut k = 0;
    for i in 0..g.len() {
        for j in 0..=i {
            out[k] = weight * g[i] * g[j];
            k += 1;
        }
    }
}

fn unpack_symmetric(q: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(q, q);
    let mut k = 0;
    for i in 0..q {
        for j in 0..=i {
            m[(i, j)] = packed[k];
            m[(j, i)] = packed[k];
            k += 1;
        }
    }
    m
}

fn period_breaks(lo: f64, hi: f64, period: f64) -> Vec<f64> {
    if !(period > 0.0) {
        return Vec::new();
    }
    let half = period / 2.0;
    let count = ((hi - lo) / half).ceil();
    if !(count.is_finite()) || count > 400.0 {
        return Vec::new();
    }
    let first = (lo / half).ceil() as i64;
    (first..)
        .map(|k| k as f64 * half)
        .take_while(|&x| x < hi)
        .filter(|&x| x > lo)
        .collect()
}

fn check_finite(params: &[f64]) -> Result<()> {
    if params.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("parameters must be finite: {params:?}")))
    }
}

// ---------------------------------------------------------------------------
// Custom plug-ins
// ---------------------------------------------------------------------------

pub type RateFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type MarkRateFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;
pub type MarkGradFn = Arc<dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync>;
pub type AdmissibleFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// User supplied reporting intensity. Missing derivatives fall back to
/// central finite differences.
#[derive(Clone)]
pub struct CustomIntensity {
    pub name: String,
    pub rate: RateFn,
    pub grad: Option<GradFn>,
    pub admissible: Option<AdmissibleFn>,
}

/// User supplied mark intensity; `rate` is only consulted for τ ≥ z.
#[derive(Clone)]
pub struct CustomMarkIntensity {
    pub name: String,
    pub rate: MarkRateFn,
    pub grad: Option<MarkGradFn>,
    pub admissible: Option<AdmissibleFn>,
}

// ---------------------------------------------------------------------------
// Reporting intensity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityFamily {
    Constant,
    Exponential,
    LogPeriodic,
    QuadPeriodic,
    Custom,
}

impl IntensityFamily {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "constant" => Self::Constant,
            "exponential" => Self::Exponential,
            "log_periodic" => Self::LogPeriodic,
            "quad_periodic" => Self::QuadPeriodic,
            "custom" => Self::Custom,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Exponential => "exponential",
            Self::LogPeriodic => "log_periodic",
            Self::QuadPeriodic => "quad_periodic",
            Self::Custom => "custom",
        }
    }

    /// Parameter count, `None` for custom families.
    pub fn dim(self) -> Option<usize> {
        match self {
            Self::Constant => Some(1),
            Self::Exponential => Some(2),
            Self::LogPeriodic => Some(5),
            Self::QuadPeriodic => Some(6),
            Self::Custom => None,
        }
    }

    /// Index of the period parameter, if the family has one.
    pub fn period_index(self) -> Option<usize> {
        match self {
            Self::LogPeriodic => Some(4),
            Self::QuadPeriodic => Some(5),
            _ => None,
        }
    }
}

impl fmt::Display for IntensityFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A reporting intensity ψ(t; ρ). Cheap to clone; immutable.
#[derive(Clone)]
pub struct IntensityModel {
    family: IntensityFamily,
    params: Vec<f64>,
    custom: Option<Arc<CustomIntensity>>,
}

impl fmt::Debug for IntensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntensityModel")
            .field("family", &self.family)
            .field("params", &self.params)
            .finish()
    }
}

impl PartialEq for IntensityModel {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.params == other.params && self.custom.is_none() && other.custom.is_none()
    }
}

impl IntensityModel {
    pub fn new(family: IntensityFamily, params: Vec<f64>) -> Result<Self> {
        if family == IntensityFamily::Custom {
            return Err(Error::Parameter(
                "custom intensities are built with IntensityModel::custom".into(),
            ));
        }
        let m = IntensityModel {
            family,
            params,
            custom: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(IntensityFamily::Constant, vec![rate])
    }

    pub fn exponential(rho1: f64, rho2: f64) -> Result<Self> {
        Self::new(IntensityFamily::Exponential, vec![rho1, rho2])
    }

    pub fn custom(custom: CustomIntensity, params: Vec<f64>) -> Result<Self> {
        let m = IntensityModel {
            family: IntensityFamily::Custom,
            params,
            custom: Some(Arc::new(custom)),
        };
        m.validate()?;
        Ok(m)
    }

    /// Same family with new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        let m = IntensityModel {
            family: self.family,
            params,
            custom: self.custom.clone(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn family(&self) -> IntensityFamily {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|j| format!("rho{j}")).collect()
    }

    /// Smallest time at which ψ is defined.
    pub fn time_floor(&self) -> f64 {
        match self.family {
            IntensityFamily::LogPeriodic => LOG_TIME_FLOOR,
            _ => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = &self.params;
        if let Some(d) = self.family.dim() {
            if p.len() != d {
                return Err(Error::Parameter(format!(
                    "{} expects {d} parameters, got {}",
                    self.family,
                    p.len()
                )));
            }
        }
        check_finite(p)?;
        match self.family {
            // ρ = 0 is admitted as the null (no-arrival) process.
            IntensityFamily::Constant if p[0] < 0.0 => {
                Err(Error::Parameter(format!("constant rate {} is negative", p[0])))
            }
            IntensityFamily::LogPeriodic if p[4] <= 0.0 => {
                Err(Error::Parameter(format!("period rho5 = {} must be positive", p[4])))
            }
            IntensityFamily::QuadPeriodic if p[5] <= 0.0 => {
                Err(Error::Parameter(format!("period rho6 = {} must be positive", p[5])))
            }
            IntensityFamily::Custom => {
                let c = self.custom.as_ref().expect("custom family carries closures");
                match &c.admissible {
                    Some(ok) if !ok(p) => Err(Error::Parameter(format!(
                        "parameters {p:?} outside the domain of '{}'",
                        c.name
                    ))),
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !t.is_finite() || t < self.time_floor() {
            return Err(Error::Domain(format!(
                "{} intensity is undefined at t = {t}",
                self.family
            )));
        }
        Ok(())
    }

    /// log ψ and its gradient for the log-linear families.
    fn log_rate_grad(&self, t: f64, grad: &mut [f64]) -> f64 {
        let p = &self.params;
        match self.family {
            IntensityFamily::Exponential => {
                grad[0] = 1.0;
                grad[1] = t;
                p[0] + p[1] * t
            }
            IntensityFamily::LogPeriodic => {
                let s = seasonal(p[2], p[3], p[4], t);
                let lt = t.ln();
                grad[0] = 1.0;
                grad[1] = lt;
                grad[2..5].copy_from_slice(&s.grad);
                p[0] + p[1] * lt + s.value
            }
            IntensityFamily::QuadPeriodic => {
                let s = seasonal(p[3], p[4], p[5], t);
                grad[0] = 1.0;
                grad[1] = t;
                grad[2] = t * t;
                grad[3..6].copy_from_slice(&s.grad);
                p[0] + p[1] * t + p[2] * t * t + s.value
            }
            _ => unreachable!("not a log-linear family"),
        }
    }

    fn raw_rate(&self, t: f64) -> f64 {
        let p = &self.params;
        match self.family {
            IntensityFamily::Constant => p[0],
            IntensityFamily::Exponential => (p[0] + p[1] * t).exp(),
            IntensityFamily::LogPeriodic => {
                let a = TWO_PI * t / p[4];
                (p[0] + p[1] * t.ln() + p[2] * a.cos() + p[3] * a.sin()).exp()
            }
            IntensityFamily::QuadPeriodic => {
                let a = TWO_PI * t / p[5];
                (p[0] + p[1] * t + p[2] * t * t + p[3] * a.cos() + p[4] * a.sin()).exp()
            }
            IntensityFamily::Custom => (self.custom.as_ref().unwrap().rate)(t, p),
        }
    }

    /// ψ(t; ρ).
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.raw_rate(t))
    }

    /// log ψ(t; ρ) and ∂ log ψ / ∂ρ.
    pub fn log_eval_grad(&self, t: f64, grad: &mut [f64]) -> Result<f64> {
        self.check_time(t)?;
        match self.family {
            IntensityFamily::Constant => {
                grad[0] = 1.0 / self.params[0];
                Ok(self.params[0].ln())
            }
            IntensityFamily::Custom => {
                let v = self.raw_rate(t);
                self.custom_grad(t, grad);
                grad.iter_mut().for_each(|g| *g /= v);
                Ok(v.ln())
            }
            _ => Ok(self.log_rate_grad(t, grad)),
        }
    }

    fn custom_grad(&self, t: f64, out: &mut [f64]) {
        let c = self.custom.as_ref().unwrap();
        match &c.grad {
            Some(g) => g(t, &self.params, out),
            None => central_grad(|p| (c.rate)(t, p), &self.params, out),
        }
    }

    /// ∂ψ/∂ρ at t.
    pub fn grad(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let mut g = vec![0.0; self.dim()];
        match self.family {
            IntensityFamily::Constant => g[0] = 1.0,
            IntensityFamily::Custom => self.custom_grad(t, &mut g),
            _ => {
                let psi = self.log_rate_grad(t, &mut g).exp();
                g.iter_mut().for_each(|v| *v *= psi);
            }
        }
        Ok(g)
    }

    /// ∂²ψ/∂ρ∂ρᵀ at t.
    pub fn hessian(&self, t: f64) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        let q = self.dim();
        let p = &self.params;
        match self.family {
            IntensityFamily::Constant => Ok(DMatrix::zeros(1, 1)),
            IntensityFamily::Custom => {
                let this = self.clone();
                Ok(central_hessian(
                    |params, out| {
                        let m = IntensityModel {
                            params: params.to_vec(),
                            ..this.clone()
                        };
                        m.custom_grad(t, out)
                    },
                    p,
                ))
            }
            _ => {
                let mut g = vec![0.0; q];
                let psi = self.log_rate_grad(t, &mut g).exp();
                let mut h = DMatrix::from_fn(q, q, |i, j| g[i] * g[j]);
                let (offset, s) = match self.family {
                    IntensityFamily::LogPeriodic => (2, Some(seasonal(p[2], p[3], p[4], t))),
                    IntensityFamily::QuadPeriodic => (3, Some(seasonal(p[3], p[4], p[5], t))),
                    _ => (0, None),
                };
                if let Some(s) = s {
                    for i in 0..3 {
                        for j in 0..3 {
                            h[(offset + i, offset + j)] += s.hess[i][j];
                        }
                    }
                }
                Ok(h * psi)
            }
        }
    }

    fn integration_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self.family.period_index() {
            Some(k) => period_breaks(lo, hi, self.params[k]),
            None => Vec::new(),
        }
    }

    /// Ψ(t; ρ) = ∫₀ᵗ ψ(z; ρ) dz (from the log-time floor for `log_periodic`).
    pub fn cumulative(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!("cumulative intensity needs t ≥ 0, got {t}")));
        }
        self.cumulative_between(0.0, t)
    }

    /// ∫ ψ over [lo, hi].
    pub fn cumulative_between(&self, lo: f64, hi: f64) -> Result<f64> {
        let lo = lo.max(self.time_floor());
        if hi <= lo {
            return Ok(0.0);
        }
        let p = &self.params;
        match self.family {
            IntensityFamily::Constant => Ok(p[0] * (hi - lo)),
            IntensityFamily::Exponential => {
                let span = hi - lo;
                Ok((p[0] + p[1] * lo).exp() * span * expm1_over_x(p[1] * span))
            }
            _ => {
                let breaks = self.integration_breaks(lo, hi);
                crate::quadrature::integrate_with_breaks(|z| self.raw_rate(z), lo, hi, &breaks, Tolerance::default())
            }
        }
    }

    /// ∂Ψ(t; ρ)/∂ρ.
    pub fn cumulative_grad(&self, t: f64) -> Result<Vec<f64>> {
        self.cumulative_grad_tol(t, Tolerance::default())
    }

    pub(crate) fn cumulative_grad_tol(&self, t: f64, tol: Tolerance) -> Result<Vec<f64>> {
        let lo = self.time_floor();
        let q = self.dim();
        if t <= lo {
            return Ok(vec![0.0; q]);
        }
        let p = &self.params;
        match self.family {
            IntensityFamily::Constant => Ok(vec![t]),
            IntensityFamily::Exponential => {
                let scale = p[0].exp();
                let x = p[1] * t;
                Ok(vec![scale * t * expm1_over_x(x), scale * t * t * expm1_over_x_deriv(x)])
            }
            _ => {
                let mut buf = vec![0.0; q];
                let breaks = self.integration_breaks(lo, t);
                let r = crate::quadrature::integrate_adaptive(
                    |z, out| {
                        if self.family == IntensityFamily::Custom {
                            self.custom_grad(z, out);
                        } else {
                            let psi = self.log_rate_grad(z, &mut buf).exp();
                            for (o, g) in out.iter_mut().zip(&buf) {
                                *o = psi * g;
                            }
                        }
                    },
                    q,
                    lo,
                    t,
                    &breaks,
                    tol,
                )?;
                if !r.converged {
                    return Err(Error::numerical("cumulative intensity gradient", r.abs_error));
                }
                Ok(r.value)
            }
        }
    }

    /// Ψ(t) and ∂Ψ(t)/∂ρ in one pass.
    pub(crate) fn cumulative_with_grad(&self, t: f64, tol: Tolerance) -> Result<(f64, Vec<f64>)> {
        let lo = self.time_floor();
        let q = self.dim();
        if t <= lo {
            return Ok((0.0, vec![0.0; q]));
        }
        match self.family {
            IntensityFamily::Constant | IntensityFamily::Exponential => {
                Ok((self.cumulative(t)?, self.cumulative_grad(t)?))
            }
            _ => {
                let mut buf = vec![0.0; q];
                let breaks = self.integration_breaks(lo, t);
                let r = crate::quadrature::integrate_adaptive(
                    |z, out| {
                        if self.family == IntensityFamily::Custom {
                            out[0] = self.raw_rate(z);
                            self.custom_grad(z, &mut out[1..]);
                        } else {
                            let psi = self.log_rate_grad(z, &mut buf).exp();
                            out[0] = psi;
                            for (o, g) in out[1..].iter_mut().zip(&buf) {
                                *o = psi * g;
                            }
                        }
                    },
                    q + 1,
                    lo,
                    t,
                    &breaks,
                    tol,
                )?;
                if !r.converged {
                    return Err(Error::numerical("cumulative intensity", r.abs_error));
                }
                Ok((r.value[0], r.value[1..].to_vec()))
            }
        }
    }

    /// Information matrix I(t; ρ) = ∫₀ᵗ (∂ψ)(∂ψ)ᵀ/ψ dz, by quadrature.
    pub fn information(&self, t: f64) -> Result<DMatrix<f64>> {
        self.information_tol(t, Tolerance::with_rel(1e-11))
    }

    pub(crate) fn information_tol(&self, t: f64, tol: Tolerance) -> Result<DMatrix<f64>> {
        let q = self.dim();
        let lo = self.time_floor();
        if t <= lo {
            return Ok(DMatrix::zeros(q, q));
        }
        let packed = q * (q + 1) / 2;
        let mut g = vec![0.0; q];
        let breaks = self.integration_breaks(lo, t);
        let r = crate::quadrature::integrate_adaptive(
            |z, out| match self.family {
                IntensityFamily::Constant => out[0] = 1.0 / self.params[0],
                IntensityFamily::Custom => {
                    let psi = self.raw_rate(z);
                    self.custom_grad(z, &mut g);
                    pack_outer(1.0 / psi, &g, out);
                }
                _ => {
                    let psi = self.log_rate_grad(z, &mut g).exp();
                    pack_outer(psi, &g, out);
                }
            },
            packed,
            lo,
            t,
            &breaks,
            tol,
        )?;
        if !r.converged {
            return Err(Error::numerical("information matrix", r.abs_error));
        }
        Ok(unpack_symmetric(q, &r.value))
    }

    fn is_monotone(&self) -> bool {
        matches!(self.family, IntensityFamily::Constant | IntensityFamily::Exponential)
    }

    /// B ≥ sup ψ on [lo, hi]: exact for monotone families, otherwise a
    /// refined grid maximum times [`BOUND_SAFETY`].
    pub fn upper_bound(&self, lo: f64, hi: f64) -> Result<f64> {
        self.upper_bound_grid(lo, hi, BOUND_GRID)
    }

    pub(crate) fn upper_bound_grid(&self, lo: f64, hi: f64, points: usize) -> Result<f64> {
        if !(lo < hi) {
            return Err(Error::Range(format!("bound window [{lo}, {hi}] is empty")));
        }
        let lo = lo.max(self.time_floor());
        if lo >= hi {
            return Ok(0.0);
        }
        let b = if self.is_monotone() {
            self.raw_rate(lo).max(self.raw_rate(hi))
        } else {
            grid_bound(|t| Ok(self.raw_rate(t)), lo, hi, points)?
        };
        if !b.is_finite() {
            return Err(Error::numerical(
                format!("intensity bound on [{lo}, {hi}] is not finite"),
                f64::INFINITY,
            ));
        }
        Ok(b)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    family: String,
    params: Vec<f64>,
}

impl Serialize for IntensityModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelJson {
            family: self.family.name().to_string(),
            params: self.params.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntensityModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ModelJson::deserialize(d)?;
        let family = IntensityFamily::from_name(&raw.family)
            .ok_or_else(|| D::Error::custom(format!("unknown intensity family '{}'", raw.family)))?;
        IntensityModel::new(family, raw.params).map_err(D::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Mark (payment) intensity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkFamily {
    ConstantMark,
    WeibullBaseline,
    ExpTrendPeriodic,
    Custom,
}

impl MarkFamily {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "constant_mark" => Self::ConstantMark,
            "weibull_baseline" => Self::WeibullBaseline,
            "exp_trend_periodic" => Self::ExpTrendPeriodic,
            "custom" => Self::Custom,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ConstantMark => "constant_mark",
            Self::WeibullBaseline => "weibull_baseline",
            Self::ExpTrendPeriodic => "exp_trend_periodic",
            Self::Custom => "custom",
        }
    }

    pub fn dim(self) -> Option<usize> {
        match self {
            Self::ConstantMark => Some(1),
            Self::WeibullBaseline => Some(3),
            Self::ExpTrendPeriodic => Some(5),
            Self::Custom => None,
        }
    }

    pub fn period_index(self) -> Option<usize> {
        match self {
            Self::ExpTrendPeriodic => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for MarkFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A payment intensity λ(τ, z; θ) shared by all claims, where z is the
/// claim's reporting time.
#[derive(Clone)]
pub struct MarkIntensityModel {
    family: MarkFamily,
    params: Vec<f64>,
    custom: Option<Arc<CustomMarkIntensity>>,
}

impl fmt::Debug for MarkIntensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MarkIntensityModel")
            .field("family", &self.family)
            .field("params", &self.params)
            .finish()
    }
}

impl PartialEq for MarkIntensityModel {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.params == other.params && self.custom.is_none() && other.custom.is_none()
    }
}

impl MarkIntensityModel {
    pub fn new(family: MarkFamily, params: Vec<f64>) -> Result<Self> {
        if family == MarkFamily::Custom {
            return Err(Error::Parameter(
                "custom mark intensities are built with MarkIntensityModel::custom".into(),
            ));
        }
        let m = MarkIntensityModel {
            family,
            params,
            custom: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(MarkFamily::ConstantMark, vec![rate])
    }

    pub fn custom(custom: CustomMarkIntensity, params: Vec<f64>) -> Result<Self> {
        let m = MarkIntensityModel {
            family: MarkFamily::Custom,
            params,
            custom: Some(Arc::new(custom)),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        let m = MarkIntensityModel {
            family: self.family,
            params,
            custom: self.custom.clone(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn family(&self) -> MarkFamily {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> Vec<String> {
        match self.family {
            MarkFamily::ConstantMark => vec!["theta".into()],
            MarkFamily::WeibullBaseline => vec!["nu1".into(), "nu2".into(), "eta".into()],
            MarkFamily::ExpTrendPeriodic => ["nu1", "nu2", "eta1", "eta2", "eta3"].map(String::from).to_vec(),
            MarkFamily::Custom => (1..=self.dim()).map(|j| format!("theta{j}")).collect(),
        }
    }

    /// Split θ = (ν, η) into baseline and covariate-effect parts:
    /// λ(τ, z) = λ₀(τ − z; ν) exp{f(z; η)}. Returns the length of ν.
    pub fn baseline_dim(&self) -> Option<usize> {
        match self.family {
            MarkFamily::WeibullBaseline | MarkFamily::ExpTrendPeriodic => Some(2),
            _ => None,
        }
    }

    /// Baseline λ₀(s; ν) at internal time s = τ − z.
    pub fn baseline(&self, s: f64) -> Option<f64> {
        let p = &self.params;
        if s < 0.0 {
            return self.baseline_dim().map(|_| 0.0);
        }
        match self.family {
            MarkFamily::WeibullBaseline => Some(p[0] * p[1] * s.powf(p[0] - 1.0)),
            MarkFamily::ExpTrendPeriodic => Some((p[0] + p[1] * s).exp()),
            _ => None,
        }
    }

    /// Covariate effect f(z; η), entering as exp{f}.
    pub fn covariate_effect(&self, z: f64) -> Option<f64> {
        let p = &self.params;
        match self.family {
            MarkFamily::WeibullBaseline => Some(p[2] * z),
            MarkFamily::ExpTrendPeriodic => Some(seasonal(p[2], p[3], p[4], z).value),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = &self.params;
        if let Some(d) = self.family.dim() {
            if p.len() != d {
                return Err(Error::Parameter(format!(
                    "{} expects {d} parameters, got {}",
                    self.family,
                    p.len()
                )));
            }
        }
        check_finite(p)?;
        match self.family {
            MarkFamily::ConstantMark if p[0] < 0.0 => {
                Err(Error::Parameter(format!("payment rate {} is negative", p[0])))
            }
            MarkFamily::WeibullBaseline if p[0] <= 0.0 || p[1] <= 0.0 => Err(Error::Parameter(format!(
                "weibull baseline needs nu1 > 0 and nu2 > 0, got {p:?}"
            ))),
            MarkFamily::ExpTrendPeriodic if p[4] <= 0.0 => {
                Err(Error::Parameter(format!("period eta3 = {} must be positive", p[4])))
            }
            MarkFamily::Custom => {
                let c = self.custom.as_ref().expect("custom family carries closures");
                match &c.admissible {
                    Some(ok) if !ok(p) => Err(Error::Parameter(format!(
                        "parameters {p:?} outside the domain of '{}'",
                        c.name
                    ))),
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    fn check_args(tau: f64, z: f64) -> Result<()> {
        if tau.is_finite() && z.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "mark intensity undefined at tau = {tau}, z = {z}"
            )))
        }
    }

    /// λ for τ ≥ z (no support check).
    fn raw_rate(&self, tau: f64, z: f64) -> f64 {
        let p = &self.params;
        let s = tau - z;
        match self.family {
            MarkFamily::ConstantMark => p[0],
            MarkFamily::WeibullBaseline => {
                let base = if p[0] == 1.0 { 1.0 } else { s.powf(p[0] - 1.0) };
                p[0] * p[1] * base * (p[2] * z).exp()
            }
            MarkFamily::ExpTrendPeriodic => {
                let a = TWO_PI * z / p[4];
                (p[0] + p[1] * s + p[2] * a.cos() + p[3] * a.sin()).exp()
            }
            MarkFamily::Custom => (self.custom.as_ref().unwrap().rate)(tau, z, p),
        }
    }

    fn custom_grad(&self, tau: f64, z: f64, out: &mut [f64]) {
        let c = self.custom.as_ref().unwrap();
        match &c.grad {
            Some(g) => g(tau, z, &self.params, out),
            None => central_grad(|p| (c.rate)(tau, z, p), &self.params, out),
        }
    }

    /// log λ and ∂ log λ/∂θ for τ ≥ z.
    fn log_rate_grad(&self, tau: f64, z: f64, grad: &mut [f64]) -> f64 {
        let p = &self.params;
        let s = tau - z;
        match self.family {
            MarkFamily::ConstantMark => {
                grad[0] = 1.0 / p[0];
                p[0].ln()
            }
            MarkFamily::WeibullBaseline => {
                let ls = s.ln();
                grad[0] = 1.0 / p[0] + ls;
                grad[1] = 1.0 / p[1];
                grad[2] = z;
                p[0].ln() + p[1].ln() + (p[0] - 1.0) * ls + p[2] * z
            }
            MarkFamily::ExpTrendPeriodic => {
                let sea = seasonal(p[2], p[3], p[4], z);
                grad[0] = 1.0;
                grad[1] = s;
                grad[2..5].copy_from_slice(&sea.grad);
                p[0] + p[1] * s + sea.value
            }
            MarkFamily::Custom => {
                let v = self.raw_rate(tau, z);
                self.custom_grad(tau, z, grad);
                grad.iter_mut().for_each(|g| *g /= v);
                v.ln()
            }
        }
    }

    /// λ(τ, z; θ); zero for τ < z.
    pub fn eval_mark(&self, tau: f64, z: f64) -> Result<f64> {
        Self::check_args(tau, z)?;
        if tau < z {
            return Ok(0.0);
        }
        Ok(self.raw_rate(tau, z))
    }

    /// log λ and its parameter gradient at a payment time τ ≥ z.
    pub fn log_eval_grad(&self, tau: f64, z: f64, grad: &mut [f64]) -> Result<f64> {
        Self::check_args(tau, z)?;
        if tau < z {
            return Err(Error::Domain(format!(
                "log intensity undefined before reporting (tau = {tau} < z = {z})"
            )));
        }
        Ok(self.log_rate_grad(tau, z, grad))
    }

    /// ∂λ/∂θ; zero for τ < z.
    pub fn grad_mark(&self, tau: f64, z: f64) -> Result<Vec<f64>> {
        Self::check_args(tau, z)?;
        let mut g = vec![0.0; self.dim()];
        if tau < z {
            return Ok(g);
        }
        match self.family {
            MarkFamily::ConstantMark => g[0] = 1.0,
            MarkFamily::Custom => self.custom_grad(tau, z, &mut g),
            _ => {
                let lam = self.raw_rate(tau, z);
                self.log_rate_grad(tau, z, &mut g);
                g.iter_mut().for_each(|v| *v *= lam);
            }
        }
        Ok(g)
    }

    /// ∂²λ/∂θ∂θᵀ; zero for τ < z.
    pub fn hessian_mark(&self, tau: f64, z: f64) -> Result<DMatrix<f64>> {
        Self::check_args(tau, z)?;
        let q = self.dim();
        if tau < z {
            return Ok(DMatrix::zeros(q, q));
        }
        let p = &self.params;
        match self.family {
            MarkFamily::ConstantMark => Ok(DMatrix::zeros(1, 1)),
            MarkFamily::Custom => {
                let this = self.clone();
                Ok(central_hessian(
                    |params, out| {
                        let m = MarkIntensityModel {
                            params: params.to_vec(),
                            ..this.clone()
                        };
                        m.custom_grad(tau, z, out)
                    },
                    p,
                ))
            }
            _ => {
                let mut g = vec![0.0; q];
                let lam = self.raw_rate(tau, z);
                self.log_rate_grad(tau, z, &mut g);
                let mut h = DMatrix::from_fn(q, q, |i, j| g[i] * g[j]);
                match self.family {
                    MarkFamily::WeibullBaseline => {
                        h[(0, 0)] -= 1.0 / (p[0] * p[0]);
                        h[(1, 1)] -= 1.0 / (p[1] * p[1]);
                    }
                    MarkFamily::ExpTrendPeriodic => {
                        let s = seasonal(p[2], p[3], p[4], z);
                        for i in 0..3 {
                            for j in 0..3 {
                                h[(2 + i, 2 + j)] += s.hess[i][j];
                            }
                        }
                    }
                    _ => {}
                }
                Ok(h * lam)
            }
        }
    }

    /// Λ(t, z; θ) = ∫_z^t λ(τ, z; θ) dτ; zero for t ≤ z.
    pub fn cumulative_mark(&self, t: f64, z: f64) -> Result<f64> {
        Self::check_args(t, z)?;
        self.cumulative_mark_between(z, t, z)
    }

    /// ∫ λ(τ, z) dτ over [lo, hi] ∩ [z, ∞).
    pub fn cumulative_mark_between(&self, lo: f64, hi: f64, z: f64) -> Result<f64> {
        let lo = lo.max(z);
        if hi <= lo {
            return Ok(0.0);
        }
        let p = &self.params;
        match self.family {
            MarkFamily::ConstantMark => Ok(p[0] * (hi - lo)),
            MarkFamily::WeibullBaseline => {
                let scale = p[1] * (p[2] * z).exp();
                Ok(scale * ((hi - z).powf(p[0]) - (lo - z).powf(p[0])))
            }
            MarkFamily::ExpTrendPeriodic => {
                let s0 = lo - z;
                let span = hi - lo;
                let head = (p[0] + p[1] * s0 + seasonal(p[2], p[3], p[4], z).value).exp();
                Ok(head * span * expm1_over_x(p[1] * span))
            }
            MarkFamily::Custom => integrate(|tau| self.raw_rate(tau, z), lo, hi, Tolerance::default()),
        }
    }

    /// Closed-form τ with Λ(τ, z) = `level`, for families whose rate can be
    /// unbounded at τ = z (Weibull baseline with ν₁ < 1).
    pub fn inverse_cumulative_mark(&self, level: f64, z: f64) -> Option<f64> {
        let p = &self.params;
        match self.family {
            MarkFamily::WeibullBaseline if level >= 0.0 => {
                let scale = p[1] * (p[2] * z).exp();
                Some(z + (level / scale).powf(1.0 / p[0]))
            }
            _ => None,
        }
    }

    /// True when λ(·, z) blows up at τ = z, so thinning cannot bound it.
    pub fn unbounded_at_report(&self) -> bool {
        self.family == MarkFamily::WeibullBaseline && self.params[0] < 1.0
    }

    /// ∂Λ(t, z; θ)/∂θ.
    pub fn cumulative_mark_grad(&self, t: f64, z: f64) -> Result<Vec<f64>> {
        Self::check_args(t, z)?;
        let q = self.dim();
        if t <= z {
            return Ok(vec![0.0; q]);
        }
        let p = &self.params;
        let s = t - z;
        match self.family {
            MarkFamily::ConstantMark => Ok(vec![s]),
            MarkFamily::WeibullBaseline => {
                let big = p[1] * s.powf(p[0]) * (p[2] * z).exp();
                Ok(vec![big * s.ln(), big / p[1], big * z])
            }
            MarkFamily::ExpTrendPeriodic => {
                let sea = seasonal(p[2], p[3], p[4], z);
                let head = (p[0] + sea.value).exp();
                let x = p[1] * s;
                let big = head * s * expm1_over_x(x);
                Ok(vec![
                    big,
                    head * s * s * expm1_over_x_deriv(x),
                    big * sea.grad[0],
                    big * sea.grad[1],
                    big * sea.grad[2],
                ])
            }
            MarkFamily::Custom => {
                integrate_vec(|tau, out| self.custom_grad(tau, z, out), q, z, t, Tolerance::default())
            }
        }
    }

    /// Per-claim information ∫_z^t (∂λ)(∂λ)ᵀ/λ dτ, by quadrature.
    pub fn information_mark(&self, t: f64, z: f64) -> Result<DMatrix<f64>> {
        self.information_mark_tol(t, z, Tolerance::with_rel(1e-10))
    }

    pub(crate) fn information_mark_tol(&self, t: f64, z: f64, tol: Tolerance) -> Result<DMatrix<f64>> {
        let q = self.dim();
        if t <= z {
            return Ok(DMatrix::zeros(q, q));
        }
        if self.family == MarkFamily::WeibullBaseline {
            return Ok(self.weibull_information(t - z, z));
        }
        let packed = q * (q + 1) / 2;
        let mut g = vec![0.0; q];
        let r = crate::quadrature::integrate_adaptive(
            |tau, out| {
                if self.family == MarkFamily::Custom {
                    let lam = self.raw_rate(tau, z);
                    self.custom_grad(tau, z, &mut g);
                    pack_outer(1.0 / lam, &g, out);
                } else {
                    let lam = self.raw_rate(tau, z);
                    self.log_rate_grad(tau, z, &mut g);
                    pack_outer(lam, &g, out);
                }
            },
            packed,
            z,
            t,
            &[],
            tol,
        )?;
        if !r.converged {
            return Err(Error::numerical("mark information matrix", r.abs_error));
        }
        Ok(unpack_symmetric(q, &r.value))
    }

    // ∫₀ˢ λ ∇log λ ∇log λᵀ ds from the moments ∫λ lnᵏ s, k = 0, 1, 2.
    // Exact also for ν₁ < 1, where λ is singular at s = 0.
    fn weibull_information(&self, span: f64, z: f64) -> DMatrix<f64> {
        let p = &self.params;
        let (nu1, nu2) = (p[0], p[1]);
        let h = 1.0 / nu1;
        let ls = span.ln();
        let m0 = nu2 * (p[2] * z).exp() * span.powf(nu1);
        let m1 = m0 * (ls - h);
        let m2 = m0 * (ls * ls - 2.0 * h * ls + 2.0 * h * h);
        let lin = h * m0 + m1;
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 0)] = h * h * m0 + 2.0 * h * m1 + m2;
        j[(0, 1)] = lin / nu2;
        j[(0, 2)] = z * lin;
        j[(1, 1)] = m0 / (nu2 * nu2);
        j[(1, 2)] = z * m0 / nu2;
        j[(2, 2)] = z * z * m0;
        j.fill_lower_triangle_with_upper_triangle();
        j
    }

    fn is_monotone(&self) -> bool {
        !matches!(self.family, MarkFamily::Custom)
    }

    /// B ≥ sup_τ λ(τ, z) on [lo, hi].
    pub fn upper_bound_mark(&self, lo: f64, hi: f64, z: f64) -> Result<f64> {
        self.upper_bound_mark_grid(lo, hi, z, BOUND_GRID)
    }

    pub(crate) fn upper_bound_mark_grid(&self, lo: f64, hi: f64, z: f64, points: usize) -> Result<f64> {
        if !(lo < hi) {
            return Err(Error::Range(format!("bound window [{lo}, {hi}] is empty")));
        }
        let lo = lo.max(z);
        if lo >= hi {
            return Ok(0.0);
        }
        let b = if self.is_monotone() {
            self.raw_rate(lo, z).max(self.raw_rate(hi, z))
        } else {
            grid_bound(|tau| Ok(self.raw_rate(tau, z)), lo, hi, points)?
        };
        if !b.is_finite() {
            return Err(Error::numerical(
                format!("mark intensity is unbounded on [{lo}, {hi}] for z = {z}"),
                f64::INFINITY,
            ));
        }
        Ok(b)
    }
}

impl Serialize for MarkIntensityModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelJson {
            family: self.family.name().to_string(),
            params: self.params.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MarkIntensityModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ModelJson::deserialize(d)?;
        let family = MarkFamily::from_name(&raw.family)
            .ok_or_else(|| D::Error::custom(format!("unknown mark family '{}'", raw.family)))?;
        MarkIntensityModel::new(family, raw.params).map_err(D::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Rate functions for the sampler
// ---------------------------------------------------------------------------

/// A one-dimensional rate function that can be bounded on windows.
pub trait RateFunction: Sync {
    /// Rate at t; zero outside the support.
    fn rate(&self, t: f64) -> Result<f64>;
    /// An upper bound of the rate on [lo, hi].
    fn bound(&self, lo: f64, hi: f64, grid_points: usize) -> Result<f64>;
    /// Whether the exact bound is available without grid search.
    fn exact_bound(&self) -> bool;
}

impl RateFunction for IntensityModel {
    fn rate(&self, t: f64) -> Result<f64> {
        if t < self.time_floor() {
            return Ok(0.0);
        }
        self.eval(t)
    }

    fn bound(&self, lo: f64, hi: f64, grid_points: usize) -> Result<f64> {
        self.upper_bound_grid(lo, hi, grid_points)
    }

    fn exact_bound(&self) -> bool {
        self.is_monotone()
    }
}

/// The payment intensity of one claim reported at `z`.
#[derive(Debug, Clone, Copy)]
pub struct MarkAt<'a> {
    pub model: &'a MarkIntensityModel,
    pub z: f64,
}

impl RateFunction for MarkAt<'_> {
    fn rate(&self, t: f64) -> Result<f64> {
        self.model.eval_mark(t, self.z)
    }

    fn bound(&self, lo: f64, hi: f64, grid_points: usize) -> Result<f64> {
        self.model.upper_bound_mark_grid(lo, hi, self.z, grid_points)
    }

    fn exact_bound(&self) -> bool {
        self.model.is_monotone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn eval_examples() {
        assert_eq!(IntensityModel::constant(2.0).unwrap().eval(3.0).unwrap(), 2.0);
        assert_eq!(IntensityModel::exponential(0.0, 0.0).unwrap().eval(7.5).unwrap(), 1.0);
        let lp = IntensityModel::new(IntensityFamily::LogPeriodic, vec![0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(lp.eval(1.0).unwrap(), 1.0);
    }

    #[test]
    fn domain_and_parameter_errors() {
        let lp = IntensityModel::new(IntensityFamily::LogPeriodic, vec![0.0, 0.5, 0.1, 0.1, 364.0]).unwrap();
        assert!(matches!(lp.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(lp.eval(-1.0), Err(Error::Domain(_))));
        assert!(matches!(
            IntensityModel::new(IntensityFamily::LogPeriodic, vec![0.0, 0.5, 0.1, 0.1, -1.0]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(IntensityModel::constant(-1.0), Err(Error::Parameter(_))));
        assert!(matches!(
            IntensityModel::new(IntensityFamily::Exponential, vec![1.0]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            MarkIntensityModel::new(MarkFamily::WeibullBaseline, vec![0.0, 1.0, 0.0]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(IntensityModel::constant(2.0).unwrap().cumulative(4.0).unwrap(), 8.0);
        let e = IntensityModel::exponential(0.0, 1.0).unwrap().cumulative(1.0).unwrap();
        assert!(rel_close(e, std::f64::consts::E - 1.0, 1e-14));
        for m in [
            IntensityModel::constant(2.0).unwrap(),
            IntensityModel::exponential(0.3, -0.2).unwrap(),
            IntensityModel::new(IntensityFamily::QuadPeriodic, vec![0.1, 0.01, -1e-4, 0.3, 0.2, 50.0]).unwrap(),
        ] {
            assert_eq!(m.cumulative(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn cumulative_derivative_is_the_intensity() {
        let m = IntensityModel::new(IntensityFamily::LogPeriodic, vec![0.2, 0.4, 0.3, -0.2, 30.0]).unwrap();
        for t in [5.0, 17.3, 60.0, 99.0] {
            let h = 1e-3;
            let fd = (m.cumulative(t + h).unwrap() - m.cumulative(t - h).unwrap()) / (2.0 * h);
            assert!(rel_close(fd, m.eval(t).unwrap(), 1e-5), "t = {t}");
        }
    }

    #[test]
    fn grad_examples() {
        assert_eq!(IntensityModel::constant(2.0).unwrap().grad(3.0).unwrap(), vec![1.0]);
        assert_eq!(
            IntensityModel::exponential(0.0, 0.0).unwrap().grad(2.0).unwrap(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn finite_difference_fallback_matches_analytic_exponential() {
        let custom = CustomIntensity {
            name: "exp".into(),
            rate: Arc::new(|t, p| (p[0] + p[1] * t).exp()),
            grad: None,
            admissible: None,
        };
        let c = IntensityModel::custom(custom, vec![0.3, 0.01]).unwrap();
        let e = IntensityModel::exponential(0.3, 0.01).unwrap();
        let (gc, ge) = (c.grad(50.0).unwrap(), e.grad(50.0).unwrap());
        for j in 0..2 {
            assert!(rel_close(gc[j], ge[j], 1e-5), "{gc:?} vs {ge:?}");
        }
        let (hc, he) = (c.hessian(50.0).unwrap(), e.hessian(50.0).unwrap());
        for (a, b) in hc.iter().zip(he.iter()) {
            assert!(rel_close(*a, *b, 1e-5), "{hc} vs {he}");
        }
        assert!(rel_close(
            c.cumulative(50.0).unwrap(),
            e.cumulative(50.0).unwrap(),
            1e-9
        ));
    }

    #[test]
    fn mark_examples() {
        let c = MarkIntensityModel::constant(0.6).unwrap();
        assert_eq!(c.eval_mark(3.0, 5.0).unwrap(), 0.0);
        assert!(rel_close(c.cumulative_mark(9.0, 5.0).unwrap(), 2.4, 1e-15));
        assert_eq!(c.cumulative_mark(4.0, 5.0).unwrap(), 0.0);

        let w = MarkIntensityModel::new(MarkFamily::WeibullBaseline, vec![1.0, 0.5, 0.0]).unwrap();
        assert_eq!(w.eval_mark(12.0, 10.0).unwrap(), 0.5);
        assert_eq!(w.baseline_dim(), Some(2));
        assert_eq!(w.baseline(2.0), Some(0.5));
        assert_eq!(w.covariate_effect(10.0), Some(0.0));
    }

    #[test]
    fn mark_cumulatives_match_quadrature() {
        let models = [
            MarkIntensityModel::new(MarkFamily::WeibullBaseline, vec![1.4, 0.02, 0.001]).unwrap(),
            MarkIntensityModel::new(MarkFamily::ExpTrendPeriodic, vec![-3.0, -0.01, 0.3, -0.2, 364.0]).unwrap(),
        ];
        for m in &models {
            let z = 40.0;
            let closed = m.cumulative_mark(300.0, z).unwrap();
            let quad = integrate(|tau| m.eval_mark(tau, z).unwrap(), z, 300.0, Tolerance::default()).unwrap();
            assert!(rel_close(closed, quad, 1e-9), "{:?}: {closed} vs {quad}", m.family());
        }
    }

    #[test]
    fn mark_is_zero_before_reporting() {
        let models = [
            MarkIntensityModel::constant(0.2).unwrap(),
            MarkIntensityModel::new(MarkFamily::WeibullBaseline, vec![0.7, 0.3, 0.01]).unwrap(),
            MarkIntensityModel::new(MarkFamily::ExpTrendPeriodic, vec![-2.0, 0.01, 0.3, 0.2, 364.0]).unwrap(),
        ];
        for m in &models {
            for tau in [-5.0, 0.0, 9.99] {
                assert_eq!(m.eval_mark(tau, 10.0).unwrap(), 0.0);
                assert!(m.grad_mark(tau, 10.0).unwrap().iter().all(|g| *g == 0.0));
            }
        }
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(
            IntensityModel::constant(2.0).unwrap().upper_bound(0.0, 10.0).unwrap(),
            2.0
        );
        let e = IntensityModel::exponential(0.0, 0.1)
            .unwrap()
            .upper_bound(0.0, 10.0)
            .unwrap();
        assert!(rel_close(e, std::f64::consts::E, 1e-15));
        assert!(IntensityModel::constant(2.0).unwrap().upper_bound(3.0, 3.0).is_err());
    }

    #[test]
    fn log_periodic_bound_dominates_dense_resampling() {
        let m = IntensityModel::new(IntensityFamily::LogPeriodic, vec![0.5, 0.3, 0.8, -0.6, 13.0]).unwrap();
        let (lo, hi) = (0.5, 200.0);
        let b = m.upper_bound(lo, hi).unwrap();
        let n = 200_000;
        for k in 0..=n {
            let t = lo + (hi - lo) * k as f64 / n as f64;
            assert!(m.eval(t).unwrap() <= b, "t = {t}");
        }
    }

    #[test]
    fn unbounded_weibull_start_is_a_numerical_error() {
        let w = MarkIntensityModel::new(MarkFamily::WeibullBaseline, vec![0.5, 0.3, 0.0]).unwrap();
        assert!(matches!(
            w.upper_bound_mark(10.0, 20.0, 10.0),
            Err(Error::Numerical { .. })
        ));
        assert!(w.upper_bound_mark(11.0, 20.0, 10.0).unwrap().is_finite());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = IntensityModel::new(
            IntensityFamily::QuadPeriodic,
            vec![0.1, 1.0 / 3.0, -2.2e-7, std::f64::consts::PI, 1e-300, 364.25],
        )
        .unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.starts_with("{\"family\":\"quad_periodic\",\"params\":["));
        let back: IntensityModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);

        let mk = MarkIntensityModel::new(MarkFamily::ExpTrendPeriodic, vec![-3.0, 0.1, 0.2, 0.3, 364.0]).unwrap();
        let back: MarkIntensityModel = serde_json::from_str(&serde_json::to_string(&mk).unwrap()).unwrap();
        assert_eq!(back, mk);

        assert!(serde_json::from_str::<IntensityModel>(r#"{"family":"nope","params":[1]}"#).is_err());
    }

    #[test]
    fn expm1_helpers_are_smooth_across_branches() {
        for x in [
            -0.2, -0.1000001, -0.0999999, -1e-6, 0.0, 1e-6, 0.0999999, 0.1000001, 0.5,
        ] {
            let h = 1e-5;
            let fd = (expm1_over_x(x + h) - expm1_over_x(x - h)) / (2.0 * h);
            assert!(rel_close(fd, expm1_over_x_deriv(x), 1e-8), "x = {x}");
        }
    }

    #[test]
    fn weibull_information_matches_quadrature() {
        let m = MarkIntensityModel::new(MarkFamily::WeibullBaseline, vec![1.7, 0.02, 0.003]).unwrap();
        let (z, t) = (40.0, 250.0);
        let j = m.information_mark(t, z).unwrap();
        let mut g = vec![0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                let q = crate::quadrature::integrate(
                    |tau| {
                        let l = m.log_eval_grad(tau, z, &mut g).unwrap().exp();
                        l * g[r] * g[c]
                    },
                    z,
                    t,
                    Tolerance::with_rel(1e-12),
                )
                .unwrap();
                assert!(rel_close(j[(r, c)], q, 1e-9), "({r},{c}): {} vs {q}", j[(r, c)]);
            }
        }
        // finite for a hazard singular at the reporting time
        let m = m.with_params(vec![0.6, 0.02, 0.003]).unwrap();
        assert!(m.information_mark(t, z).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn weibull_inverse_cumulative() {
        let m = MarkIntensityModel::new(MarkFamily::WeibullBaseline, vec![0.6, 0.05, 0.001]).unwrap();
        for t in [12.0, 30.0, 400.0] {
            let level = m.cumulative_mark(t, 10.0).unwrap();
            assert!(rel_close(m.inverse_cumulative_mark(level, 10.0).unwrap(), t, 1e-12));
        }
        assert!(m.unbounded_at_report());
        assert!(MarkIntensityModel::constant(0.1)
            .unwrap()
            .inverse_cumulative_mark(1.0, 0.0)
            .is_none());
    }
}
