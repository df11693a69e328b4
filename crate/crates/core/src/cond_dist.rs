//! Conditional distributions whose two parameters vary with the reporting
//! time z through truncated Fourier series:
//!
//! c(z) = α + (z/7)β + Σₗ { δₗ cos(ξₗ·2πz/364) + γₗ sin(ξₗ·2πz/364) }
//!
//! and d(z) likewise. Parameter vectors are laid out as
//! (α, β, δ₁, ξ₁, γ₁, …, δ_L, ξ_L, γ_L).
//!
//! | family      | c      | d     |
//! |-------------|--------|-------|
//! | `lognormal` | μ      | σ     |
//! | `weibull`   | shape  | scale |
//! | `gamma`     | shape  | scale |

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::optim::OptimOptions;
use crate::poisson_fit::{
    matrix_rows, maximize, observed_information, sorted_eigenvalues, standard_errors, FitResult, InformationKind,
    Transform,
};

pub const WEEK_DAYS: f64 = 7.0;
pub const YEAR_WEEKS: f64 = 52.0;
const YEAR_DAYS: f64 = WEEK_DAYS * YEAR_WEEKS;

/// PIT values are clamped to [PIT_CLAMP, 1 − PIT_CLAMP].
pub const PIT_CLAMP: f64 = 1e-12;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistFamily {
    Lognormal,
    Weibull,
    Gamma,
}

impl DistFamily {
    pub fn name(self) -> &'static str {
        match self {
            DistFamily::Lognormal => "lognormal",
            DistFamily::Weibull => "weibull",
            DistFamily::Gamma => "gamma",
        }
    }

    fn c_positive(self) -> bool {
        !matches!(self, DistFamily::Lognormal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CondDistModel {
    family: DistFamily,
    #[serde(rename = "L")]
    order: usize,
    trend: bool,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    xi_fixed: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CondDistJson {
    family: DistFamily,
    #[serde(rename = "L")]
    order: usize,
    trend: bool,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    #[serde(default = "yes")]
    xi_fixed: bool,
}

fn yes() -> bool {
    true
}

impl<'de> Deserialize<'de> for CondDistModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = CondDistJson::deserialize(d)?;
        let mut m =
            CondDistModel::new(raw.family, raw.order, raw.trend, raw.theta1, raw.theta2).map_err(D::Error::custom)?;
        m.xi_fixed = raw.xi_fixed;
        Ok(m)
    }
}

/// Value and gradient of one Fourier parameter function.
fn fourier(theta: &[f64], order: usize, trend: bool, z: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut v = theta[0];
    if trend {
        v += z / WEEK_DAYS * theta[1];
    }
    let w = 2.0 * PI * z / YEAR_DAYS;
    let mut g = grad;
    if let Some(g) = g.as_deref_mut() {
        g[0] = 1.0;
        g[1] = if trend { z / WEEK_DAYS } else { 0.0 };
    }
    for l in 0..order {
        let (delta, xi, gamma) = (theta[2 + 3 * l], theta[3 + 3 * l], theta[4 + 3 * l]);
        let (s, c) = (xi * w).sin_cos();
        v += delta * c + gamma * s;
        if let Some(g) = g.as_deref_mut() {
            g[2 + 3 * l] = c;
            g[3 + 3 * l] = (-delta * s + gamma * c) * w;
            g[4 + 3 * l] = s;
        }
    }
    v
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(u: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(u)
}

/// log f(x; c, d) and its derivatives with respect to (c, d).
fn log_density_grad(family: DistFamily, x: f64, c: f64, d: f64) -> (f64, f64, f64) {
    let lx = x.ln();
    match family {
        DistFamily::Lognormal => {
            let r = lx - c;
            let v = -lx - d.ln() - 0.5 * (2.0 * PI).ln() - r * r / (2.0 * d * d);
            (v, r / (d * d), -1.0 / d + r * r / (d * d * d))
        }
        DistFamily::Weibull => {
            let r = lx - d.ln();
            let p = (c * r).exp();
            let v = c.ln() - d.ln() + (c - 1.0) * r - p;
            (v, 1.0 / c + r - p * r, (c * p - c) / d)
        }
        DistFamily::Gamma => {
            let v = (c - 1.0) * lx - x / d - ln_gamma(c) - c * d.ln();
            (v, lx - digamma(c) - d.ln(), x / (d * d) - c / d)
        }
    }
}

impl CondDistModel {
    /// Builds a model; ξ defaults to fixed.
    pub fn new(family: DistFamily, order: usize, trend: bool, theta1: Vec<f64>, theta2: Vec<f64>) -> Result<Self> {
        let len = 2 + 3 * order;
        for (name, t) in [("theta1", &theta1), ("theta2", &theta2)] {
            if t.len() != len {
                return Err(Error::Parameter(format!(
                    "{name} must have {len} entries for L = {order}, got {}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be finite")));
            }
        }
        Ok(CondDistModel {
            family,
            order,
            trend,
            theta1,
            theta2,
            xi_fixed: true,
        })
    }

    /// A model with constant c and d.
    pub fn constant(family: DistFamily, c: f64, d: f64) -> Result<Self> {
        Self::new(family, 0, false, vec![c, 0.0], vec![d, 0.0])
    }

    /// Standard layout with ξₗ = ℓ and zero seasonal amplitudes.
    pub fn harmonic_layout(order: usize, alpha: f64, beta: f64) -> Vec<f64> {
        let mut t = vec![alpha, beta];
        for l in 1..=order {
            t.extend([0.0, l as f64, 0.0]);
        }
        t
    }

    pub fn family(&self) -> DistFamily {
        self.family
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn trend(&self) -> bool {
        self.trend
    }

    pub fn theta1(&self) -> &[f64] {
        &self.theta1
    }

    pub fn theta2(&self) -> &[f64] {
        &self.theta2
    }

    pub fn xi_fixed(&self) -> bool {
        self.xi_fixed
    }

    pub fn param_c(&self, z: f64) -> f64 {
        fourier(&self.theta1, self.order, self.trend, z, None)
    }

    pub fn param_d(&self, z: f64) -> f64 {
        fourier(&self.theta2, self.order, self.trend, z, None)
    }

    /// (c(z), d(z)), checked against the family's domain.
    pub fn params_at(&self, z: f64) -> Result<(f64, f64)> {
        let (c, d) = (self.param_c(z), self.param_d(z));
        if !(d > 0.0) || !d.is_finite() || !c.is_finite() {
            return Err(Error::Parameter(format!(
                "{}: d(z) = {d} is not positive at z = {z}",
                self.family.name()
            )));
        }
        if self.family.c_positive() && !(c > 0.0) {
            return Err(Error::Parameter(format!(
                "{}: c(z) = {c} is not positive at z = {z}",
                self.family.name()
            )));
        }
        Ok((c, d))
    }

    fn feasible_at(&self, z: f64) -> bool {
        self.params_at(z).is_ok()
    }

    pub fn density(&self, x: f64, z: f64) -> Result<f64> {
        let (c, d) = self.params_at(z)?;
        if x.is_nan() {
            return Err(Error::Domain("density at NaN".into()));
        }
        if x < 0.0 {
            return Ok(0.0);
        }
        if x == 0.0 {
            return Ok(match self.family {
                DistFamily::Lognormal => 0.0,
                DistFamily::Weibull | DistFamily::Gamma if c < 1.0 => f64::INFINITY,
                DistFamily::Weibull | DistFamily::Gamma if c == 1.0 => 1.0 / d,
                _ => 0.0,
            });
        }
        Ok(log_density_grad(self.family, x, c, d).0.exp())
    }

    /// log f(x | z) and its gradient with respect to (ϑ1, ϑ2), written to
    /// `grad` (length 2(2 + 3L)).
    pub fn log_density_grad(&self, x: f64, z: f64, grad: &mut [f64]) -> Result<f64> {
        let len = 2 + 3 * self.order;
        if grad.len() != 2 * len {
            return Err(Error::Input(format!(
                "gradient buffer has length {}, expected {}",
                grad.len(),
                2 * len
            )));
        }
        let (g1, g2) = grad.split_at_mut(len);
        let c = fourier(&self.theta1, self.order, self.trend, z, Some(&mut *g1));
        let d = fourier(&self.theta2, self.order, self.trend, z, Some(&mut *g2));
        let (v, dc, dd) = log_density_grad(self.family, x, c, d);
        if !v.is_finite() {
            return Err(Error::Domain(format!("log density not finite at x = {x}, z = {z}")));
        }
        g1.iter_mut().for_each(|g| *g *= dc);
        g2.iter_mut().for_each(|g| *g *= dd);
        Ok(v)
    }

    pub fn log_density(&self, x: f64, z: f64) -> Result<f64> {
        let (c, d) = self.params_at(z)?;
        if !(x > 0.0) {
            return Err(Error::Domain(format!("log density needs x > 0, got {x}")));
        }
        Ok(log_density_grad(self.family, x, c, d).0)
    }

    pub fn cdf(&self, x: f64, z: f64) -> Result<f64> {
        let (c, d) = self.params_at(z)?;
        if x.is_nan() {
            return Err(Error::Domain("cdf at NaN".into()));
        }
        if x <= 0.0 {
            return Ok(0.0);
        }
        Ok(match self.family {
            DistFamily::Lognormal => std_normal_cdf((x.ln() - c) / d),
            DistFamily::Weibull => -(-(x / d).powf(c)).exp_m1(),
            DistFamily::Gamma => {
                if x.is_infinite() {
                    1.0
                } else {
                    gamma_lr(c, x / d)
                }
            }
        })
    }

    pub fn quantile(&self, u: f64, z: f64) -> Result<f64> {
        let (c, d) = self.params_at(z)?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level {u} is outside (0, 1)")));
        }
        Ok(match self.family {
            DistFamily::Lognormal => (c + d * std_normal_quantile(u)).exp(),
            DistFamily::Weibull => d * (-(-u).ln_1p()).powf(1.0 / c),
            DistFamily::Gamma => gamma_quantile(c, d, u),
        })
    }

    pub fn mean(&self, z: f64) -> Result<f64> {
        let (c, d) = self.params_at(z)?;
        Ok(match self.family {
            DistFamily::Lognormal => (c + 0.5 * d * d).exp(),
            DistFamily::Weibull => d * ln_gamma(1.0 + 1.0 / c).exp(),
            DistFamily::Gamma => c * d,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> Result<f64> {
        let (c, d) = self.params_at(z)?;
        let bad = |e: String| Error::Parameter(format!("cannot sample at z = {z}: {e}"));
        Ok(match self.family {
            DistFamily::Lognormal => LogNormal::new(c, d).map_err(|e| bad(e.to_string()))?.sample(rng),
            DistFamily::Weibull => Weibull::new(d, c).map_err(|e| bad(e.to_string()))?.sample(rng),
            DistFamily::Gamma => Gamma::new(c, d).map_err(|e| bad(e.to_string()))?.sample(rng),
        })
    }

    fn free_mask(&self) -> Vec<bool> {
        let len = 2 + 3 * self.order;
        let one = (0..len)
            .map(|j| !(j == 1 && !self.trend) && !(self.xi_fixed && j >= 2 && (j - 2) % 3 == 1))
            .collect::<Vec<_>>();
        one.iter().chain(one.iter()).copied().collect()
    }

    fn component_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for p in ["c", "d"] {
            names.push(format!("{p}.alpha"));
            names.push(format!("{p}.beta"));
            for l in 1..=self.order {
                names.push(format!("{p}.delta{l}"));
                names.push(format!("{p}.xi{l}"));
                names.push(format!("{p}.gamma{l}"));
            }
        }
        names
    }

    fn with_packed(&self, x: &[f64]) -> CondDistModel {
        let len = 2 + 3 * self.order;
        CondDistModel {
            theta1: x[..len].to_vec(),
            theta2: x[len..].to_vec(),
            ..self.clone()
        }
    }

    fn packed(&self) -> Vec<f64> {
        self.theta1.iter().chain(&self.theta2).copied().collect()
    }
}

fn gamma_quantile(shape: f64, scale: f64, u: f64) -> f64 {
    let cdf = |x: f64| gamma_lr(shape, x / scale);
    let mut lo = 0.0;
    let mut hi = shape * scale;
    while cdf(hi) < u {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..300 {
        let f = cdf(x) - u;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = ((shape - 1.0) * (x / scale).ln() - x / scale - ln_gamma(shape)).exp() / scale;
        let newton = x - f / dens;
        x = if newton > lo && newton < hi && dens.is_finite() && dens > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-12 || (f.abs() < 1e-15 && (newton - x).abs() <= 1e-12) {
            break;
        }
    }
    x
}

/// Result of [`pit_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pit {
    pub values: Vec<f64>,
    /// How many CDF values had to be clamped away from 0 or 1.
    pub clamped: usize,
}

/// Φ⁻¹(F(valueᵢ | zᵢ)) for each observation.
pub fn pit_transform(m: &CondDistModel, observations: &[(f64, f64)]) -> Result<Pit> {
    let mut clamped = 0;
    let mut values = Vec::with_capacity(observations.len());
    for &(z, x) in observations {
        let mut u = m.cdf(x, z)?;
        if !(PIT_CLAMP..=1.0 - PIT_CLAMP).contains(&u) {
            clamped += 1;
            u = u.clamp(PIT_CLAMP, 1.0 - PIT_CLAMP);
        }
        values.push(std_normal_quantile(u));
    }
    if clamped > 0 {
        log::warn!("pit_transform clamped {clamped} CDF values");
    }
    Ok(Pit { values, clamped })
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CondFitOptions {
    pub optim: OptimOptions,
    /// Estimate the frequencies ξ (multistart) instead of fixing ξₗ = ℓ.
    pub free_xi: bool,
    /// Extra z-range, usually the prediction window (a, b], on which c and d
    /// must stay admissible.
    pub constraint_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondDistFit {
    pub model: CondDistModel,
    pub result: FitResult,
}

fn log_moment_estimates(family: DistFamily, xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    match family {
        DistFamily::Lognormal | DistFamily::Weibull => {
            let m = xs.iter().map(|x| x.ln()).sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x.ln() - m).powi(2)).sum::<f64>() / n).sqrt();
            if family == DistFamily::Lognormal {
                (m, sd)
            } else {
                let k = PI / (sd * 6.0_f64.sqrt());
                (k, (m + EULER_GAMMA / k).exp())
            }
        }
        DistFamily::Gamma => {
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            (m * m / var, var / m)
        }
    }
}

/// Keeps (c, d) strictly inside the family's domain for degenerate samples.
fn floor_estimates(family: DistFamily, (c, d): (f64, f64), xs: &[f64]) -> (f64, f64) {
    let spread_floor = 1e-3;
    match family {
        DistFamily::Lognormal => (
            c,
            if d.is_finite() && d > spread_floor {
                d
            } else {
                spread_floor
            },
        ),
        _ if c.is_finite() && d.is_finite() && c > 0.0 && d > 0.0 && c < 1e3 => (c, d),
        _ => {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            match family {
                // Shape 1e3 is a very concentrated but admissible start.
                DistFamily::Weibull => (1e3, m),
                _ => (1e3, m / 1e3),
            }
        }
    }
}

/// Weekly-binned log-moment estimates, then least squares on the Fourier basis.
fn initial_model(template: &CondDistModel, observations: &[(f64, f64)], check_z: &[f64]) -> CondDistModel {
    let family = template.family;
    let xs: Vec<f64> = observations.iter().map(|o| o.1).collect();
    let global = floor_estimates(family, log_moment_estimates(family, &xs), &xs);
    let constant = template.with_packed(
        &[
            CondDistModel::harmonic_layout(template.order, global.0, 0.0),
            CondDistModel::harmonic_layout(template.order, global.1, 0.0),
        ]
        .concat(),
    );

    let mut bins: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
    for &(z, x) in observations {
        bins.entry((z / WEEK_DAYS).floor() as i64).or_default().push(x);
    }
    let mut zs = Vec::new();
    let mut cs = Vec::new();
    let mut ds = Vec::new();
    for (week, values) in &bins {
        if values.len() < 2 {
            continue;
        }
        let (c, d) = log_moment_estimates(family, values);
        if c.is_finite() && d.is_finite() && d > 0.0 && (!family.c_positive() || c > 0.0) {
            zs.push((*week as f64 + 0.5) * WEEK_DAYS);
            cs.push(c);
            ds.push(d);
        }
    }

    let free = constant.free_mask();
    let len = 2 + 3 * template.order;
    let cols: Vec<usize> = (0..len).filter(|&j| free[j]).collect();
    if zs.len() < 2 * cols.len() {
        return constant;
    }
    let basis = |z: f64| {
        let mut g = vec![0.0; len];
        fourier(&constant.theta1, template.order, template.trend, z, Some(&mut g));
        g
    };
    let x = DMatrix::from_fn(zs.len(), cols.len(), |r, c| basis(zs[r])[cols[c]]);
    let svd = x.svd(true, true);
    let solve = |y: &[f64]| -> Option<Vec<f64>> {
        let b = svd.solve(&DVector::from_column_slice(y), 1e-12).ok()?;
        let mut theta = CondDistModel::harmonic_layout(template.order, 0.0, 0.0);
        for (k, &j) in cols.iter().enumerate() {
            theta[j] = b[k];
        }
        theta.iter().all(|v| v.is_finite()).then_some(theta)
    };
    match (solve(&cs), solve(&ds)) {
        (Some(t1), Some(t2)) => {
            let m = template.with_packed(&[t1, t2].concat());
            if check_z.iter().all(|&z| m.feasible_at(z)) {
                m
            } else {
                constant
            }
        }
        _ => constant,
    }
}

fn constraint_points(observations: &[(f64, f64)], range: Option<(f64, f64)>) -> Vec<f64> {
    let mut zs: Vec<f64> = observations.iter().map(|o| o.0).collect();
    zs.sort_by(f64::total_cmp);
    zs.dedup();
    if let Some((lo, hi)) = range {
        let n = 200;
        zs.extend((0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64));
    }
    zs
}

/// Maximum likelihood fit of a conditional distribution to (z, value) pairs.
pub fn fit(
    observations: &[(f64, f64)],
    family: DistFamily,
    order: usize,
    trend: bool,
    init: Option<&CondDistModel>,
    opts: &CondFitOptions,
) -> Result<CondDistFit> {
    let min_obs = 10.max(3 * (2 + 3 * order));
    if observations.len() < min_obs {
        return Err(Error::Input(format!(
            "need at least {min_obs} observations for L = {order}, got {}",
            observations.len()
        )));
    }
    if let Some(&(z, x)) = observations
        .iter()
        .find(|(z, x)| !(*x > 0.0) || !x.is_finite() || !z.is_finite())
    {
        return Err(Error::Input(format!(
            "observation ({z}, {x}) must have a finite positive value"
        )));
    }
    let mut template = CondDistModel::new(
        family,
        order,
        trend,
        CondDistModel::harmonic_layout(order, 0.0, 0.0),
        CondDistModel::harmonic_layout(order, 0.0, 0.0),
    )?;
    template.xi_fixed = !opts.free_xi;
    let check_z = constraint_points(observations, opts.constraint_range);

    let start = match init {
        Some(m) => {
            if m.family != family || m.order != order || m.trend != trend {
                return Err(Error::Initialization(
                    "initial model does not match the requested layout".into(),
                ));
            }
            let mut m = m.clone();
            m.xi_fixed = template.xi_fixed;
            m
        }
        None => initial_model(&template, observations, &check_z),
    };
    if let Some(&z) = check_z.iter().find(|&&z| !start.feasible_at(z)) {
        return Err(Error::Initialization(format!(
            "starting parameters violate the positivity constraints at z = {z}"
        )));
    }

    let len = 2 + 3 * order;
    let negloglik = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let m = start.with_packed(x);
        for &z in &check_z {
            m.params_at(z)?;
        }
        let mut total = 0.0;
        let mut grad = vec![0.0; 2 * len];
        let mut g = vec![0.0; 2 * len];
        for &(z, value) in observations {
            total -= m.log_density_grad(value, z, &mut g)?;
            for (acc, gj) in grad.iter_mut().zip(&g) {
                *acc -= gj;
            }
        }
        Ok((total, grad))
    };

    let zmax = observations.iter().map(|o| o.0.abs()).fold(WEEK_DAYS, f64::max);
    let transforms: Vec<Transform> = (0..2 * len)
        .map(|j| {
            if j % len == 1 {
                Transform::Scale(zmax / WEEK_DAYS)
            } else {
                Transform::Identity
            }
        })
        .collect();
    let mask = start.free_mask();
    let fixed: Vec<bool> = mask.iter().map(|f| !f).collect();
    let n = observations.len() as f64;

    let starts: Vec<Vec<f64>> = if opts.free_xi && order > 0 {
        [0.0, 0.25, -0.25, 0.125, -0.125]
            .iter()
            .map(|off| {
                let mut x = start.packed();
                for half in 0..2 {
                    for l in 0..order {
                        x[half * len + 3 + 3 * l] += off;
                    }
                }
                x
            })
            .collect()
    } else {
        vec![start.packed()]
    };

    let mut best = None;
    let mut last_err = None;
    for x0 in &starts {
        if negloglik(x0).is_err() {
            continue;
        }
        match maximize(negloglik, &transforms, x0, &fixed, n, None, &opts.optim) {
            Ok(out) => {
                if best
                    .as_ref()
                    .is_none_or(|b: &crate::poisson_fit::MleOutcome| out.loglik > b.loglik)
                {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let outcome = match (best, last_err) {
        (Some(o), _) => o,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(Error::Initialization("no feasible starting point".into())),
    };

    let model = start.with_packed(&outcome.x);
    let free: Vec<usize> = (0..2 * len).filter(|&j| mask[j]).collect();
    let names = model.component_names();
    let mut warnings = outcome.warnings;
    let full_info = observed_information(&negloglik, &outcome.x);
    let information = match full_info {
        Some(h) => DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]),
        None => {
            warnings.push("observed information unavailable near the constraint boundary".into());
            DMatrix::from_element(free.len(), free.len(), f64::NAN)
        }
    };
    let std_errors = if information.iter().all(|v| v.is_finite()) {
        standard_errors(&information)
    } else {
        None
    };
    if std_errors.is_none() {
        warnings.push("information matrix is singular; standard errors unavailable".into());
    }
    let eigenvalues = if information.iter().all(|v| v.is_finite()) {
        sorted_eigenvalues(&information)
    } else {
        Vec::new()
    };
    let result = FitResult {
        param_names: free.iter().map(|&j| names[j].clone()).collect(),
        estimate: free.iter().map(|&j| outcome.x[j]).collect(),
        std_errors,
        loglik: outcome.loglik,
        information: matrix_rows(&information),
        information_kind: InformationKind::Observed,
        eigenvalues,
        converged: outcome.converged,
        iterations: outcome.iterations,
        gradient_norm: outcome.gradient_norm,
        warnings,
    };
    Ok(CondDistFit { model, result })
}
