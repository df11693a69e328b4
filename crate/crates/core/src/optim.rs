//! BFGS minimizer with Armijo backtracking and a short Newton polish.
//!
//! Objectives report infeasible points by returning a non-finite value; the
//! line search treats those as a wall and backtracks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Converged once the gradient sup-norm drops to this level.
    pub gradient_tol: f64,
    /// Stop iterating once successive objective values agree to this relative level.
    pub rel_change_tol: f64,
    /// Largest sup-norm step tried by the line search.
    pub max_step: f64,
    pub polish_steps: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 500,
            gradient_tol: 1e-8,
            rel_change_tol: 1e-12,
            max_step: 5.0,
            polish_steps: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    ObjectiveStalled,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the objective and writes its gradient.
pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    inv_hessian0: Option<DMatrix<f64>>,
    opts: &OptimOptions,
) -> Result<OptimOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Initialization(
            "objective is not finite at the starting point".into(),
        ));
    }
    if n == 0 {
        return Ok(OptimOutcome {
            x,
            value: fx,
            gradient: g,
            iterations: 0,
            converged: true,
            reason: StopReason::GradientTolerance,
        });
    }

    let supplied_h0 = inv_hessian0.is_some();
    let mut h = inv_hessian0.unwrap_or_else(|| DMatrix::identity(n, n));
    let mut first_update = !supplied_h0;
    let mut reason = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    while iterations < opts.max_iter {
        if sup_norm(&g) <= opts.gradient_tol {
            reason = StopReason::GradientTolerance;
            break;
        }
        iterations += 1;

        let gv = DVector::from_column_slice(&g);
        let mut d = -(&h * &gv);
        let mut slope = gv.dot(&d);
        if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
            h = DMatrix::identity(n, n);
            d = -gv.clone();
            slope = gv.dot(&d);
        }

        let d_norm = d.amax();
        let mut alpha = if d_norm > opts.max_step {
            opts.max_step / d_norm
        } else {
            1.0
        };
        let mut accepted = false;
        let mut f_new = f64::INFINITY;
        for _ in 0..80 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && g_new.iter().all(|v| v.is_finite()) && f_new <= fx + 1e-4 * alpha * slope {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if h != DMatrix::identity(n, n) {
                // Retry once with a steepest-descent direction before giving up.
                h = DMatrix::identity(n, n);
                first_update = true;
                continue;
            }
            reason = StopReason::LineSearchFailed;
            break;
        }

        let s = DVector::from_iterator(n, (0..n).map(|i| x_new[i] - x[i]));
        let y = DVector::from_iterator(n, (0..n).map(|i| g_new[i] - g[i]));
        let sy = s.dot(&y);
        let rel_change = (f_new - fx).abs() / fx.abs().max(f64::MIN_POSITIVE);

        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;

        if sy > 1e-12 * s.norm() * y.norm() {
            if first_update {
                let yy = y.dot(&y);
                h = DMatrix::identity(n, n) * (sy / yy);
                first_update = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded.
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }

        if rel_change <= opts.rel_change_tol {
            reason = StopReason::ObjectiveStalled;
            break;
        }
    }

    polish(&mut f, &mut x, &mut fx, &mut g, opts);

    let converged = sup_norm(&g) <= opts.gradient_tol;
    if converged && reason != StopReason::GradientTolerance {
        reason = StopReason::GradientTolerance;
    }
    Ok(OptimOutcome {
        x,
        value: fx,
        gradient: g,
        iterations,
        converged,
        reason,
    })
}

/// Central-difference Jacobian of the gradient (a Hessian estimate).
pub(crate) fn gradient_jacobian<F>(f: &mut F, x: &[f64]) -> Option<DMatrix<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let fp = f(&xp, &mut gp);
        xp[j] = x[j] - step;
        let fm = f(&xp, &mut gm);
        xp[j] = x[j];
        if !fp.is_finite() || !fm.is_finite() {
            return None;
        }
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Some((&hess + hess.transpose()) * 0.5)
}

fn polish<F>(f: &mut F, x: &mut Vec<f64>, fx: &mut f64, g: &mut Vec<f64>, opts: &OptimOptions)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g_try = vec![0.0; n];
    for _ in 0..opts.polish_steps {
        let g_norm = sup_norm(g);
        if g_norm == 0.0 {
            return;
        }
        let Some(hess) = gradient_jacobian(f, x) else {
            return;
        };
        let Some(chol) = hess.cholesky() else {
            return;
        };
        let step = chol.solve(&DVector::from_column_slice(g));
        if sup_norm(step.as_slice()) > opts.max_step {
            return;
        }
        let x_try: Vec<f64> = (0..n).map(|i| x[i] - step[i]).collect();
        let f_try = f(&x_try, &mut g_try);
        let slack = 1e-10 * fx.abs().max(1.0);
        if f_try.is_finite() && f_try <= *fx + slack && sup_norm(&g_try) < g_norm {
            x.copy_from_slice(&x_try);
            g.copy_from_slice(&g_try);
            *fx = f_try;
        } else {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn solves_rosenbrock() {
        let out = minimize(rosenbrock, &[-1.2, 1.0], None, &OptimOptions::default()).unwrap();
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 1.0).abs() < 1e-8);
        assert!((out.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn respects_infeasible_wall() {
        // minimize (x − 2)² on x > 0.5, started at 1: unconstrained optimum is feasible.
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] <= 0.5 {
                return f64::INFINITY;
            }
            g[0] = 2.0 * (x[0] - 2.0);
            (x[0] - 2.0).powi(2)
        };
        let out = minimize(f, &[1.0], None, &OptimOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_start_is_an_error() {
        let f = |_: &[f64], _: &mut [f64]| f64::NAN;
        assert!(matches!(
            minimize(f, &[0.0], None, &OptimOptions::default()),
            Err(Error::Initialization(_))
        ));
    }

    #[test]
    fn badly_scaled_quadratic_with_preconditioner() {
        let scales = [1.0, 1e6];
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = scales[0] * (x[0] - 1.0);
            g[1] = scales[1] * (x[1] + 2.0);
            0.5 * scales[0] * (x[0] - 1.0).powi(2) + 0.5 * scales[1] * (x[1] + 2.0).powi(2)
        };
        let h0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-6]));
        let out = minimize(f, &[0.0, 0.0], Some(h0), &OptimOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[1] + 2.0).abs() < 1e-12);
    }
}
