//! Adaptive Gauss–Kronrod quadrature (21-point Kronrod rule embedding the
//! 10-point Gauss rule) with global bisection of the worst interval.
//!
//! Integrands may be vector valued; the error estimate of an interval is the
//! largest component error, and convergence is judged against the sup-norm of
//! the running integral.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_745_957_917,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Stopping rule for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_subdivisions: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-12,
            rel: 1e-9,
            max_subdivisions: 2000,
        }
    }
}

impl Tolerance {
    pub fn with_rel(rel: f64) -> Self {
        Tolerance {
            rel,
            ..Tolerance::default()
        }
    }
}

/// Best-effort result of an adaptive integration.
#[derive(Debug, Clone)]
pub struct Integral {
    pub value: Vec<f64>,
    pub abs_error: f64,
    pub converged: bool,
    pub evaluations: usize,
}

struct Segment {
    lo: f64,
    hi: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        let min_err = 50.0 * f64::EPSILON * res_abs;
        if min_err > scaled {
            scaled = min_err;
        }
    }
    scaled
}

/// One 21-point Kronrod panel on [lo, hi].
fn kronrod_panel<F>(f: &mut F, dim: usize, lo: f64, hi: f64, buf: &mut [f64]) -> Result<Segment>
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut res_abs = vec![0.0; dim];
    let mut fvals = vec![0.0; dim * 21];

    let mut eval = |x: f64, slot: usize, buf: &mut [f64]| -> Result<()> {
        buf.iter_mut().for_each(|v| *v = 0.0);
        f(x, buf);
        for (k, v) in buf.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numerical(
                    format!("integrand is not finite at x = {x}"),
                    f64::INFINITY,
                ));
            }
            fvals[slot * dim + k] = *v;
        }
        Ok(())
    };

    eval(center, 20, buf)?;
    for j in 0..10 {
        let dx = half * XGK[j];
        eval(center - dx, 2 * j, buf)?;
        eval(center + dx, 2 * j + 1, buf)?;
    }

    for k in 0..dim {
        let fc = fvals[20 * dim + k];
        let mut rk = WGK[10] * fc;
        let mut rg = 0.0;
        let mut ra = WGK[10] * fc.abs();
        for j in 0..10 {
            let f1 = fvals[2 * j * dim + k];
            let f2 = fvals[(2 * j + 1) * dim + k];
            rk += WGK[j] * (f1 + f2);
            ra += WGK[j] * (f1.abs() + f2.abs());
            if j % 2 == 1 {
                rg += WG[j / 2] * (f1 + f2);
            }
        }
        kronrod[k] = rk;
        gauss[k] = rg;
        res_abs[k] = ra;
    }

    let mut error: f64 = 0.0;
    for k in 0..dim {
        let mean = 0.5 * kronrod[k];
        let fc = fvals[20 * dim + k];
        let mut asc = WGK[10] * (fc - mean).abs();
        for j in 0..10 {
            asc += WGK[j] * ((fvals[2 * j * dim + k] - mean).abs() + (fvals[(2 * j + 1) * dim + k] - mean).abs());
        }
        let e = rescale_error(
            (kronrod[k] - gauss[k]) * half,
            res_abs[k] * half.abs(),
            asc * half.abs(),
        );
        error = error.max(e);
    }

    Ok(Segment {
        lo,
        hi,
        value: kronrod.iter().map(|v| v * half).collect(),
        error,
    })
}

/// Vector-valued adaptive integration over [a, b], optionally split at
/// interior break points first. Returns the best estimate even when the
/// tolerance was not met.
pub fn integrate_adaptive<F>(mut f: F, dim: usize, a: f64, b: f64, breaks: &[f64], tol: Tolerance) -> Result<Integral>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!(
            "integration limits must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(Integral {
            value: vec![0.0; dim],
            abs_error: 0.0,
            converged: true,
            evaluations: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };

    let mut nodes = vec![lo];
    let mut inner: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > lo && *x < hi)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    nodes.extend(inner);
    nodes.push(hi);

    let mut buf = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in nodes.windows(2) {
        heap.push(kronrod_panel(&mut f, dim, w[0], w[1], &mut buf)?);
        evaluations += 21;
    }

    let total = |heap: &BinaryHeap<Segment>| -> (Vec<f64>, f64) {
        let mut value = vec![0.0; dim];
        let mut err = 0.0;
        for s in heap.iter() {
            for (v, x) in value.iter_mut().zip(&s.value) {
                *v += x;
            }
            err += s.error;
        }
        (value, err)
    };

    let mut subdivisions = heap.len();
    loop {
        let (value, err) = total(&heap);
        let scale = value.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let target = tol.abs.max(tol.rel * scale);
        if err <= target {
            return Ok(Integral {
                value: value.into_iter().map(|v| sign * v).collect(),
                abs_error: err,
                converged: true,
                evaluations,
            });
        }
        if subdivisions >= tol.max_subdivisions {
            return Ok(Integral {
                value: value.into_iter().map(|v| sign * v).collect(),
                abs_error: err,
                converged: false,
                evaluations,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // Interval can no longer be split in floating point.
            heap.push(worst);
            let (value, err) = total(&heap);
            return Ok(Integral {
                value: value.into_iter().map(|v| sign * v).collect(),
                abs_error: err,
                converged: false,
                evaluations,
            });
        }
        heap.push(kronrod_panel(&mut f, dim, worst.lo, mid, &mut buf)?);
        heap.push(kronrod_panel(&mut f, dim, mid, worst.hi, &mut buf)?);
        evaluations += 42;
        subdivisions += 1;
    }
}

fn require_converged(integral: Integral, what: &str) -> Result<Integral> {
    if integral.converged {
        Ok(integral)
    } else {
        Err(Error::numerical(
            format!("{what}: adaptive quadrature did not converge"),
            integral.abs_error,
        ))
    }
}

/// Scalar integral over [a, b]; fails with the achieved error when the
/// tolerance cannot be met.
pub fn integrate<F>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate_adaptive(|x, out| out[0] = f(x), 1, a, b, &[], tol)?;
    Ok(require_converged(r, "integral")?.value[0])
}

/// Scalar integral over [a, b] with the interval pre-split at `breaks`.
pub fn integrate_with_breaks<F>(mut f: F, a: f64, b: f64, breaks: &[f64], tol: Tolerance) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate_adaptive(|x, out| out[0] = f(x), 1, a, b, breaks, tol)?;
    Ok(require_converged(r, "integral")?.value[0])
}

/// Vector integral over [a, b].
pub fn integrate_vec<F>(f: F, dim: usize, a: f64, b: f64, tol: Tolerance) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    let r = integrate_adaptive(f, dim, a, b, &[], tol)?;
    Ok(require_converged(r, "vector integral")?.value)
}

/// Integral over [a, ∞) through the substitution x = a + s / (1 − s).
pub fn integrate_semi_infinite<F>(mut f: F, a: f64, tol: Tolerance) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let g = |s: f64, out: &mut [f64]| {
        let one_minus = 1.0 - s;
        let x = a + s / one_minus;
        let v = f(x);
        out[0] = if v == 0.0 { 0.0 } else { v / (one_minus * one_minus) };
    };
    let r = integrate_adaptive(g, 1, 0.0, 1.0, &[], tol)?;
    Ok(require_converged(r, "semi-infinite integral")?.value[0])
}
