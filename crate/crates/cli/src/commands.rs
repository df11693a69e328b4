use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use microreserve::claims_data::{load_csv, save_csv, Portfolio};
use microreserve::cond_dist::{self, CondDistModel, CondFitOptions};
use microreserve::diagnostics::{self, CorrelationCell};
use microreserve::forecast;
use microreserve::intensity::{IntensityModel, MarkIntensityModel};
use microreserve::poisson_fit::{self, FitOptions};
use microreserve::rng::RngStream;
use microreserve::simulate::sample_marked;
use microreserve::synth::{self, GroundTruth};

use crate::config::{self, Bundle, DistSpec, FitConfig, Fitted, SCHEMA_VERSION};
use crate::{CliError, Outcome};

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(microreserve::Error::from)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn read_file(path: &Path) -> Result<(), CliError> {
    fs::metadata(path)
        .map(|_| ())
        .map_err(|e| CliError::io(format!("reading {}", path.display()), e))
}

/// Loads claims and aligns them with horizon `a`, truncating later information.
fn load_portfolio(path: &Path, origin: NaiveDate, a: Option<f64>) -> Result<Portfolio, CliError> {
    read_file(path)?;
    let p = load_csv(path, origin, None)?;
    Ok(match a {
        Some(a) if p.horizon() > a => {
            log::warn!("data extend past the horizon {a}; later events are ignored");
            p.truncate(a)
        }
        Some(a) => p.with_horizon(a)?,
        None => p,
    })
}

fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(CliError::Config(format!("grid step {step} must be positive")));
    }
    let n = ((hi - lo) / step).floor().max(0.0) as usize;
    let mut g: Vec<f64> = (0..=n).map(|k| lo + k as f64 * step).collect();
    if hi - g[n] > 1e-9 * step {
        g.push(hi);
    }
    Ok(g)
}

fn fit_dist(
    spec: &DistSpec,
    key: &str,
    obs: &[(f64, f64)],
    admissible: Option<(f64, f64)>,
    cfg: &FitConfig,
) -> Result<Fitted<CondDistModel>, CliError> {
    if let Some(m) = &spec.fixed {
        return Ok(Fitted {
            model: m.clone(),
            fit: None,
        });
    }
    let opts = CondFitOptions {
        optim: cfg.optim.options(),
        free_xi: spec.free_xi,
        constraint_range: admissible,
    };
    let f = cond_dist::fit(obs, spec.family(key)?, spec.order, spec.trend, None, &opts)?;
    Ok(Fitted {
        model: f.model,
        fit: Some(f.result),
    })
}

pub fn fit(config_path: &Path, data: &Path, out: &Path) -> Result<Outcome, CliError> {
    let cfg = config::load_config(config_path)?;
    let origin = cfg.origin_date.unwrap_or_else(synth::default_origin);
    let p = load_portfolio(data, origin, cfg.horizon)?;
    let a = p.horizon();
    let admissible = cfg.admissible_until.filter(|&u| u > a).map(|u| (a, u));
    let mut warnings = Vec::new();
    log::info!("fitting {} claims observed up to day {a}", p.len());

    let fam = cfg.reporting.family()?;
    let init = match &cfg.reporting.init {
        Some(x) => x.clone(),
        None => poisson_fit::default_init_reporting(&p, fam)?,
    };
    let opts = FitOptions {
        optim: cfg.optim.options(),
        period_grid: cfg.reporting.period_grid.clone(),
    };
    let template = IntensityModel::new(fam, init.clone())?;
    let rf = poisson_fit::fit_reporting(&p, &template, Some(&init), &opts)?;
    let reporting = Fitted {
        model: template.with_params(rf.estimate.clone())?,
        fit: Some(rf),
    };

    let mut delays = Vec::with_capacity(p.len());
    for r in p.records() {
        let w = r.reporting_delay();
        if w > 0.0 {
            delays.push((r.reporting_time, w));
        }
    }
    if delays.len() < p.len() {
        let msg = format!(
            "delay: {} claims with zero delay left out of the delay fit",
            p.len() - delays.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let delay = fit_dist(&cfg.delay, "delay", &delays, admissible, &cfg)?;

    let mfam = cfg.mark.family()?;
    let minit = match &cfg.mark.init {
        Some(x) => x.clone(),
        None => poisson_fit::default_init_marks(&p, mfam)?,
    };
    let mtemplate = MarkIntensityModel::new(mfam, minit.clone())?;
    let mf = poisson_fit::fit_marks(
        &p,
        &mtemplate,
        Some(&minit),
        &FitOptions {
            period_grid: None,
            ..opts
        },
    )?;
    let mark = Fitted {
        model: mtemplate.with_params(mf.estimate.clone())?,
        fit: Some(mf),
    };

    let amounts_obs: Vec<(f64, f64)> = p
        .records()
        .iter()
        .flat_map(|r| r.payments.iter().map(move |x| (r.reporting_time, x.amount)))
        .collect();
    let amounts = fit_dist(&cfg.amounts, "amounts", &amounts_obs, admissible, &cfg)?;

    let bundle = Bundle {
        version: SCHEMA_VERSION,
        origin_date: origin,
        horizon: a,
        reporting,
        delay,
        mark,
        amounts,
        warnings,
    };
    write_json(&bundle, out)?;
    Ok(if bundle.converged() {
        Outcome::Success
    } else {
        Outcome::PartialConvergence
    })
}

pub fn predict(
    bundle: &Path,
    data: &Path,
    until: f64,
    sims: usize,
    seed: u64,
    out: &Path,
) -> Result<Outcome, CliError> {
    let b = config::load_bundle(bundle)?;
    if !(until > b.horizon) {
        return Err(CliError::Config(format!(
            "--until {until} must exceed the data horizon {}",
            b.horizon
        )));
    }
    let p = load_portfolio(data, b.origin_date, Some(b.horizon))?;
    let dist = forecast::predict_total(
        &p,
        &b.reporting.model,
        &b.mark.model,
        &b.amounts.model,
        until,
        sims,
        &RngStream::new(seed),
    )?;
    write_json(&dist, out)?;
    Ok(Outcome::Success)
}

fn parse_bins(spec: &str, b: &Bundle) -> Result<Vec<(f64, f64)>, CliError> {
    if spec == "quarters" {
        return Ok(diagnostics::calendar_quarters(b.origin_date, 0.0, b.horizon)
            .into_iter()
            .map(|q| (q.lo.max(0.0), q.hi.min(b.horizon)))
            .filter(|(lo, hi)| lo < hi)
            .collect());
    }
    let bad = || CliError::Config(format!("--bins '{spec}': expected 'quarters' or 'lo:hi:width'"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [lo, hi, width] = parts[..] else { return Err(bad()) };
    if !(lo < hi) {
        return Err(bad());
    }
    let edges = grid(lo, hi, width)?;
    Ok(edges.windows(2).map(|w| (w[0], w[1])).collect())
}

pub fn backpredict(bundle: &Path, bins: &str, grid_step: f64, out: &Path) -> Result<Outcome, CliError> {
    let b = config::load_bundle(bundle)?;
    let bins = parse_bins(bins, &b)?;
    let g = grid(0.0, b.horizon, grid_step)?;
    let mu = forecast::occurrence_intensity(&b.reporting.model, &b.delay.model, &g, b.horizon)?;
    let counts = forecast::backpredict_counts(&b.reporting.model, &b.delay.model, &bins, b.horizon)?;
    forecast::write_intensity_csv(&mu, create(&out.join("occurrence_intensity.csv"))?)?;
    forecast::write_bins_csv(&counts, create(&out.join("bin_counts.csv"))?)?;
    Ok(Outcome::Success)
}

pub fn simulate(bundle: &Path, data: Option<&Path>, window: f64, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let b = config::load_bundle(bundle)?;
    if !(window > b.horizon) {
        return Err(CliError::Config(format!(
            "--window {window} must exceed the data horizon {}",
            b.horizon
        )));
    }
    let p = match data {
        Some(d) => load_portfolio(d, b.origin_date, Some(b.horizon))?,
        None => Portfolio::empty(b.horizon, b.origin_date),
    };
    // Replicate 0 of `predict` with the same seed.
    let stream = RngStream::new(seed).replicate(0);
    let draw = sample_marked(&b.reporting.model, &b.mark.model, &b.amounts.model, &p, window, &stream)?;
    let records = draw.to_records(&p, Some(&b.delay.model), &stream)?;
    save_csv(&Portfolio::new(records, window, b.origin_date)?, out)?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct DiagnosticsSummary {
    horizon: f64,
    max_standardized_deviation: Option<f64>,
    pit_clamped: usize,
    correlations: Vec<CorrelationCell>,
}

pub fn diagnose(
    bundle: &Path,
    data: &Path,
    out: &Path,
    grid_step: f64,
    extend: f64,
    max_payments: usize,
) -> Result<Outcome, CliError> {
    let b = config::load_bundle(bundle)?;
    let p = load_portfolio(data, b.origin_date, Some(b.horizon))?;
    let a = p.horizon();
    let series =
        diagnostics::intensity_fit_series(&p, &b.reporting.model, &grid(0.0, a + extend.max(0.0), grid_step)?)?;
    let quarters = diagnostics::calendar_quarters(b.origin_date, 0.0, a);
    let backtest = diagnostics::quarterly_delay_backtest(&p, &b.delay.model, &quarters)?;
    let independence = diagnostics::independence_grid(&p, &b.delay.model, &b.amounts.model, max_payments)?;

    diagnostics::write_fit_series_csv(&series, create(&out.join("intensity_fit.csv"))?)?;
    diagnostics::write_backtest_csv(&backtest, create(&out.join("delay_backtest.csv"))?)?;
    diagnostics::write_independence_samples_csv(&independence, create(&out.join("independence.csv"))?)?;
    let summary = DiagnosticsSummary {
        horizon: a,
        max_standardized_deviation: diagnostics::standardized_max_deviation(&series, b.reporting.model.cumulative(a)?),
        pit_clamped: independence.clamped,
        correlations: independence.cells,
    };
    write_json(&summary, &out.join("diagnostics.json"))?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct Holdout {
    window: (f64, f64),
    realized_total: f64,
}

pub fn synth(
    spec: &Path,
    out: &Path,
    seed: Option<u64>,
    holdout: Option<(f64, std::path::PathBuf)>,
) -> Result<Outcome, CliError> {
    let mut gt: GroundTruth = config::read_json(spec, "ground-truth spec")?;
    if let Some(s) = seed {
        gt.seed = s;
    }
    let portfolio = match holdout {
        Some((b, path)) => {
            let (p, total) = synth::generate_holdout(&gt, b)?;
            write_json(
                &Holdout {
                    window: (gt.horizon_a, b),
                    realized_total: total,
                },
                &path,
            )?;
            p
        }
        None => synth::generate(&gt)?,
    };
    save_csv(&portfolio, out)?;
    Ok(Outcome::Success)
}
