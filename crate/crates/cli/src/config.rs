//! Fit configuration and fitted-model bundle schemas.

use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use microreserve::cond_dist::{CondDistModel, DistFamily};
use microreserve::intensity::{IntensityFamily, IntensityModel, MarkFamily, MarkIntensityModel};
use microreserve::optim::OptimOptions;
use microreserve::poisson_fit::FitResult;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub version: u32,
    #[serde(default)]
    pub origin_date: Option<NaiveDate>,
    /// Data horizon in days since the origin; defaults to the latest date in the data.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub reporting: ReportingSpec,
    pub delay: DistSpec,
    pub mark: MarkSpec,
    pub amounts: DistSpec,
    /// c and d of the delay and amount models must stay admissible up to this time.
    #[serde(default)]
    pub admissible_until: Option<f64>,
    #[serde(default)]
    pub optim: OptimSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportingSpec {
    pub family: String,
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    #[serde(default)]
    pub period_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkSpec {
    pub family: String,
    #[serde(default)]
    pub init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSpec {
    pub family: String,
    #[serde(default, rename = "L")]
    pub order: usize,
    #[serde(default)]
    pub trend: bool,
    #[serde(default)]
    pub free_xi: bool,
    /// Use this model as given instead of fitting one.
    #[serde(default)]
    pub fixed: Option<CondDistModel>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSpec {
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub gradient_tol: Option<f64>,
}

impl OptimSpec {
    pub fn options(&self) -> OptimOptions {
        let mut o = OptimOptions::default();
        if let Some(n) = self.max_iter {
            o.max_iter = n;
        }
        if let Some(t) = self.gradient_tol {
            o.gradient_tol = t;
        }
        o
    }
}

fn unknown(key: &str, name: &str, known: &[&str]) -> CliError {
    CliError::Config(format!(
        "{key}: unknown family '{name}' (expected one of {})",
        known.join(", ")
    ))
}

fn no_custom(key: &str) -> CliError {
    CliError::Config(format!(
        "{key}: custom families need code and cannot be set from a config file"
    ))
}

impl ReportingSpec {
    pub fn family(&self) -> Result<IntensityFamily, CliError> {
        match IntensityFamily::from_name(&self.family) {
            Some(IntensityFamily::Custom) => Err(no_custom("reporting.family")),
            Some(f) => Ok(f),
            None => Err(unknown(
                "reporting.family",
                &self.family,
                &["constant", "exponential", "log_periodic", "quad_periodic"],
            )),
        }
    }
}

impl MarkSpec {
    pub fn family(&self) -> Result<MarkFamily, CliError> {
        match MarkFamily::from_name(&self.family) {
            Some(MarkFamily::Custom) => Err(no_custom("mark.family")),
            Some(f) => Ok(f),
            None => Err(unknown(
                "mark.family",
                &self.family,
                &["constant_mark", "weibull_baseline", "exp_trend_periodic"],
            )),
        }
    }
}

impl DistSpec {
    pub fn family(&self, key: &str) -> Result<DistFamily, CliError> {
        match self.family.as_str() {
            "lognormal" => Ok(DistFamily::Lognormal),
            "weibull" => Ok(DistFamily::Weibull),
            "gamma" => Ok(DistFamily::Gamma),
            other => Err(unknown(
                &format!("{key}.family"),
                other,
                &["lognormal", "weibull", "gamma"],
            )),
        }
    }

    fn validate(&self, key: &str) -> Result<(), CliError> {
        let family = self.family(key)?;
        match &self.fixed {
            Some(m) if m.family() != family => Err(CliError::Config(format!(
                "{key}.fixed: model family '{}' differs from {key}.family '{}'",
                m.family().name(),
                family.name()
            ))),
            _ => Ok(()),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.version)?;
        self.reporting.family()?;
        self.mark.family()?;
        self.delay.validate("delay")?;
        self.amounts.validate("amounts")?;
        Ok(())
    }
}

fn check_version(v: u32) -> Result<(), CliError> {
    if v != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "version: unsupported schema version {v} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// A model with the fit that produced it; hand-written bundles may omit the fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fitted<M> {
    pub model: M,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitResult>,
}

impl<M> Fitted<M> {
    pub fn converged(&self) -> bool {
        self.fit.as_ref().is_none_or(|f| f.converged)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub version: u32,
    pub origin_date: NaiveDate,
    pub horizon: f64,
    pub reporting: Fitted<IntensityModel>,
    pub delay: Fitted<CondDistModel>,
    pub mark: Fitted<MarkIntensityModel>,
    pub amounts: Fitted<CondDistModel>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Bundle {
    pub fn converged(&self) -> bool {
        self.reporting.converged() && self.delay.converged() && self.mark.converged() && self.amounts.converged()
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {what} '{}': {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{what} '{}': {e}", path.display())))
}

pub fn load_config(path: &Path) -> Result<FitConfig, CliError> {
    let c: FitConfig = read_json(path, "config")?;
    c.validate()?;
    Ok(c)
}

pub fn load_bundle(path: &Path) -> Result<Bundle, CliError> {
    let b: Bundle = read_json(path, "bundle")?;
    check_version(b.version)?;
    Ok(b)
}
