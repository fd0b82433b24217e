//! The random environment: per-cycle tuples of arrival rates, routing
//! probabilities, service-time laws and station policies.
//!
//! The environment law is a finite mixture of explicit parameter tuples
//! ([`EnvState`] values with weights). One state is drawn per server cycle
//! and applies to every station visited during that cycle.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Service-time distribution of one station. All parameters are strictly
/// positive and the mean exists in closed form for every kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ServiceDist {
    Deterministic { value: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Lognormal { log_mean: f64, log_sd: f64 },
}

impl ServiceDist {
    /// Exact mean service time.
    pub fn mean(&self) -> f64 {
        match *self {
            ServiceDist::Deterministic { value } => value,
            ServiceDist::Exponential { rate } => 1.0 / rate,
            ServiceDist::Gamma { shape, rate } => shape / rate,
            ServiceDist::Lognormal { log_mean, log_sd } => {
                (log_mean + 0.5 * log_sd * log_sd).exp()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ServiceDist::Deterministic { value } => value,
            ServiceDist::Exponential { rate } => Exp::new(rate).unwrap().sample(rng),
            ServiceDist::Gamma { shape, rate } => {
                Gamma::new(shape, 1.0 / rate).unwrap().sample(rng)
            }
            ServiceDist::Lognormal { log_mean, log_sd } => {
                LogNormal::new(log_mean, log_sd).unwrap().sample(rng)
            }
        }
    }

    fn validate(&self, path: &str, report: &mut ValidationReport) {
        fn check(report: &mut ValidationReport, path: &str, name: &str, v: f64) {
            if !v.is_finite() || v <= 0.0 {
                report.push(
                    format!("{path}.{name}"),
                    format!("parameter must be strictly positive and finite, got {v}"),
                );
            }
        }
        match *self {
            ServiceDist::Deterministic { value } => check(report, path, "value", value),
            ServiceDist::Exponential { rate } => check(report, path, "rate", rate),
            ServiceDist::Gamma { shape, rate } => {
                check(report, path, "shape", shape);
                check(report, path, "rate", rate);
            }
            ServiceDist::Lognormal { log_mean, log_sd } => {
                if !log_mean.is_finite() {
                    report.push(format!("{path}.log_mean"), "parameter must be finite".into());
                }
                check(report, path, "log_sd", log_sd);
            }
        }
    }
}

/// Exact mean of a service distribution (free-function form of
/// [`ServiceDist::mean`]).
pub fn mean_service_time(dist: &ServiceDist) -> f64 {
    dist.mean()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Gated,
    Exhaustive,
}

/// What each completed service contributes to the accumulated final product:
/// its duration (busy time) or one unit (served-customer count).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalProduct {
    #[default]
    ServiceTime,
    Unit,
}

/// One environment draw: arrival-rate matrix, routing matrix, service laws
/// and per-station policies for a single server cycle.
///
/// `eps[i][j]` is the Poisson arrival rate to station `j` while a customer of
/// station `i` is in service. `gamma[i]` is the routing row
/// `(gamma_i0, gamma_i1, ..., gamma_im)`: after a completed service at
/// station `i` the customer leaves with probability `gamma_i0` or moves to
/// station `j` with probability `gamma_ij`. Stations are 0-indexed in code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub eps: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub service: Vec<ServiceDist>,
    pub policy: Vec<Policy>,
}

impl EnvState {
    pub fn station_count(&self) -> usize {
        self.service.len()
    }
}

/// Finite mixture over [`EnvState`] values: the iid environment law.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvModel {
    pub m: usize,
    pub final_product: FinalProduct,
    pub states: Vec<EnvState>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

/// Every invariant violation found in a model, with a path to the offending
/// field. Validation never aborts early; an empty report means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: String, message: String) {
        self.violations.push(Violation { path, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}

const PROB_TOL: f64 = 1e-12;

/// Check every invariant of a model and report all violations.
pub fn validate_env_model(model: &EnvModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m = model.m;
    if m == 0 {
        report.push("m".into(), "station count must be at least 1".into());
    }
    if model.states.is_empty() {
        report.push("states".into(), "at least one environment state is required".into());
    }
    if model.probs.len() != model.states.len() {
        report.push(
            "probs".into(),
            format!(
                "length {} does not match state count {}",
                model.probs.len(),
                model.states.len()
            ),
        );
    }
    for (k, p) in model.probs.iter().enumerate() {
        if !p.is_finite() || *p < 0.0 {
            report.push(format!("probs[{k}]"), format!("probability must be in [0,1], got {p}"));
        }
    }
    let sum: f64 = model.probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        report.push("probs".into(), format!("probs sum != 1 (got {sum})"));
    }

    for (k, state) in model.states.iter().enumerate() {
        let base = format!("states[{k}]");
        if state.eps.len() != m || state.eps.iter().any(|r| r.len() != m) {
            report.push(format!("{base}.eps"), format!("must be a {m}x{m} matrix"));
        } else {
            for (i, row) in state.eps.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    if !e.is_finite() || *e < 0.0 {
                        report.push(
                            format!("{base}.eps[{i}][{j}]"),
                            format!("arrival rate must be nonnegative and finite, got {e}"),
                        );
                    }
                }
            }
        }
        if state.gamma.len() != m || state.gamma.iter().any(|r| r.len() != m + 1) {
            report.push(format!("{base}.gamma"), format!("must be a {m}x{} matrix", m + 1));
        } else {
            for (i, row) in state.gamma.iter().enumerate() {
                for (j, g) in row.iter().enumerate() {
                    if !g.is_finite() || *g < 0.0 || *g > 1.0 {
                        report.push(
                            format!("{base}.gamma[{i}][{j}]"),
                            format!("routing probability must be in [0,1], got {g}"),
                        );
                    }
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > PROB_TOL {
                    report.push(format!("{base}.gamma[{i}]"), format!("row sum != 1 (got {s})"));
                }
            }
        }
        if state.service.len() != m {
            report.push(format!("{base}.service"), format!("must list {m} distributions"));
        }
        for (i, d) in state.service.iter().enumerate() {
            d.validate(&format!("{base}.service[{i}]"), &mut report);
        }
        if state.policy.len() != m {
            report.push(format!("{base}.policy"), format!("must list {m} policies"));
        }
    }
    report
}

/// Draw the index of one environment state according to the mixture weights.
pub fn sample_state_index<R: Rng + ?Sized>(model: &EnvModel, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in model.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    model.states.len() - 1
}

/// Draw one environment state (iid across calls on the same stream).
pub fn sample_env_state<'a, R: Rng + ?Sized>(model: &'a EnvModel, rng: &mut R) -> &'a EnvState {
    &model.states[sample_state_index(model, rng)]
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config {path}:\n{report}")]
    Invalid { path: String, report: ValidationReport },
}

#[derive(Deserialize)]
struct ConfigFile {
    m: usize,
    #[serde(default)]
    final_product: FinalProduct,
    states: Vec<ConfigState>,
}

#[derive(Deserialize)]
struct ConfigState {
    prob: f64,
    eps: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    service: Vec<ServiceDist>,
    policy: Vec<Policy>,
}

impl EnvModel {
    pub fn from_json_str(text: &str, origin: &str) -> Result<EnvModel, ConfigError> {
        let file: ConfigFile = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        let mut probs = Vec::with_capacity(file.states.len());
        let mut states = Vec::with_capacity(file.states.len());
        for s in file.states {
            probs.push(s.prob);
            states.push(EnvState {
                eps: s.eps,
                gamma: s.gamma,
                service: s.service,
                policy: s.policy,
            });
        }
        let model = EnvModel {
            m: file.m,
            final_product: file.final_product,
            states,
            probs,
        };
        let report = validate_env_model(&model);
        if !report.is_valid() {
            return Err(ConfigError::Invalid {
                path: origin.to_string(),
                report,
            });
        }
        Ok(model)
    }

    pub fn from_path(path: &Path) -> Result<EnvModel, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        EnvModel::from_json_str(&text, &path.display().to_string())
    }
}
