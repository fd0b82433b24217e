//! Tail and moment statistics on simulated samples: the Hill estimator with
//! its k-sensitivity sweep, log-log survival-slope fits, exponential survival
//! fits for extinction times, moment-stabilization scans, and total-variation
//! distance between empirical distributions of integer vectors.

use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TailError {
    #[error("degenerate sample: top order statistics are equal or nonpositive")]
    Degenerate,
    #[error("insufficient points in the requested quantile range (need {need}, have {have})")]
    InsufficientPoints { need: usize, have: usize },
    #[error("insufficient range for a survival fit: {0}")]
    InsufficientRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HillEstimate {
    pub index: f64,
    pub ci: (f64, f64),
    pub k: usize,
}

/// Hill estimator over the `k` largest order statistics:
/// `k / sum_{i=1..k} log(X_(i) / X_(k+1))`, with a 95% CI of
/// `index * (1 +- 1.96 / sqrt(k))`.
pub fn hill_estimator(samples: &[f64], k: usize) -> Result<HillEstimate, TailError> {
    if k < 10 {
        return Err(TailError::InvalidArgument(format!("k must be >= 10, got {k}")));
    }
    if k + 1 > samples.len() {
        return Err(TailError::InvalidArgument(format!(
            "k+1 = {} exceeds sample size {}",
            k + 1,
            samples.len()
        )));
    }
    if samples.iter().any(|x| !(*x > 0.0)) {
        return Err(TailError::InvalidArgument("samples must be positive".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let pivot = sorted[k];
    if pivot <= 0.0 {
        return Err(TailError::Degenerate);
    }
    let sum_log: f64 = sorted[..k].iter().map(|x| (x / pivot).ln()).sum();
    if sum_log <= 0.0 {
        return Err(TailError::Degenerate);
    }
    let index = k as f64 / sum_log;
    let half = 1.96 / (k as f64).sqrt();
    Ok(HillEstimate {
        index,
        ci: (index * (1.0 - half), index * (1.0 + half)),
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    /// Tail-index estimate (negated slope of log survival vs log value).
    pub index: f64,
    /// Index estimates over the lower and upper half of the quantile range.
    pub half_indices: (f64, f64),
    /// Set when the two half-range slopes differ by more than 25%.
    pub non_power_law_suspected: bool,
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in points {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    sxy / sxx
}

/// Least-squares slope of empirical `log P(X > y)` against `log y` over the
/// quantile window `[q_lo, q_hi]`; returns the negated slope as an index
/// estimate plus a flag when the two half-window slopes disagree by > 25%
/// (an exponential-looking tail drifts instead of stabilizing).
pub fn loglog_tail_fit(samples: &[f64], q_lo: f64, q_hi: f64) -> Result<LogLogFit, TailError> {
    if !(0.5..1.0).contains(&q_lo) || !(q_lo..1.0).contains(&q_hi) || q_lo >= q_hi {
        return Err(TailError::InvalidArgument(format!(
            "quantile range must satisfy 0.5 <= q_lo < q_hi < 1, got ({q_lo}, {q_hi})"
        )));
    }
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let i_lo = (q_lo * n as f64).ceil() as usize;
    let i_hi = ((q_hi * n as f64).floor() as usize).min(n - 1);
    let mut points = Vec::new();
    for i in i_lo..i_hi {
        let y = sorted[i];
        let surv = (n - i - 1) as f64 / n as f64;
        if y > 0.0 && surv > 0.0 {
            points.push((y.ln(), surv.ln()));
        }
    }
    if points.len() < 100 {
        return Err(TailError::InsufficientPoints {
            need: 100,
            have: points.len(),
        });
    }
    let first_x = points[0].0;
    if points.iter().all(|(x, _)| (*x - first_x).abs() < 1e-12) {
        return Err(TailError::Degenerate);
    }
    let slope = least_squares_slope(&points);
    let mid = points.len() / 2;
    let lower = -least_squares_slope(&points[..mid]);
    let upper = -least_squares_slope(&points[mid..]);
    let rel = (lower - upper).abs() / lower.abs().max(upper.abs()).max(1e-300);
    Ok(LogLogFit {
        index: -slope,
        half_indices: (lower, upper),
        non_power_law_suspected: rel > 0.25,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalFit {
    /// Exponential decay rate (positive means decaying survival).
    pub rate: f64,
    pub intercept: f64,
    /// The fitted `(n, log P(tau > n))` points.
    pub points: Vec<(u32, f64)>,
    pub max_abs_residual: f64,
    /// Root-mean-square residual of the fit, in log scale.
    pub rms_residual: f64,
}

/// Least-squares fit of `log P(tau > n)` against `n`, over the `n` range
/// where at least 100 samples survive (optionally intersected with an
/// explicit range). Returns the decay rate, intercept, the fitted points
/// and the worst absolute residual in log scale.
pub fn survival_fit(taus: &[u32], range: Option<(u32, u32)>) -> Result<SurvivalFit, TailError> {
    if taus.is_empty() {
        return Err(TailError::InsufficientRange("no samples".into()));
    }
    let n_samples = taus.len() as f64;
    let max_tau = *taus.iter().max().unwrap();
    let mut survivors = vec![0u64; max_tau as usize + 1];
    for &t in taus {
        // tau > n holds for n < t
        if t > 0 {
            survivors[(t - 1) as usize] += 1;
        }
    }
    // suffix-sum: survivors[n] = #{tau > n}
    for n in (0..survivors.len().saturating_sub(1)).rev() {
        survivors[n] += survivors[n + 1];
    }
    let (lo, hi) = range.unwrap_or((0, max_tau));
    let mut points = Vec::new();
    for n in lo..=hi.min(max_tau) {
        let count = survivors[n as usize];
        if count >= 100 {
            points.push((n, (count as f64 / n_samples).ln()));
        }
    }
    if points.len() < 2 {
        return Err(TailError::InsufficientRange(format!(
            "only {} usable survival points with >= 100 survivors",
            points.len()
        )));
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|(n, l)| (*n as f64, *l)).collect();
    let slope = least_squares_slope(&xy);
    let mean_x = xy.iter().map(|p| p.0).sum::<f64>() / xy.len() as f64;
    let mean_y = xy.iter().map(|p| p.1).sum::<f64>() / xy.len() as f64;
    let intercept = mean_y - slope * mean_x;
    let max_abs_residual = xy
        .iter()
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    let rms_residual = (xy
        .iter()
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum::<f64>()
        / xy.len() as f64)
        .sqrt();
    Ok(SurvivalFit {
        rate: -slope,
        intercept,
        points,
        max_abs_residual,
        rms_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentClass {
    Stable,
    Growing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentDiagnostic {
    pub x: f64,
    pub prefix_means: Vec<f64>,
    pub class: MomentClass,
}

/// Running partial means of `X^x` over sample-size prefixes (10%, ..., 100%).
/// "Stable" when the last three prefixes vary by less than 10%; a growing
/// running mean is the divergence signature of `E X^x = infinity`.
pub fn moment_scan(samples: &[f64], x_grid: &[f64]) -> Vec<MomentDiagnostic> {
    let n = samples.len();
    x_grid
        .iter()
        .map(|&x| {
            let powers: Vec<f64> = samples.iter().map(|v| v.powf(x)).collect();
            let mut prefix_means = Vec::with_capacity(10);
            let mut acc = 0.0;
            let mut consumed = 0usize;
            for decile in 1..=10usize {
                let end = (n * decile) / 10;
                for p in &powers[consumed..end] {
                    acc += p;
                }
                consumed = end;
                prefix_means.push(if end > 0 { acc / end as f64 } else { 0.0 });
            }
            let last3 = &prefix_means[7..10];
            let max = last3.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = last3.iter().cloned().fold(f64::INFINITY, f64::min);
            let class = if max <= min * 1.10 {
                MomentClass::Stable
            } else {
                MomentClass::Growing
            };
            MomentDiagnostic { x, prefix_means, class }
        })
        .collect()
}

/// Empirical distribution over integer vectors on a truncated support; mass
/// beyond the truncation bound pools into one overflow cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    mass: BTreeMap<Vec<u64>, f64>,
    pooled: f64,
}

impl EmpiricalDist {
    pub fn from_samples<I>(samples: I, truncation: u64) -> Self
    where
        I: IntoIterator<Item = Vec<u64>>,
    {
        let mut mass: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        let mut pooled = 0usize;
        let mut total = 0usize;
        for s in samples {
            total += 1;
            if s.iter().any(|v| *v > truncation) {
                pooled += 1;
            } else {
                *mass.entry(s).or_insert(0.0) += 1.0;
            }
        }
        let t = total.max(1) as f64;
        for v in mass.values_mut() {
            *v /= t;
        }
        EmpiricalDist {
            mass,
            pooled: pooled as f64 / t,
        }
    }
}

/// Total-variation distance `0.5 * sum |p - q|` including the pooled
/// overflow cell.
pub fn tv_distance(p: &EmpiricalDist, q: &EmpiricalDist) -> f64 {
    let mut total = (p.pooled - q.pooled).abs();
    for (key, pv) in &p.mass {
        let qv = q.mass.get(key).copied().unwrap_or(0.0);
        total += (pv - qv).abs();
    }
    for (key, qv) in &q.mass {
        if !p.mass.contains_key(key) {
            total += qv.abs();
        }
    }
    0.5 * total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFitReport {
    pub hill_index: f64,
    pub hill_ci: (f64, f64),
    pub k_used: usize,
    /// Hill estimates at k/2, k and 2k.
    pub k_sweep: Vec<(usize, f64)>,
    pub loglog_slope: f64,
    pub non_power_law_suspected: bool,
    pub sample_size: usize,
    pub capped_excluded: usize,
}

/// Full tail report: Hill at `k = ceil(k_frac * n)` with the sensitivity
/// sweep, plus the log-log slope over the (0.9, 0.999) quantile window.
pub fn tail_fit_report(
    samples: &[f64],
    capped_excluded: usize,
    k_frac: f64,
) -> Result<TailFitReport, TailError> {
    let n = samples.len();
    let k = ((k_frac * n as f64).ceil() as usize).max(10);
    let hill = hill_estimator(samples, k)?;
    let mut k_sweep = Vec::new();
    for kk in [k / 2, k, 2 * k] {
        if let Ok(est) = hill_estimator(samples, kk.max(10)) {
            k_sweep.push((est.k, est.index));
        }
    }
    let loglog = loglog_tail_fit(samples, 0.9, 0.999)?;
    Ok(TailFitReport {
        hill_index: hill.index,
        hill_ci: hill.ci,
        k_used: hill.k,
        k_sweep,
        loglog_slope: loglog.index,
        non_power_law_suspected: loglog.non_power_law_suspected,
        sample_size: n,
        capped_excluded,
    })
}

/// Empirical survival curve `(y, P(X > y))` on the sorted sample, decimated
/// to at most `max_points` rows for export.
pub fn survival_curve(samples: &[f64], max_points: usize) -> Vec<(f64, f64)> {
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let step = (n / max_points.max(1)).max(1);
    let mut out = Vec::new();
    for i in (0..n).step_by(step) {
        out.push((sorted[i], (n - i) as f64 / n as f64));
    }
    out
}
