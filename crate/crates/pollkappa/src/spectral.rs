//! Random matrix-product analytics: the top Lyapunov exponent, the moment
//! function `s(x)`, the tail index `kappa`, regularity checks for the
//! heavy-tail machinery, and sampling of the perpetuity series
//! `Xi = sum_k A_0...A_{k-1} C_k`.
//!
//! Scalar ensembles (one station) admit exact computation of `s(x)` and the
//! Lyapunov exponent; everything else is estimated by rescaled Monte Carlo
//! products.

use crate::env::EnvModel;
use crate::mat::Mat;
use crate::policy::station_means;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

/// Finite ensemble of iid mean-matrix / final-product pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEnsemble {
    pub pairs: Vec<(Mat, Vec<f64>)>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("environment state {state} has an unstable station; cycle means are undefined")]
    UnstableState { state: usize },
    #[error("matrix product collapsed to zero in replica {replica}")]
    ZeroMatrixProduct { replica: u64 },
    #[error("Monte Carlo confidence interval for s(x) straddles 1 across the bracket; \
             increase replicas or chain length")]
    Inconclusive,
    #[error("series truncation cap of {max_terms} terms hit before the norm floor; \
             the ensemble is near-critical")]
    TruncationCap { max_terms: usize },
}

impl MatrixEnsemble {
    /// Per-cycle mean pairs of every environment state. Fails if any state
    /// has an unstable station.
    pub fn from_env_model(model: &EnvModel) -> Result<Self, SpectralError> {
        let mut pairs = Vec::with_capacity(model.states.len());
        for (k, state) in model.states.iter().enumerate() {
            let mp = station_means(state, model.final_product);
            match (mp.a, mp.c_cycle) {
                (Some(a), Some(c)) => pairs.push((a, c)),
                _ => return Err(SpectralError::UnstableState { state: k }),
            }
        }
        Ok(MatrixEnsemble {
            pairs,
            probs: model.probs.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].0.dim()
    }

    /// Atom values `(a, p)` when the ensemble is one-dimensional.
    pub fn scalar_atoms(&self) -> Option<Vec<(f64, f64)>> {
        if self.dim() != 1 {
            return None;
        }
        Some(
            self.pairs
                .iter()
                .zip(&self.probs)
                .map(|((a, _), p)| (a.get(0, 0), *p))
                .collect(),
        )
    }

    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.pairs.len() - 1
    }

    /// Exact `E log a` for scalar ensembles.
    pub fn exact_alpha_scalar(&self) -> Option<f64> {
        self.scalar_atoms().map(|atoms| {
            atoms
                .iter()
                .map(|(a, p)| {
                    if *p == 0.0 {
                        0.0
                    } else if *a > 0.0 {
                        p * a.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .sum()
        })
    }

    /// Exact `s(x) = E a^x` for scalar ensembles.
    pub fn exact_s_scalar(&self, x: f64) -> Option<f64> {
        self.scalar_atoms()
            .map(|atoms| atoms.iter().map(|(a, p)| p * a.powf(x)).sum())
    }
}

/// Log-norm of one random product of length `n`, computed in rescaled form
/// (renormalize by the running sum-norm, accumulate logs) so chains up to
/// 1e5 neither overflow nor underflow.
fn chain_log_norm(
    ens: &MatrixEnsemble,
    n: usize,
    rng: &mut ChaCha12Rng,
    replica: u64,
) -> Result<f64, SpectralError> {
    let mut acc = 0.0f64;
    let mut current: Option<Mat> = None;
    for _ in 0..n {
        let k = ens.sample_index(rng);
        let a = &ens.pairs[k].0;
        let next = match &current {
            None => a.clone(),
            Some(b) => a.mul(b),
        };
        let norm = next.sum_norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(SpectralError::ZeroMatrixProduct { replica });
        }
        acc += norm.ln();
        let mut rescaled = next;
        rescaled.scale_in_place(1.0 / norm);
        current = Some(rescaled);
    }
    Ok(acc)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimate the top Lyapunov exponent by averaging `log ||A_{n-1}...A_0|| / n`
/// over independent replica chains. Returns `(alpha_hat, stderr)`.
pub fn estimate_lyapunov<R: Rng + ?Sized>(
    ens: &MatrixEnsemble,
    n: usize,
    replicas: u64,
    rng: &mut R,
) -> Result<(f64, f64), SpectralError> {
    let seeds: Vec<u64> = (0..replicas).map(|_| rng.random()).collect();
    let results: Vec<Result<f64, SpectralError>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, seed)| {
            let mut chain_rng = ChaCha12Rng::seed_from_u64(*seed);
            chain_log_norm(ens, n, &mut chain_rng, r as u64).map(|l| l / n as f64)
        })
        .collect();
    let mut values = Vec::with_capacity(results.len());
    for r in results {
        values.push(r?);
    }
    Ok(mean_and_se(&values))
}

/// Monte Carlo estimate of `s(x) = lim (E ||Pi_{0,n}||^x)^{1/n}`.
///
/// The estimator `(mean_r ||Pi^{(r)}||^x)^{1/n}` is biased low for heavy
/// integrands (the empirical mean misses the rare large products that carry
/// `E ||Pi||^x` when `x` is large), so `n` should stay moderate; the
/// stderr is propagated by the delta method and does not account for that
/// bias. Exact scalar mode is preferred whenever available.
pub fn s_of_x_monte_carlo<R: Rng + ?Sized>(
    ens: &MatrixEnsemble,
    x: f64,
    n: usize,
    replicas: u64,
    rng: &mut R,
) -> Result<(f64, f64), SpectralError> {
    let seeds: Vec<u64> = (0..replicas).map(|_| rng.random()).collect();
    let logs: Vec<Result<f64, SpectralError>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, seed)| {
            let mut chain_rng = ChaCha12Rng::seed_from_u64(*seed);
            chain_log_norm(ens, n, &mut chain_rng, r as u64)
        })
        .collect();
    let mut xl = Vec::with_capacity(logs.len());
    for l in logs {
        xl.push(x * l?);
    }
    let m = xl.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = xl.iter().map(|v| (v - m).exp()).collect();
    let (scaled_mean, scaled_se) = mean_and_se(&scaled);
    let log_mean = m + scaled_mean.ln();
    let s_hat = (log_mean / n as f64).exp();
    // Delta method: d/dY (Y^{1/n}) = s_hat / (n Y).
    let se = s_hat * (scaled_se / scaled_mean) / n as f64;
    Ok((s_hat, se))
}

/// `s(x)`: exact for scalar ensembles, Monte Carlo otherwise.
pub fn s_of_x<R: Rng + ?Sized>(
    ens: &MatrixEnsemble,
    x: f64,
    n: usize,
    replicas: u64,
    rng: &mut R,
) -> Result<(f64, f64), SpectralError> {
    if let Some(s) = ens.exact_s_scalar(x) {
        return Ok((s, 0.0));
    }
    s_of_x_monte_carlo(ens, x, n, replicas, rng)
}

/// Tail-index classification: `inf {x > 0 : s(x) > 1}`, with the boundary
/// cases "zero" (supercritical) and "infinite" (`s <= 1` everywhere probed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Zero,
    Finite(f64),
    Infinite,
}

impl Serialize for Kappa {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Kappa::Zero => serializer.serialize_str("zero"),
            Kappa::Finite(v) => serializer.serialize_f64(*v),
            Kappa::Infinite => serializer.serialize_str("infinite"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KappaMethod {
    #[serde(rename = "exact-scalar")]
    ExactScalar,
    #[serde(rename = "monte-carlo")]
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SProbe {
    pub x: f64,
    pub s_hat: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaResult {
    pub kappa: Kappa,
    /// 95% interval propagated from the `s` stderr (Monte Carlo mode only).
    pub kappa_ci: Option<(f64, f64)>,
    pub alpha: f64,
    pub alpha_stderr: f64,
    pub s_values: Vec<SProbe>,
    pub method: KappaMethod,
}

/// Knobs for Monte Carlo mode.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub chain_n: usize,
    pub replicas: u64,
    pub x_max: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            chain_n: 30,
            replicas: 2000,
            x_max: 64.0,
        }
    }
}

const Z95: f64 = 1.96;

/// Solve for the tail index by bisection on `s(x) - 1` over an expanding
/// bracket. Scalar ensembles are solved exactly to `|s(kappa) - 1| <= tol`;
/// otherwise Monte Carlo estimates drive the bisection and a confidence
/// interval for kappa is reported.
pub fn solve_kappa<R: Rng + ?Sized>(
    ens: &MatrixEnsemble,
    tol: f64,
    rng: &mut R,
    opts: &SolveOptions,
) -> Result<KappaResult, SpectralError> {
    if ens.dim() == 1 {
        solve_kappa_exact(ens, tol)
    } else {
        solve_kappa_mc(ens, tol, rng, opts)
    }
}

fn solve_kappa_exact(ens: &MatrixEnsemble, tol: f64) -> Result<KappaResult, SpectralError> {
    let alpha = ens.exact_alpha_scalar().expect("scalar ensemble");
    let s = |x: f64| ens.exact_s_scalar(x).expect("scalar ensemble");
    let mut probes: Vec<SProbe> = Vec::new();
    let probe = |x: f64, probes: &mut Vec<SProbe>| -> f64 {
        let v = s(x);
        probes.push(SProbe { x, s_hat: v, stderr: 0.0 });
        v
    };
    if alpha > 0.0 {
        return Ok(KappaResult {
            kappa: Kappa::Zero,
            kappa_ci: None,
            alpha,
            alpha_stderr: 0.0,
            s_values: probes,
            method: KappaMethod::ExactScalar,
        });
    }
    let x_max = 64.0;
    let mut x_lo = 0.0;
    let mut x_hi = 1.0;
    loop {
        let v = probe(x_hi, &mut probes);
        if v > 1.0 {
            break;
        }
        x_lo = x_hi;
        x_hi *= 2.0;
        if x_hi > x_max {
            return Ok(KappaResult {
                kappa: Kappa::Infinite,
                kappa_ci: None,
                alpha,
                alpha_stderr: 0.0,
                s_values: probes,
                method: KappaMethod::ExactScalar,
            });
        }
    }
    for _ in 0..500 {
        let mid = 0.5 * (x_lo + x_hi);
        let v = probe(mid, &mut probes);
        if (v - 1.0).abs() <= tol {
            return Ok(KappaResult {
                kappa: Kappa::Finite(mid),
                kappa_ci: None,
                alpha,
                alpha_stderr: 0.0,
                s_values: probes,
                method: KappaMethod::ExactScalar,
            });
        }
        if v > 1.0 {
            x_hi = mid;
        } else {
            x_lo = mid;
        }
    }
    let mid = 0.5 * (x_lo + x_hi);
    Ok(KappaResult {
        kappa: Kappa::Finite(mid),
        kappa_ci: None,
        alpha,
        alpha_stderr: 0.0,
        s_values: probes,
        method: KappaMethod::ExactScalar,
    })
}

fn solve_kappa_mc<R: Rng + ?Sized>(
    ens: &MatrixEnsemble,
    tol: f64,
    rng: &mut R,
    opts: &SolveOptions,
) -> Result<KappaResult, SpectralError> {
    let (alpha, alpha_se) = estimate_lyapunov(ens, opts.chain_n.max(200), opts.replicas, rng)?;
    let mut probes: Vec<SProbe> = Vec::new();
    let probe = |x: f64, rng: &mut R, probes: &mut Vec<SProbe>| -> Result<(f64, f64), SpectralError> {
        let (s_hat, se) = s_of_x_monte_carlo(ens, x, opts.chain_n, opts.replicas, rng)?;
        probes.push(SProbe { x, s_hat, stderr: se });
        Ok((s_hat, se))
    };
    if alpha - Z95 * alpha_se > 0.0 {
        return Ok(KappaResult {
            kappa: Kappa::Zero,
            kappa_ci: None,
            alpha,
            alpha_stderr: alpha_se,
            s_values: probes,
            method: KappaMethod::MonteCarlo,
        });
    }
    // Expand until s(x_hi) is certified above 1.
    let mut x_lo = 0.0f64;
    let mut s_lo = 1.0f64;
    let mut x_hi = 1.0f64;
    let mut s_hi;
    let mut inconclusive_seen = false;
    loop {
        let (v, se) = probe(x_hi, rng, &mut probes)?;
        if v - 1.0 > Z95 * se {
            s_hi = v;
            break;
        }
        if (v - 1.0).abs() <= Z95 * se {
            inconclusive_seen = true;
        } else {
            x_lo = x_hi;
            s_lo = v;
        }
        x_hi *= 2.0;
        if x_hi > opts.x_max {
            if inconclusive_seen {
                return Err(SpectralError::Inconclusive);
            }
            return Ok(KappaResult {
                kappa: Kappa::Infinite,
                kappa_ci: None,
                alpha,
                alpha_stderr: alpha_se,
                s_values: probes,
                method: KappaMethod::MonteCarlo,
            });
        }
    }
    let mut mid = 0.5 * (x_lo + x_hi);
    let mut mid_se = 0.0;
    for _ in 0..200 {
        mid = 0.5 * (x_lo + x_hi);
        if x_hi - x_lo <= tol.max(1e-6) {
            break;
        }
        let (v, se) = probe(mid, rng, &mut probes)?;
        mid_se = se;
        if (v - 1.0).abs() <= Z95 * se {
            break; // resolution floor of the Monte Carlo estimate
        }
        if v > 1.0 {
            x_hi = mid;
            s_hi = v;
        } else {
            x_lo = mid;
            s_lo = v;
        }
    }
    let slope = if x_hi > x_lo { (s_hi - s_lo) / (x_hi - x_lo) } else { 0.0 };
    if slope <= 0.0 {
        return Err(SpectralError::Inconclusive);
    }
    let half = Z95 * mid_se / slope + 0.5 * (x_hi - x_lo);
    Ok(KappaResult {
        kappa: Kappa::Finite(mid),
        kappa_ci: Some((mid - half, mid + half)),
        alpha,
        alpha_stderr: alpha_se,
        s_values: probes,
        method: KappaMethod::MonteCarlo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CondStatus {
    Pass,
    Fail,
    NotMachineCheckable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub id: u8,
    pub name: String,
    pub status: CondStatus,
    pub detail: String,
}

/// Machine-checkable report for the regularity conditions that back the
/// power-law tail of `Xi`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub kappa0: f64,
    pub conditions: Vec<ConditionCheck>,
}

impl ConditionReport {
    pub fn status(&self, id: u8) -> CondStatus {
        self.conditions
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.status)
            .expect("condition id in report")
    }
}

/// Best rational approximation p/q with q <= q_max (continued fractions).
fn best_rational(r: f64, q_max: u64) -> (i64, u64) {
    let mut x = r;
    let (mut p0, mut q0): (i64, i64) = (0, 1);
    let (mut p1, mut q1): (i64, i64) = (1, 0);
    for _ in 0..64 {
        let a = x.floor();
        let p2 = a as i64 * p1 + p0;
        let q2 = a as i64 * q1 + q0;
        if q2 as u64 > q_max || q2 < 0 {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = x - a;
        if frac.abs() < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    (p1, q1.max(1) as u64)
}

const LATTICE_TOL: f64 = 1e-9;
const LATTICE_QMAX: u64 = 10_000;

fn commensurate(r: f64) -> bool {
    let (p, q) = best_rational(r, LATTICE_QMAX);
    (r - p as f64 / q as f64).abs() <= LATTICE_TOL
}

/// Check the four regularity conditions at exponent `kappa0`. Condition 3
/// (the log spectral radii generate a dense group) is decidable here only as
/// a lattice heuristic on scalar supports; multitype ensembles get
/// "not machine-checkable" and need user attestation.
pub fn check_kesten_conditions(ens: &MatrixEnsemble, kappa0: f64) -> ConditionReport {
    let m = ens.dim();
    let mut conditions = Vec::with_capacity(4);

    // Condition 1: finite moment of some positive order. Automatic for a
    // finite ensemble with finite entries.
    let max_norm = ens
        .pairs
        .iter()
        .map(|(a, _)| a.sum_norm())
        .fold(0.0f64, f64::max);
    conditions.push(ConditionCheck {
        id: 1,
        name: "finite-moment".into(),
        status: if max_norm.is_finite() { CondStatus::Pass } else { CondStatus::Fail },
        detail: format!("finite support, max ||A|| = {max_norm:.6e}; E||A||^eps finite for all eps"),
    });

    // Condition 2: no zero rows anywhere in the support.
    let mut zero_row: Option<(usize, usize)> = None;
    'outer: for (k, (a, _)) in ens.pairs.iter().enumerate() {
        for i in 0..m {
            if a.row(i).iter().all(|v| *v == 0.0) {
                zero_row = Some((k, i));
                break 'outer;
            }
        }
    }
    conditions.push(ConditionCheck {
        id: 2,
        name: "no-zero-rows".into(),
        status: if zero_row.is_none() { CondStatus::Pass } else { CondStatus::Fail },
        detail: match zero_row {
            None => "every matrix in the support has no zero row".into(),
            Some((k, i)) => format!("matrix {k} has zero row {i}"),
        },
    });

    // Condition 3: dense log-spectral-radius group (lattice heuristic).
    let cond3 = if m == 1 {
        let atoms: Vec<f64> = ens
            .scalar_atoms()
            .unwrap()
            .into_iter()
            .filter(|(a, p)| *a > 0.0 && *p > 0.0 && (a.ln()).abs() > 1e-15)
            .map(|(a, _)| a.ln())
            .collect();
        if atoms.len() < 2 {
            ConditionCheck {
                id: 3,
                name: "non-lattice".into(),
                status: CondStatus::Fail,
                detail: "fewer than two distinct log atoms; the generated group is a lattice".into(),
            }
        } else {
            let reference = atoms[0];
            let mut all_commensurate = true;
            let mut witness = String::new();
            for (idx, l) in atoms.iter().enumerate().skip(1) {
                let r = l / reference;
                if !commensurate(r) {
                    all_commensurate = false;
                    witness = format!(
                        "log-atom ratio {r:.12} (atom {idx} vs atom 0) has no rational \
                         approximation with denominator <= {LATTICE_QMAX} within {LATTICE_TOL:e}"
                    );
                    break;
                }
            }
            if all_commensurate {
                ConditionCheck {
                    id: 3,
                    name: "non-lattice".into(),
                    status: CondStatus::Fail,
                    detail: "all pairwise log-atom ratios are commensurate (lattice heuristic)".into(),
                }
            } else {
                ConditionCheck {
                    id: 3,
                    name: "non-lattice".into(),
                    status: CondStatus::Pass,
                    detail: witness,
                }
            }
        }
    } else {
        ConditionCheck {
            id: 3,
            name: "non-lattice".into(),
            status: CondStatus::NotMachineCheckable,
            detail: "density of the log spectral-radius group is not machine-checkable for \
                     multitype ensembles; user attestation required"
                .into(),
        }
    };
    conditions.push(cond3);

    // Condition 4: E[min_i (row sum)^{kappa0}] >= m^{kappa0/2}, plus the
    // automatic E||A||^{kappa0} log+ ||A|| < infinity for finite support.
    let mut expectation = 0.0;
    for ((a, _), p) in ens.pairs.iter().zip(&ens.probs) {
        let min_row_sum = (0..m)
            .map(|i| a.row(i).iter().sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        expectation += p * min_row_sum.powf(kappa0);
    }
    let threshold = (m as f64).powf(kappa0 / 2.0);
    conditions.push(ConditionCheck {
        id: 4,
        name: "min-row-sum-moment".into(),
        status: if expectation >= threshold { CondStatus::Pass } else { CondStatus::Fail },
        detail: format!(
            "E[min_i (row sum)^kappa0] = {expectation:.12e} vs m^(kappa0/2) = {threshold:.12e}; \
             E||A||^kappa0 log+||A|| finite (finite support)"
        ),
    });

    ConditionReport { kappa0, conditions }
}

/// Truncation policy for [`sample_xi_series`].
#[derive(Debug, Clone, Copy)]
pub struct XiTruncation {
    pub max_terms: usize,
    pub norm_floor: f64,
}

impl Default for XiTruncation {
    fn default() -> Self {
        XiTruncation {
            max_terms: 10_000,
            norm_floor: 1e-12,
        }
    }
}

/// One draw of the truncated series with its recorded truncation-error bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiSample {
    pub value: Vec<f64>,
    pub terms: usize,
    /// `||Pi_K|| * max ||C|| * r/(1-r)` with `r = max ||A||` over the
    /// support; infinite when `r >= 1` (the bound is then uninformative).
    pub error_bound: f64,
}

/// Sample `Xi = sum_{k=0}^{K} Pi_{0,k} C_k`, truncated at the first `K` with
/// `||Pi_{0,K}|| < norm_floor` (or erroring at `max_terms`).
pub fn sample_xi_series<R: Rng + ?Sized>(
    ens: &MatrixEnsemble,
    rng: &mut R,
    trunc: &XiTruncation,
) -> Result<XiSample, SpectralError> {
    let m = ens.dim();
    let max_c_norm = ens
        .pairs
        .iter()
        .map(|(_, c)| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let max_a_norm = ens
        .pairs
        .iter()
        .map(|(a, _)| a.sum_norm())
        .fold(0.0f64, f64::max);
    let mut xi = vec![0.0f64; m];
    let mut product = Mat::identity(m);
    for k in 0..trunc.max_terms {
        let idx = ens.sample_index(rng);
        let (a, c) = &ens.pairs[idx];
        let term = product.mul_vec(c);
        for (slot, v) in xi.iter_mut().zip(&term) {
            *slot += v;
        }
        product = product.mul(a);
        let norm = product.sum_norm();
        if norm < trunc.norm_floor {
            let error_bound = if max_a_norm < 1.0 {
                norm * max_c_norm * max_a_norm / (1.0 - max_a_norm)
            } else {
                f64::INFINITY
            };
            return Ok(XiSample {
                value: xi,
                terms: k + 1,
                error_bound,
            });
        }
    }
    Err(SpectralError::TruncationCap {
        max_terms: trunc.max_terms,
    })
}
