//! The `pollkappa` experiment runner: configuration loading, dispatch to the
//! simulation and analysis modules, and deterministic report emission.
//!
//! Exit codes: 0 success, 1 invalid configuration (full violation report on
//! stderr), 2 runtime failure (sampling budget, inconclusive estimate, IO).

use crate::branching::{simulate_busy_period_branching, Caps};
use crate::env::{ConfigError, EnvModel};
use crate::policy::{station_means, MeanPair};
use crate::polling::{simulate_busy_period_events, BusyPeriodRecord, PollingCaps};
use crate::report::{
    busy_csv, curve_csv, parse_busy_csv, probes_csv, sha256_hex, snapshots_csv, to_json_string,
    write_output, BusyRow, Provenance, Report,
};
use crate::spectral::{
    check_kesten_conditions, estimate_lyapunov, sample_xi_series, solve_kappa, Kappa,
    MatrixEnsemble, SolveOptions, SpectralError, XiTruncation,
};
use crate::stream::{par_map_replicas, replica_rng};
use crate::tails::{tail_fit_report, survival_curve, tv_distance, EmpiricalDist, TailFitReport};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    Branching,
    Events,
}

/// Batch experiment specification, parsed straight from the command line.
#[derive(Debug, Parser)]
#[command(
    name = "pollkappa",
    version,
    about = "Polling-system busy periods, branching-process analytics, and tail indices"
)]
pub struct ExperimentSpec {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a configuration file; nonzero exit and a full report if invalid.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Exact within-visit and per-cycle mean matrices for every state.
    Means {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the top Lyapunov exponent.
    Lyapunov {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        replicas: u64,
        #[arg(long, default_value_t = 1000)]
        chain_n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the tail index kappa; also writes an s(x) probe CSV.
    Kappa {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 2000)]
        replicas: u64,
        #[arg(long, default_value_t = 30)]
        chain_n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Machine checks of the heavy-tail regularity conditions.
    Conditions {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exponent to test; defaults to the solved kappa when finite.
        #[arg(long)]
        kappa0: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stream busy-period samples to CSV.
    Busy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        replicas: u64,
        /// Arrival station of the initial customer (1-based).
        #[arg(long, default_value_t = 1)]
        station: usize,
        #[arg(long, value_enum, default_value_t = Engine::Branching)]
        engine: Engine,
        #[arg(long, default_value_t = 10_000)]
        max_generations: u32,
        #[arg(long, default_value_t = 10_000)]
        max_cycles: u32,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump end-of-cycle queue snapshots (one row per cycle).
        #[arg(long)]
        snapshots_out: Option<PathBuf>,
    },
    /// Per-cycle total-variation distance between the two simulators.
    Equivalence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        replicas: u64,
        #[arg(long, default_value_t = 3)]
        cycles: u32,
        #[arg(long, default_value_t = 1)]
        station: usize,
        /// Truncation bound per queue coordinate; excess mass is pooled.
        #[arg(long, default_value_t = 30)]
        truncate: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the tail of a busy-period CSV produced by `busy`.
    Tailfit {
        /// Input CSV (`replica,station_J,phi_total,tau,capped`).
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        k_frac: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the empirical survival curve as CSV.
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Sample the perpetuity series and fit its tail.
    XiTail {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        replicas: u64,
        #[arg(long, default_value_t = 0.01)]
        k_frac: f64,
        #[arg(long, default_value_t = 10_000)]
        max_terms: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_model(path: &Path) -> Result<(EnvModel, String), CliError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let hash = sha256_hex(&bytes);
    let text = String::from_utf8_lossy(&bytes);
    let model = EnvModel::from_json_str(&text, &path.display().to_string())?;
    Ok((model, hash))
}

fn station_index(station: usize, m: usize) -> Result<usize, CliError> {
    if station == 0 || station > m {
        return Err(CliError::Runtime(format!(
            "--station must be in 1..={m}, got {station}"
        )));
    }
    Ok(station - 1)
}

#[derive(Serialize)]
struct MeansResult {
    states: Vec<MeanPair>,
}

#[derive(Serialize)]
struct LyapunovResult {
    alpha: f64,
    stderr: f64,
    chain_n: usize,
}

#[derive(Serialize)]
struct EquivalenceResult {
    station_j: usize,
    truncate: u64,
    cycles: Vec<u32>,
    tv: Vec<f64>,
}

#[derive(Serialize)]
struct XiTailResult {
    kappa_exact: Option<f64>,
    samples: usize,
    truncation_capped: usize,
    max_error_bound: f64,
    first_direction: TailFitReport,
    uniform_direction: TailFitReport,
}

struct BusyOutput {
    row: BusyRow,
    snapshots: Option<Vec<Vec<u64>>>,
}

fn busy_output(record: BusyPeriodRecord, replica: u64, station: usize, keep: bool) -> BusyOutput {
    BusyOutput {
        row: BusyRow {
            replica,
            station,
            phi_total: record.phi_total,
            tau: record.tau(),
            capped: record.capped,
        },
        snapshots: keep.then_some(record.snapshots),
    }
}

/// Run one experiment end to end; errors map to process exit codes.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(), CliError> {
    match &spec.command {
        Command::Validate { config } => {
            let bytes = std::fs::read(config).map_err(|source| ConfigError::Io {
                path: config.display().to_string(),
                source,
            })?;
            let text = String::from_utf8_lossy(&bytes);
            EnvModel::from_json_str(&text, &config.display().to_string())?;
            println!("valid");
            Ok(())
        }

        Command::Means { config, out } => {
            let (model, hash) = load_model(config)?;
            let result = MeansResult {
                states: model
                    .states
                    .iter()
                    .map(|s| station_means(s, model.final_product))
                    .collect(),
            };
            let report = Report {
                result,
                provenance: Provenance::new("means", 0, 0, hash),
            };
            write_output(out.as_deref(), &to_json_string(&report))?;
            Ok(())
        }

        Command::Lyapunov { config, seed, replicas, chain_n, out } => {
            let (model, hash) = load_model(config)?;
            let ens = MatrixEnsemble::from_env_model(&model)?;
            let mut rng = replica_rng(*seed, "lyapunov", 0);
            let (alpha, stderr) = estimate_lyapunov(&ens, *chain_n, *replicas, &mut rng)?;
            let report = Report {
                result: LyapunovResult { alpha, stderr, chain_n: *chain_n },
                provenance: Provenance::new("lyapunov", *seed, *replicas, hash),
            };
            write_output(out.as_deref(), &to_json_string(&report))?;
            Ok(())
        }

        Command::Kappa { config, seed, tol, replicas, chain_n, out } => {
            let (model, hash) = load_model(config)?;
            let ens = MatrixEnsemble::from_env_model(&model)?;
            let mut rng = replica_rng(*seed, "kappa", 0);
            let opts = SolveOptions {
                chain_n: *chain_n,
                replicas: *replicas,
                ..SolveOptions::default()
            };
            let result = solve_kappa(&ens, *tol, &mut rng, &opts)?;
            let probes = result.s_values.clone();
            let report = Report {
                result,
                provenance: Provenance::new("kappa", *seed, *replicas, hash),
            };
            write_output(out.as_deref(), &to_json_string(&report))?;
            if let Some(out_path) = out {
                let probe_path = out_path.with_extension("probes.csv");
                std::fs::write(probe_path, probes_csv(&probes))?;
            }
            Ok(())
        }

        Command::Conditions { config, seed, kappa0, out } => {
            let (model, hash) = load_model(config)?;
            let ens = MatrixEnsemble::from_env_model(&model)?;
            let exponent = match kappa0 {
                Some(k) => *k,
                None => {
                    let mut rng = replica_rng(*seed, "kappa", 0);
                    let solved = solve_kappa(&ens, 1e-8, &mut rng, &SolveOptions::default())?;
                    match solved.kappa {
                        Kappa::Finite(k) => k,
                        other => {
                            return Err(CliError::Runtime(format!(
                                "kappa is {other:?}; pass --kappa0 explicitly"
                            )))
                        }
                    }
                }
            };
            let result = check_kesten_conditions(&ens, exponent);
            let report = Report {
                result,
                provenance: Provenance::new("conditions", *seed, 0, hash),
            };
            write_output(out.as_deref(), &to_json_string(&report))?;
            Ok(())
        }

        Command::Busy {
            config,
            seed,
            replicas,
            station,
            engine,
            max_generations,
            max_cycles,
            out,
            snapshots_out,
        } => {
            let (model, hash) = load_model(config)?;
            let _ = hash;
            let j0 = station_index(*station, model.m)?;
            let keep = snapshots_out.is_some();
            let outputs: Vec<Result<BusyOutput, String>> = match engine {
                Engine::Branching => {
                    let caps = Caps {
                        max_generations: *max_generations,
                        ..Caps::default()
                    };
                    par_map_replicas(*seed, "busy-branching", *replicas, |r, rng| {
                        simulate_busy_period_branching(j0, &model, rng, &caps)
                            .map(|rec| busy_output(rec, r, *station, keep))
                            .map_err(|e| format!("replica {r}: {e}"))
                    })
                }
                Engine::Events => {
                    let caps = PollingCaps {
                        max_cycles: *max_cycles,
                        ..PollingCaps::default()
                    };
                    par_map_replicas(*seed, "busy-events", *replicas, |r, rng| {
                        Ok(busy_output(
                            simulate_busy_period_events(j0, &model, rng, &caps),
                            r,
                            *station,
                            keep,
                        ))
                    })
                }
            };
            let mut rows = Vec::with_capacity(outputs.len());
            let mut snapshot_rows: Vec<(u64, u32, Vec<u64>)> = Vec::new();
            for o in outputs {
                let o = o.map_err(CliError::Runtime)?;
                if let Some(snaps) = o.snapshots {
                    for (cycle, q) in snaps.into_iter().enumerate() {
                        snapshot_rows.push((o.row.replica, cycle as u32, q));
                    }
                }
                rows.push(o.row);
            }
            write_output(out.as_deref(), &busy_csv(&rows))?;
            if let Some(path) = snapshots_out {
                std::fs::write(path, snapshots_csv(model.m, &snapshot_rows))?;
            }
            let capped = rows.iter().filter(|r| r.capped).count();
            if capped as f64 > 0.001 * rows.len() as f64 {
                eprintln!(
                    "warning: {capped}/{} runs hit a cap; tail statistics will be biased",
                    rows.len()
                );
            }
            Ok(())
        }

        Command::Equivalence { config, seed, replicas, cycles, station, truncate, out } => {
            let (model, hash) = load_model(config)?;
            let j0 = station_index(*station, model.m)?;
            let horizon = *cycles as usize;
            let branching: Vec<Result<Vec<Vec<u64>>, String>> =
                par_map_replicas(*seed, "equivalence-branching", *replicas, |r, rng| {
                    simulate_busy_period_branching(j0, &model, rng, &Caps::default())
                        .map(|rec| {
                            (1..=horizon).map(|n| rec.state_at_cycle(n, model.m)).collect()
                        })
                        .map_err(|e| format!("replica {r}: {e}"))
                });
            let events: Vec<Vec<Vec<u64>>> =
                par_map_replicas(*seed, "equivalence-events", *replicas, |_, rng| {
                    let rec =
                        simulate_busy_period_events(j0, &model, rng, &PollingCaps::default());
                    (1..=horizon).map(|n| rec.state_at_cycle(n, model.m)).collect()
                });
            let mut branching_states = Vec::with_capacity(branching.len());
            for b in branching {
                branching_states.push(b.map_err(CliError::Runtime)?);
            }
            let mut tv = Vec::with_capacity(horizon);
            for n in 0..horizon {
                let p = EmpiricalDist::from_samples(
                    branching_states.iter().map(|s| s[n].clone()),
                    *truncate,
                );
                let q = EmpiricalDist::from_samples(
                    events.iter().map(|s| s[n].clone()),
                    *truncate,
                );
                tv.push(tv_distance(&p, &q));
            }
            let result = EquivalenceResult {
                station_j: *station,
                truncate: *truncate,
                cycles: (1..=*cycles).collect(),
                tv,
            };
            let report = Report {
                result,
                provenance: Provenance::new("equivalence", *seed, *replicas, hash),
            };
            write_output(out.as_deref(), &to_json_string(&report))?;
            Ok(())
        }

        Command::Tailfit { input, k_frac, out, curve_out } => {
            let bytes = std::fs::read(input)?;
            let hash = sha256_hex(&bytes);
            let rows = parse_busy_csv(&String::from_utf8_lossy(&bytes))
                .map_err(CliError::Runtime)?;
            let capped = rows.iter().filter(|r| r.capped).count();
            let samples: Vec<f64> = rows
                .iter()
                .filter(|r| !r.capped)
                .map(|r| r.phi_total)
                .collect();
            if capped as f64 > 0.001 * rows.len() as f64 {
                eprintln!(
                    "warning: {capped}/{} capped runs excluded; the tail is censored",
                    rows.len()
                );
            }
            let result = tail_fit_report(&samples, capped, *k_frac)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let report = Report {
                result,
                provenance: Provenance::new("tailfit", 0, rows.len() as u64, hash),
            };
            write_output(out.as_deref(), &to_json_string(&report))?;
            if let Some(path) = curve_out {
                std::fs::write(path, curve_csv(&survival_curve(&samples, 2000)))?;
            }
            Ok(())
        }

        Command::XiTail { config, seed, replicas, k_frac, max_terms, out } => {
            let (model, hash) = load_model(config)?;
            let ens = MatrixEnsemble::from_env_model(&model)?;
            let trunc = XiTruncation {
                max_terms: *max_terms,
                ..XiTruncation::default()
            };
            let kappa_exact = if ens.dim() == 1 {
                let mut rng = replica_rng(*seed, "kappa", 0);
                match solve_kappa(&ens, 1e-10, &mut rng, &SolveOptions::default())?.kappa {
                    Kappa::Finite(k) => Some(k),
                    _ => None,
                }
            } else {
                None
            };
            let draws = par_map_replicas(*seed, "xi", *replicas, |_, rng| {
                sample_xi_series(&ens, rng, &trunc)
            });
            let m = ens.dim();
            let sqrt_m = (m as f64).sqrt();
            let mut first = Vec::with_capacity(draws.len());
            let mut uniform = Vec::with_capacity(draws.len());
            let mut truncation_capped = 0usize;
            let mut max_error_bound = 0.0f64;
            for d in draws {
                match d {
                    Ok(xi) => {
                        first.push(xi.value[0]);
                        uniform.push(xi.value.iter().sum::<f64>() / sqrt_m);
                        if xi.error_bound > max_error_bound {
                            max_error_bound = xi.error_bound;
                        }
                    }
                    Err(SpectralError::TruncationCap { .. }) => truncation_capped += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            let result = XiTailResult {
                kappa_exact,
                samples: first.len(),
                truncation_capped,
                max_error_bound,
                first_direction: tail_fit_report(&first, truncation_capped, *k_frac)
                    .map_err(|e| CliError::Runtime(e.to_string()))?,
                uniform_direction: tail_fit_report(&uniform, truncation_capped, *k_frac)
                    .map_err(|e| CliError::Runtime(e.to_string()))?,
            };
            let report = Report {
                result,
                provenance: Provenance::new("xi-tail", *seed, *replicas, hash),
            };
            write_output(out.as_deref(), &to_json_string(&report))?;
            Ok(())
        }
    }
}
