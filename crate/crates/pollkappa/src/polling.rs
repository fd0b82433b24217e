//! Discrete-event simulator of the polling system itself: one server, m
//! stations, zero switchover times, cyclic routes.
//!
//! With zero switchovers the event order is a deterministic sequence of
//! services, so the simulator advances service by service; arrivals during a
//! service are drawn by conditioning on the realized duration. This is an
//! exact simulation of the same law as the branching engine and serves as
//! its independent cross-check.

use crate::env::{sample_env_state, EnvModel, EnvState, FinalProduct, Policy};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// One busy period: accumulated final product, number of cycles performed,
/// and the queue-length vector at the end of each cycle.
///
/// The last snapshot is the zero vector exactly when the run was not capped.
/// With the service-time product and zero switchovers, `phi_total` equals
/// the elapsed busy time.
#[derive(Debug, Clone, PartialEq)]
pub struct BusyPeriodRecord {
    pub phi_total: f64,
    pub cycles: u32,
    pub snapshots: Vec<Vec<u64>>,
    pub capped: bool,
}

impl BusyPeriodRecord {
    /// End-of-cycle queue state, zero-padded after the busy period ends.
    pub fn state_at_cycle(&self, n: usize, m: usize) -> Vec<u64> {
        self.snapshots
            .get(n)
            .cloned()
            .unwrap_or_else(|| vec![0; m])
    }

    /// Extinction index: the cycle at whose end the system first emptied.
    pub fn tau(&self) -> u32 {
        self.cycles.saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PollingCaps {
    pub max_cycles: u32,
    pub max_customers: u64,
}

impl Default for PollingCaps {
    fn default() -> Self {
        PollingCaps {
            max_cycles: 10_000,
            max_customers: 10_000_000,
        }
    }
}

struct SystemState {
    queues: Vec<u64>,
    clock: f64,
    phi: f64,
    served: u64,
}

#[inline]
fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).unwrap().sample(rng) as u64
}

/// Serve one customer at station `i`: draw its service time, generate the
/// arrivals that occurred during it, then route the customer.
fn serve_one<R: Rng + ?Sized>(
    i: usize,
    env: &EnvState,
    mode: FinalProduct,
    state: &mut SystemState,
    rng: &mut R,
) {
    let tau = env.service[i].sample(rng);
    state.clock += tau;
    state.phi += match mode {
        FinalProduct::ServiceTime => tau,
        FinalProduct::Unit => 1.0,
    };
    state.served += 1;
    for j in 0..env.station_count() {
        state.queues[j] += poisson_count(env.eps[i][j] * tau, rng);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (dest, p) in env.gamma[i].iter().enumerate() {
        acc += p;
        if u < acc {
            if dest >= 1 {
                state.queues[dest - 1] += 1;
            }
            return;
        }
    }
}

/// Returns false if the customer cap was hit during the visit.
fn visit_station<R: Rng + ?Sized>(
    i: usize,
    env: &EnvState,
    mode: FinalProduct,
    state: &mut SystemState,
    caps: &PollingCaps,
    rng: &mut R,
) -> bool {
    match env.policy[i] {
        Policy::Gated => {
            // Serve exactly the customers present on arrival; arrivals and
            // feedback during the visit wait for the next cycle.
            let gate = std::mem::take(&mut state.queues[i]);
            for _ in 0..gate {
                if state.served >= caps.max_customers {
                    return false;
                }
                serve_one(i, env, mode, state, rng);
            }
        }
        Policy::Exhaustive => {
            while state.queues[i] > 0 {
                if state.served >= caps.max_customers {
                    return false;
                }
                state.queues[i] -= 1;
                serve_one(i, env, mode, state, rng);
            }
        }
    }
    true
}

/// Simulate one busy period started by a single customer arriving at station
/// `j0` (0-indexed) at time zero. Cycle 0 starts at station `j0` after the
/// initial zero-length switches; later cycles run the full route. A fresh
/// environment state is drawn at the start of each cycle.
pub fn simulate_busy_period_events<R: Rng + ?Sized>(
    j0: usize,
    model: &EnvModel,
    rng: &mut R,
    caps: &PollingCaps,
) -> BusyPeriodRecord {
    let m = model.m;
    let mut state = SystemState {
        queues: vec![0; m],
        clock: 0.0,
        phi: 0.0,
        served: 0,
    };
    state.queues[j0] = 1;
    let mut snapshots: Vec<Vec<u64>> = Vec::new();
    let mut capped = false;
    let mut cycle: u32 = 0;
    loop {
        let env = sample_env_state(model, rng);
        let first = if cycle == 0 { j0 } else { 0 };
        let mut ok = true;
        for i in first..m {
            if !visit_station(i, env, model.final_product, &mut state, caps, rng) {
                ok = false;
                break;
            }
        }
        if !ok {
            capped = true;
            break;
        }
        snapshots.push(state.queues.clone());
        cycle += 1;
        if state.queues.iter().all(|q| *q == 0) {
            break;
        }
        if cycle >= caps.max_cycles {
            capped = true;
            break;
        }
    }
    if model.final_product == FinalProduct::ServiceTime {
        debug_assert_eq!(state.phi.to_bits(), state.clock.to_bits());
    }
    BusyPeriodRecord {
        phi_total: state.phi,
        cycles: cycle,
        snapshots,
        capped,
    }
}
