//! Within-visit sampling for gated and exhaustive service, the per-cycle
//! offspring cascade, and the exact mean matrices behind them.
//!
//! A station draw produces the offspring counts left for later cycles plus a
//! final-product amount. The per-cycle law composes station draws: offspring
//! placed downstream of the visited station are expanded within the same
//! cycle. `station_means` computes the matching first moments in closed form,
//! so samplers and means cross-check each other.

use crate::env::{EnvState, FinalProduct, Policy};
use crate::mat::Mat;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use thiserror::Error;

/// One particle's draw: new customers per station and its final product.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDraw {
    pub theta: Vec<u64>,
    pub phi: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    /// The recursion guard tripped: a near-unstable or misconfigured station
    /// produced more service completions than the budget allows. The draw is
    /// discarded.
    #[error("sampling budget exhausted at station {station} (0-indexed)")]
    BudgetExhausted { station: usize },
}

/// Guard against runaway sub-busy periods; counts service completions.
#[derive(Debug, Clone)]
pub struct SampleBudget {
    remaining: u64,
}

impl SampleBudget {
    pub const DEFAULT_LIMIT: u64 = 1_000_000;

    pub fn new(limit: u64) -> Self {
        SampleBudget { remaining: limit }
    }

    #[inline]
    fn spend(&mut self, station: usize) -> Result<(), SampleError> {
        if self.remaining == 0 {
            return Err(SampleError::BudgetExhausted { station });
        }
        self.remaining -= 1;
        Ok(())
    }
}

impl Default for SampleBudget {
    fn default() -> Self {
        SampleBudget::new(Self::DEFAULT_LIMIT)
    }
}

#[inline]
fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).unwrap().sample(rng) as u64
}

/// Routing decision from a gamma row: 0 means "leaves the system",
/// `j >= 1` means "moves to station j-1".
#[inline]
fn route<R: Rng + ?Sized>(gamma_row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (dest, p) in gamma_row.iter().enumerate() {
        acc += p;
        if u < acc {
            return dest;
        }
    }
    gamma_row.len() - 1
}

/// One gated service at station `i`: the customer is served once, arrivals
/// during the service and the customer's routing destination all queue for a
/// later cycle. `phi` is the drawn service time (or 1 in unit mode).
pub fn gated_station_sample<R: Rng + ?Sized>(
    i: usize,
    env: &EnvState,
    mode: FinalProduct,
    rng: &mut R,
) -> OffspringDraw {
    let m = env.station_count();
    let tau = env.service[i].sample(rng);
    let mut theta = vec![0u64; m];
    for (j, slot) in theta.iter_mut().enumerate() {
        *slot = poisson_count(env.eps[i][j] * tau, rng);
    }
    let dest = route(&env.gamma[i], rng);
    if dest >= 1 {
        theta[dest - 1] += 1;
    }
    let phi = match mode {
        FinalProduct::ServiceTime => tau,
        FinalProduct::Unit => 1.0,
    };
    OffspringDraw { theta, phi }
}

/// One exhaustive visit triggered by a single customer at station `i`: the
/// full sub-busy period is simulated. Feedback to `i` and arrivals to `i`
/// are served within the visit; departures and arrivals elsewhere accumulate
/// into `theta`. `phi` is the total elapsed service time (or the number of
/// completed services in unit mode).
pub fn exhaustive_station_sample<R: Rng + ?Sized>(
    i: usize,
    env: &EnvState,
    mode: FinalProduct,
    rng: &mut R,
    budget: &mut SampleBudget,
) -> Result<OffspringDraw, SampleError> {
    let m = env.station_count();
    let mut theta = vec![0u64; m];
    let mut phi_time = 0.0;
    let mut completions = 0u64;
    let mut pending: u64 = 1;
    while pending > 0 {
        pending -= 1;
        // Serve one customer through its geometric number of service stages.
        loop {
            budget.spend(i)?;
            let tau = env.service[i].sample(rng);
            phi_time += tau;
            completions += 1;
            for j in 0..m {
                let k = poisson_count(env.eps[i][j] * tau, rng);
                if j == i {
                    pending += k;
                } else {
                    theta[j] += k;
                }
            }
            let dest = route(&env.gamma[i], rng);
            if dest == i + 1 {
                continue; // feedback: served again during this visit
            }
            if dest >= 1 {
                theta[dest - 1] += 1;
            }
            break;
        }
    }
    let phi = match mode {
        FinalProduct::ServiceTime => phi_time,
        FinalProduct::Unit => completions as f64,
    };
    Ok(OffspringDraw { theta, phi })
}

/// Dispatch on the station's policy.
pub fn station_sample<R: Rng + ?Sized>(
    i: usize,
    env: &EnvState,
    mode: FinalProduct,
    rng: &mut R,
    budget: &mut SampleBudget,
) -> Result<OffspringDraw, SampleError> {
    match env.policy[i] {
        Policy::Gated => Ok(gated_station_sample(i, env, mode, rng)),
        Policy::Exhaustive => exhaustive_station_sample(i, env, mode, rng, budget),
    }
}

/// Per-cycle offspring of one type-`i` particle: the station draw, with every
/// offspring placed downstream (station index > the station being expanded)
/// immediately expanded within the same cycle. Offspring at or before the
/// expanded station wait for the next cycle.
pub fn cycle_offspring_sample<R: Rng + ?Sized>(
    i: usize,
    env: &EnvState,
    mode: FinalProduct,
    rng: &mut R,
    budget: &mut SampleBudget,
) -> Result<OffspringDraw, SampleError> {
    let m = env.station_count();
    let mut xi = vec![0u64; m];
    let mut phi = 0.0;
    let mut work: Vec<(usize, u64)> = vec![(i, 1)];
    while let Some((k, count)) = work.pop() {
        for _ in 0..count {
            let draw = station_sample(k, env, mode, rng, budget)?;
            phi += draw.phi;
            for (j, &n) in draw.theta.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                if j > k {
                    work.push((j, n));
                } else {
                    xi[j] += n;
                }
            }
        }
    }
    Ok(OffspringDraw { theta: xi, phi })
}

/// First moments of the station draws and their per-cycle composition.
///
/// `h[i][j]` is the mean offspring at station `j` from one station-`i` draw
/// and `c[i]` its mean final product; `a`/`c_cycle` are the per-cycle
/// counterparts, present only when every station is stable. An exhaustive
/// station is stable when `(1 - gamma_ii) / E[tau_i] > eps_ii`; otherwise its
/// `h` row is infinite and `stable[i]` is false.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanPair {
    #[serde(rename = "H")]
    pub h: Mat,
    pub c: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Option<Mat>,
    #[serde(rename = "C")]
    pub c_cycle: Option<Vec<f64>>,
    pub stable: Vec<bool>,
}

/// Identity matrix with row `i` replaced by row `i` of `h`.
fn row_substitution_matrix(h: &Mat, i: usize) -> Mat {
    let mut out = Mat::identity(h.dim());
    for j in 0..h.dim() {
        out.set(i, j, h.get(i, j));
    }
    out
}

/// Per-cycle mean matrix as the ordered product of row-substitution matrices.
pub fn cycle_mean_matrix(h: &Mat) -> Mat {
    let mut a = row_substitution_matrix(h, 0);
    for i in 1..h.dim() {
        a = a.mul(&row_substitution_matrix(h, i));
    }
    a
}

/// Per-cycle mean final product by back-substitution on `(E - H^upper) C = c`.
pub fn cycle_mean_final_product(h: &Mat, c: &[f64]) -> Vec<f64> {
    let m = h.dim();
    let mut out = vec![0.0; m];
    for i in (0..m).rev() {
        let mut acc = c[i];
        for k in (i + 1)..m {
            acc += h.get(i, k) * out[k];
        }
        out[i] = acc;
    }
    out
}

/// Exact mean matrices and mean final products for one environment state.
pub fn station_means(env: &EnvState, mode: FinalProduct) -> MeanPair {
    let m = env.station_count();
    let mut h = Mat::zeros(m);
    let mut c = vec![0.0; m];
    let mut stable = vec![true; m];
    for i in 0..m {
        let et = env.service[i].mean();
        match env.policy[i] {
            Policy::Gated => {
                for j in 0..m {
                    h.set(i, j, env.gamma[i][j + 1] + env.eps[i][j] * et);
                }
                c[i] = match mode {
                    FinalProduct::ServiceTime => et,
                    FinalProduct::Unit => 1.0,
                };
            }
            Policy::Exhaustive => {
                let gii = env.gamma[i][i + 1];
                let eii = env.eps[i][i];
                let denom = 1.0 - gii - eii * et;
                if denom > 0.0 {
                    // First moment of the sub-busy-period fixed point at s = 1.
                    for j in 0..m {
                        if j == i {
                            continue;
                        }
                        h.set(i, j, (env.gamma[i][j + 1] + env.eps[i][j] * et) / denom);
                    }
                    c[i] = match mode {
                        FinalProduct::ServiceTime => et / denom,
                        FinalProduct::Unit => 1.0 / denom,
                    };
                } else {
                    stable[i] = false;
                    for j in 0..m {
                        if j != i {
                            h.set(i, j, f64::INFINITY);
                        }
                    }
                    c[i] = f64::INFINITY;
                }
            }
        }
    }
    let all_stable = stable.iter().all(|s| *s);
    let (a, c_cycle) = if all_stable {
        (Some(cycle_mean_matrix(&h)), Some(cycle_mean_final_product(&h, &c)))
    } else {
        (None, None)
    };
    MeanPair { h, c, a, c_cycle, stable }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ServiceDist;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn gated_state(m: usize) -> EnvState {
        EnvState {
            eps: vec![vec![0.0; m]; m],
            gamma: (0..m)
                .map(|_| {
                    let mut row = vec![0.0; m + 1];
                    row[0] = 1.0;
                    row
                })
                .collect(),
            service: vec![ServiceDist::Deterministic { value: 1.0 }; m],
            policy: vec![Policy::Gated; m],
        }
    }

    struct MeanAcc {
        n: u64,
        sum: Vec<f64>,
        sumsq: Vec<f64>,
    }

    impl MeanAcc {
        fn new(dim: usize) -> Self {
            MeanAcc { n: 0, sum: vec![0.0; dim], sumsq: vec![0.0; dim] }
        }

        fn add(&mut self, values: &[f64]) {
            self.n += 1;
            for (k, v) in values.iter().enumerate() {
                self.sum[k] += v;
                self.sumsq[k] += v * v;
            }
        }

        fn assert_close(&self, expected: &[f64], sigmas: f64, what: &str) {
            for (k, e) in expected.iter().enumerate() {
                let mean = self.sum[k] / self.n as f64;
                let var = (self.sumsq[k] / self.n as f64 - mean * mean).max(0.0);
                let se = (var / self.n as f64).sqrt();
                let tol = sigmas * se + 1e-12;
                assert!(
                    (mean - e).abs() <= tol,
                    "{what}[{k}]: empirical {mean} vs exact {e} +- {tol}"
                );
            }
        }
    }

    #[test]
    fn gated_no_arrivals_no_feedback() {
        let env = gated_state(1);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..100 {
            let d = gated_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng);
            assert_eq!(d.theta, vec![0]);
            assert_eq!(d.phi, 1.0);
        }
    }

    #[test]
    fn gated_poisson_mean() {
        // theta[0] ~ Poisson(0.8 * 0.5); 3 SE at 1e6 draws.
        let mut env = gated_state(1);
        env.eps[0][0] = 0.8;
        env.service[0] = ServiceDist::Deterministic { value: 0.5 };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut acc = MeanAcc::new(1);
        for _ in 0..1_000_000 {
            let d = gated_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng);
            acc.add(&[d.theta[0] as f64]);
        }
        acc.assert_close(&[0.4], 3.0, "gated poisson");
    }

    #[test]
    fn gated_bernoulli_routing() {
        let mut env = gated_state(1);
        env.gamma[0] = vec![0.8, 0.2];
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut acc = MeanAcc::new(1);
        for _ in 0..1_000_000 {
            let d = gated_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng);
            assert!(d.theta[0] <= 1);
            acc.add(&[d.theta[0] as f64]);
        }
        acc.assert_close(&[0.2], 3.0, "gated routing");
    }

    #[test]
    fn gated_phi_equals_drawn_service_time_bitwise() {
        let mut env = gated_state(1);
        env.eps[0][0] = 0.7;
        env.service[0] = ServiceDist::Exponential { rate: 2.0 };
        // Replay the same stream: tau is the first draw of the sampler.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut shadow = rng.clone();
        for _ in 0..1000 {
            let d = gated_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng);
            let tau = env.service[0].sample(&mut shadow);
            assert_eq!(d.phi.to_bits(), tau.to_bits());
            shadow = rng.clone();
        }
    }

    #[test]
    fn exhaustive_degenerates_to_single_service() {
        let mut env = gated_state(1);
        env.policy[0] = Policy::Exhaustive;
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut budget = SampleBudget::default();
        for _ in 0..100 {
            let d = exhaustive_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng, &mut budget)
                .unwrap();
            assert_eq!(d.theta, vec![0]);
            assert_eq!(d.phi, 1.0);
        }
    }

    #[test]
    fn exhaustive_feedback_doubles_service() {
        // gamma_ii = 0.5 and no arrivals: mean completions per customer is 2,
        // so mean phi = 2 E[tau]; 3 SE at 1e6 draws.
        let mut env = gated_state(1);
        env.policy[0] = Policy::Exhaustive;
        env.gamma[0] = vec![0.5, 0.5];
        env.service[0] = ServiceDist::Exponential { rate: 4.0 };
        let mut rng = ChaCha12Rng::seed_from_u64(500);
        let mut acc = MeanAcc::new(2);
        for _ in 0..1_000_000 {
            let mut budget = SampleBudget::default();
            let d = exhaustive_station_sample(0, &env, FinalProduct::Unit, &mut rng, &mut budget)
                .unwrap();
            let mut budget2 = SampleBudget::default();
            let t =
                exhaustive_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng, &mut budget2)
                    .unwrap();
            acc.add(&[d.phi, t.phi]);
        }
        acc.assert_close(&[2.0, 0.5], 3.0, "exhaustive feedback");
    }

    #[test]
    fn exhaustive_sub_busy_period_mean() {
        // Single-station sub-busy period: exp(2) services, self-arrival rate 1,
        // no feedback. Mean total time = E[tau] / (1 - eps * E[tau]) = 1.
        let mut env = gated_state(1);
        env.policy[0] = Policy::Exhaustive;
        env.eps[0][0] = 1.0;
        env.service[0] = ServiceDist::Exponential { rate: 2.0 };
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut acc = MeanAcc::new(1);
        for _ in 0..1_000_000 {
            let mut budget = SampleBudget::default();
            let d = exhaustive_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng, &mut budget)
                .unwrap();
            acc.add(&[d.phi]);
        }
        acc.assert_close(&[1.0], 3.0, "sub-busy mean");
    }

    #[test]
    fn exhaustive_leaves_nothing_at_own_station() {
        let mut env = gated_state(2);
        env.policy[0] = Policy::Exhaustive;
        env.eps[0] = vec![0.4, 0.3];
        env.gamma[0] = vec![0.6, 0.2, 0.2];
        env.service[0] = ServiceDist::Exponential { rate: 2.0 };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mut budget = SampleBudget::default();
            let d = exhaustive_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng, &mut budget)
                .unwrap();
            assert_eq!(d.theta[0], 0);
        }
    }

    #[test]
    fn budget_exhaustion_is_loud() {
        // Unstable: eps * E[tau] = 2 > 1 = 1 - gamma_ii.
        let mut env = gated_state(1);
        env.policy[0] = Policy::Exhaustive;
        env.eps[0][0] = 2.0;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut budget = SampleBudget::new(10_000);
        let out = exhaustive_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng, &mut budget);
        assert_eq!(out, Err(SampleError::BudgetExhausted { station: 0 }));
    }

    #[test]
    fn cycle_sample_forced_composition() {
        // Station 0 routes its customer to station 1 deterministically;
        // station 1 expands to nothing. xi = 0, phi = 2.
        let mut env = gated_state(2);
        env.gamma[0] = vec![0.0, 0.0, 1.0];
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut budget = SampleBudget::default();
        let d = cycle_offspring_sample(0, &env, FinalProduct::ServiceTime, &mut rng, &mut budget)
            .unwrap();
        assert_eq!(d.theta, vec![0, 0]);
        assert_eq!(d.phi, 2.0);
    }

    #[test]
    fn cycle_sample_single_station_matches_station_sample() {
        let mut env = gated_state(1);
        env.eps[0][0] = 0.6;
        env.gamma[0] = vec![0.7, 0.3];
        env.service[0] = ServiceDist::Exponential { rate: 2.0 };
        let mut rng_a = ChaCha12Rng::seed_from_u64(10);
        let mut rng_b = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let mut budget = SampleBudget::default();
            let a = cycle_offspring_sample(0, &env, FinalProduct::ServiceTime, &mut rng_a, &mut budget)
                .unwrap();
            let b = gated_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng_b);
            assert_eq!(a, b);
        }
    }

    fn generic_m2() -> EnvState {
        EnvState {
            eps: vec![vec![0.5, 0.4], vec![0.3, 0.2]],
            gamma: vec![vec![0.7, 0.0, 0.3], vec![0.5, 0.3, 0.2]],
            service: vec![
                ServiceDist::Exponential { rate: 2.5 },
                ServiceDist::Exponential { rate: 2.0 },
            ],
            policy: vec![Policy::Exhaustive, Policy::Gated],
        }
    }

    #[test]
    fn station_means_gated_example() {
        let mut env = gated_state(1);
        env.eps[0][0] = 0.5;
        env.gamma[0] = vec![0.8, 0.2];
        let mp = station_means(&env, FinalProduct::ServiceTime);
        assert!((mp.h.get(0, 0) - 0.7).abs() < 1e-15);
        assert_eq!(mp.c[0], 1.0);
        assert_eq!(mp.stable, vec![true]);
    }

    #[test]
    fn cycle_mean_matrix_example() {
        let h = Mat::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]);
        let a = cycle_mean_matrix(&h);
        let expected = Mat::from_rows(&[vec![0.16, 0.08], vec![0.3, 0.4]]);
        assert!(a.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn cycle_mean_final_product_example() {
        let h = Mat::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]);
        let c = cycle_mean_final_product(&h, &[1.0, 1.0]);
        assert!((c[0] - 1.2).abs() < 1e-15);
        assert!((c[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_exponential_closed_forms_agree() {
        // With gamma_ii = 0 and exponential service, the mean offspring
        // simplifies to (mu gamma_ij + eps_ij) / (mu - eps_ii).
        let mut env = gated_state(2);
        env.policy[0] = Policy::Exhaustive;
        env.eps[0] = vec![1.0, 0.4];
        env.gamma[0] = vec![0.9, 0.0, 0.1];
        env.service[0] = ServiceDist::Exponential { rate: 2.0 };
        let mp = station_means(&env, FinalProduct::ServiceTime);
        let mu = 2.0;
        let expected = (mu * 0.1 + 0.4) / (mu - 1.0);
        assert!((mp.h.get(0, 1) - expected).abs() < 1e-15);
        assert!((mp.h.get(0, 1) - 0.6).abs() < 1e-15);
        assert_eq!(mp.h.get(0, 0), 0.0);
    }

    #[test]
    fn exhaustive_feedback_routing_is_certain_delivery() {
        // gamma = (0, 0.5 self, 0.5 ahead), no arrivals: the customer is
        // re-served a geometric number of times and then must end up at
        // station 1, so h_01 = 1 exactly. The sampler agrees per draw.
        let mut env = gated_state(2);
        env.policy[0] = Policy::Exhaustive;
        env.gamma[0] = vec![0.0, 0.5, 0.5];
        let mp = station_means(&env, FinalProduct::ServiceTime);
        assert!((mp.h.get(0, 1) - 1.0).abs() < 1e-15);
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..2000 {
            let mut budget = SampleBudget::default();
            let d = exhaustive_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng, &mut budget)
                .unwrap();
            assert_eq!(d.theta, vec![0, 1]);
        }
    }

    #[test]
    fn exhaustive_means_with_feedback_and_arrivals() {
        // gamma_ii = 0.1, self arrivals and cross arrivals both active.
        let mut env = gated_state(2);
        env.policy[0] = Policy::Exhaustive;
        env.eps[0] = vec![0.5, 0.3];
        env.gamma[0] = vec![0.6, 0.1, 0.3];
        env.service[0] = ServiceDist::Gamma { shape: 2.0, rate: 5.0 };
        let mp = station_means(&env, FinalProduct::ServiceTime);
        let et = 0.4;
        let denom = 1.0 - 0.1 - 0.5 * et;
        assert!((mp.h.get(0, 1) - (0.3 + 0.3 * et) / denom).abs() < 1e-15);
        assert!((mp.c[0] - et / denom).abs() < 1e-15);
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let mut acc = MeanAcc::new(2);
        for _ in 0..1_000_000 {
            let mut budget = SampleBudget::default();
            let d = exhaustive_station_sample(0, &env, FinalProduct::ServiceTime, &mut rng, &mut budget)
                .unwrap();
            acc.add(&[d.theta[1] as f64, d.phi]);
        }
        acc.assert_close(&[mp.h.get(0, 1), mp.c[0]], 4.0, "feedback means");
    }

    #[test]
    fn unstable_station_withholds_cycle_means() {
        let mut env = gated_state(1);
        env.policy[0] = Policy::Exhaustive;
        env.eps[0][0] = 2.0;
        let mp = station_means(&env, FinalProduct::ServiceTime);
        assert_eq!(mp.stable, vec![false]);
        assert!(mp.a.is_none());
        assert!(mp.c_cycle.is_none());
        assert!(mp.c[0].is_infinite());
    }

    /// Mean-matrix recursion oracle, independent of the factorized product:
    /// a_mj = h_mj and a_ij = h_ij [j <= i] + sum_{k>i} h_ik a_kj.
    fn recursion_oracle(h: &Mat) -> Mat {
        let m = h.dim();
        let mut a = Mat::zeros(m);
        for i in (0..m).rev() {
            for j in 0..m {
                let mut v = if j <= i { h.get(i, j) } else { 0.0 };
                for k in (i + 1)..m {
                    v += h.get(i, k) * a.get(k, j);
                }
                a.set(i, j, v);
            }
        }
        a
    }

    /// Neumann-series oracle for (E - H^upper)^{-1} c; H^upper is nilpotent.
    fn neumann_oracle(h: &Mat, c: &[f64]) -> Vec<f64> {
        let m = h.dim();
        let upper = h.strictly_upper();
        let mut total = c.to_vec();
        let mut term = c.to_vec();
        for _ in 1..m {
            term = upper.mul_vec(&term);
            for (t, v) in total.iter_mut().zip(&term) {
                *t += v;
            }
        }
        total
    }

    #[test]
    fn factorization_matches_recursion_on_mixed_state() {
        let env = generic_m2();
        let mp = station_means(&env, FinalProduct::ServiceTime);
        let a = mp.a.unwrap();
        assert!(a.max_abs_diff(&recursion_oracle(&mp.h)) < 1e-12);
        let c_cycle = mp.c_cycle.unwrap();
        let oracle = neumann_oracle(&mp.h, &mp.c);
        for (x, y) in c_cycle.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn station_samplers_match_means() {
        // 4 SE at 1e6 draws per station, both policies, theta and phi.
        let env = generic_m2();
        let mp = station_means(&env, FinalProduct::ServiceTime);
        for i in 0..2 {
            let mut rng = ChaCha12Rng::seed_from_u64(20 + i as u64);
            let mut acc = MeanAcc::new(3);
            for _ in 0..1_000_000 {
                let mut budget = SampleBudget::default();
                let d = station_sample(i, &env, FinalProduct::ServiceTime, &mut rng, &mut budget)
                    .unwrap();
                acc.add(&[d.theta[0] as f64, d.theta[1] as f64, d.phi]);
            }
            let expected = [mp.h.get(i, 0), mp.h.get(i, 1), mp.c[i]];
            acc.assert_close(&expected, 4.0, &format!("station {i}"));
        }
    }

    #[test]
    fn cycle_sampler_matches_cycle_means() {
        let env = generic_m2();
        let mp = station_means(&env, FinalProduct::ServiceTime);
        let a = mp.a.unwrap();
        let c_cycle = mp.c_cycle.unwrap();
        for i in 0..2 {
            let mut rng = ChaCha12Rng::seed_from_u64(30 + i as u64);
            let mut acc = MeanAcc::new(3);
            for _ in 0..1_000_000 {
                let mut budget = SampleBudget::default();
                let d = cycle_offspring_sample(i, &env, FinalProduct::ServiceTime, &mut rng, &mut budget)
                    .unwrap();
                acc.add(&[d.theta[0] as f64, d.theta[1] as f64, d.phi]);
            }
            let expected = [a.get(i, 0), a.get(i, 1), c_cycle[i]];
            acc.assert_close(&expected, 4.0, &format!("cycle {i}"));
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_service() -> impl Strategy<Value = ServiceDist> {
            prop_oneof![
                (0.1f64..2.0).prop_map(|value| ServiceDist::Deterministic { value }),
                (0.5f64..4.0).prop_map(|rate| ServiceDist::Exponential { rate }),
                ((0.5f64..3.0), (0.5f64..4.0))
                    .prop_map(|(shape, rate)| ServiceDist::Gamma { shape, rate }),
                ((-1.0f64..0.5), (0.1f64..0.8))
                    .prop_map(|(log_mean, log_sd)| ServiceDist::Lognormal { log_mean, log_sd }),
            ]
        }

        fn arb_state(m: usize) -> impl Strategy<Value = EnvState> {
            let eps = proptest::collection::vec(
                proptest::collection::vec(0.0f64..0.5, m),
                m,
            );
            let gamma = proptest::collection::vec(
                proptest::collection::vec(0.01f64..1.0, m + 1),
                m,
            )
            .prop_map(|rows| {
                rows.into_iter()
                    .map(|row| {
                        let s: f64 = row.iter().sum();
                        row.into_iter().map(|g| g / s).collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>()
            });
            let service = proptest::collection::vec(arb_service(), m);
            let policy = proptest::collection::vec(
                prop_oneof![Just(Policy::Gated), Just(Policy::Exhaustive)],
                m,
            );
            (eps, gamma, service, policy).prop_map(|(eps, gamma, service, policy)| EnvState {
                eps,
                gamma,
                service,
                policy,
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn factorization_identity_on_random_states(state in (1usize..5).prop_flat_map(arb_state)) {
                let mp = station_means(&state, FinalProduct::ServiceTime);
                if let Some(a) = &mp.a {
                    let oracle = recursion_oracle(&mp.h);
                    prop_assert!(a.max_abs_diff(&oracle) <= 1e-12);
                    let c_cycle = mp.c_cycle.as_ref().unwrap();
                    let c_oracle = neumann_oracle(&mp.h, &mp.c);
                    for (x, y) in c_cycle.iter().zip(&c_oracle) {
                        prop_assert!((x - y).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
