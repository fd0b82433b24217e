//! The multitype branching engine: generation-by-generation evolution under
//! per-generation environment draws, with final-product accumulation and
//! extinction-time recording.
//!
//! One generation corresponds to one server cycle of the polling system; the
//! end-of-cycle queue vector has the law of the generation's particle
//! counts, which is what the equivalence tests exercise.

use crate::env::{sample_env_state, EnvModel, EnvState, FinalProduct};
use crate::policy::{cycle_offspring_sample, OffspringDraw, SampleBudget, SampleError};
use crate::polling::BusyPeriodRecord;
use rand::Rng;

/// Particle counts per type plus the final product accumulated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub z: Vec<u64>,
    pub phi_acc: f64,
    pub generation: u32,
}

impl Population {
    pub fn new(z: Vec<u64>) -> Self {
        Population {
            z,
            phi_acc: 0.0,
            generation: 0,
        }
    }

    /// Single particle of type `i` among `m` types.
    pub fn single(i: usize, m: usize) -> Self {
        let mut z = vec![0; m];
        z[i] = 1;
        Population::new(z)
    }

    pub fn total(&self) -> u64 {
        self.z.iter().sum()
    }

    pub fn is_extinct(&self) -> bool {
        self.z.iter().all(|n| *n == 0)
    }
}

/// Extinction generation, or the generation at which a cap stopped the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtinctionTime {
    Extinct(u32),
    NotExtinctAtCap(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Population>,
    pub tau: ExtinctionTime,
    /// Final accumulated product; present only when the run went extinct.
    pub phi_total: Option<f64>,
}

impl Trajectory {
    pub fn capped(&self) -> bool {
        matches!(self.tau, ExtinctionTime::NotExtinctAtCap(_))
    }

    pub fn last(&self) -> &Population {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }
}

/// Run caps. `max_population` bounds the cumulative number of particles
/// simulated across the whole run; capped runs are reported, never silently
/// truncated.
#[derive(Debug, Clone, Copy)]
pub struct Caps {
    pub max_generations: u32,
    pub max_population: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_generations: 10_000,
            max_population: 10_000_000,
        }
    }
}

/// Per-particle offspring source for one generation. The environment-backed
/// implementation draws the per-cycle cascade; tests substitute forced laws.
pub trait CycleSampler {
    fn types(&self) -> usize;
    fn draw<R: Rng + ?Sized>(&self, type_index: usize, rng: &mut R)
        -> Result<OffspringDraw, SampleError>;
}

/// Samples the per-cycle offspring law of an environment state.
pub struct EnvSampler<'a> {
    pub env: &'a EnvState,
    pub mode: FinalProduct,
    pub budget_limit: u64,
}

impl<'a> EnvSampler<'a> {
    pub fn new(env: &'a EnvState, mode: FinalProduct) -> Self {
        EnvSampler {
            env,
            mode,
            budget_limit: SampleBudget::DEFAULT_LIMIT,
        }
    }
}

impl CycleSampler for EnvSampler<'_> {
    fn types(&self) -> usize {
        self.env.station_count()
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        type_index: usize,
        rng: &mut R,
    ) -> Result<OffspringDraw, SampleError> {
        let mut budget = SampleBudget::new(self.budget_limit);
        cycle_offspring_sample(type_index, self.env, self.mode, rng, &mut budget)
    }
}

/// Advance one generation: every particle draws offspring and a final-product
/// increment independently; the draws are summed.
pub fn step_generation<R: Rng + ?Sized>(
    pop: &Population,
    sampler: &impl CycleSampler,
    rng: &mut R,
) -> Result<Population, SampleError> {
    let m = sampler.types();
    let mut z = vec![0u64; m];
    let mut phi = pop.phi_acc;
    for (i, &count) in pop.z.iter().enumerate() {
        for _ in 0..count {
            let draw = sampler.draw(i, rng)?;
            for (slot, &n) in z.iter_mut().zip(&draw.theta) {
                *slot += n;
            }
            phi += draw.phi;
        }
    }
    Ok(Population {
        z,
        phi_acc: phi,
        generation: pop.generation + 1,
    })
}

/// Iterate generations with a fresh environment draw per generation until
/// extinction or a cap. Cap hits are outcomes, not errors; a budget failure
/// inside a draw aborts the run and is reported as an error.
pub fn run_to_extinction<R: Rng + ?Sized>(
    init: Population,
    model: &EnvModel,
    rng: &mut R,
    caps: &Caps,
) -> Result<Trajectory, SampleError> {
    let mut snapshots = vec![init.clone()];
    let mut pop = init;
    let mut simulated: u64 = 0;
    loop {
        if pop.is_extinct() {
            let phi = pop.phi_acc;
            let tau = pop.generation;
            return Ok(Trajectory {
                snapshots,
                tau: ExtinctionTime::Extinct(tau),
                phi_total: Some(phi),
            });
        }
        if pop.generation >= caps.max_generations {
            return Ok(Trajectory {
                tau: ExtinctionTime::NotExtinctAtCap(pop.generation),
                snapshots,
                phi_total: None,
            });
        }
        simulated += pop.total();
        if simulated > caps.max_population {
            return Ok(Trajectory {
                tau: ExtinctionTime::NotExtinctAtCap(pop.generation),
                snapshots,
                phi_total: None,
            });
        }
        let env = sample_env_state(model, rng);
        let sampler = EnvSampler::new(env, model.final_product);
        pop = step_generation(&pop, &sampler, rng)?;
        snapshots.push(pop.clone());
    }
}

/// One busy period in branching form: generation 0 is a single per-cycle
/// draw for type `j0` (the initial customer's cascade through cycle 0), then
/// the process runs to extinction. Snapshots play the role of end-of-cycle
/// queue states.
pub fn simulate_busy_period_branching<R: Rng + ?Sized>(
    j0: usize,
    model: &EnvModel,
    rng: &mut R,
    caps: &Caps,
) -> Result<BusyPeriodRecord, SampleError> {
    let env0 = sample_env_state(model, rng);
    let sampler = EnvSampler::new(env0, model.final_product);
    let draw = sampler.draw(j0, rng)?;
    let init = Population {
        z: draw.theta,
        phi_acc: draw.phi,
        generation: 0,
    };
    let traj = run_to_extinction(init, model, rng, caps)?;
    Ok(BusyPeriodRecord {
        phi_total: traj.last().phi_acc,
        cycles: traj.snapshots.len() as u32,
        snapshots: traj.snapshots.into_iter().map(|p| p.z).collect(),
        capped: matches!(traj.tau, ExtinctionTime::NotExtinctAtCap(_)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Policy, ServiceDist};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Deterministic offspring law for forced-composition tests.
    struct FixedSampler {
        theta: Vec<u64>,
        phi: f64,
    }

    impl CycleSampler for FixedSampler {
        fn types(&self) -> usize {
            self.theta.len()
        }

        fn draw<R: Rng + ?Sized>(&self, _i: usize, _rng: &mut R)
            -> Result<OffspringDraw, SampleError> {
            Ok(OffspringDraw {
                theta: self.theta.clone(),
                phi: self.phi,
            })
        }
    }

    fn scalar_gated(atoms: &[(f64, f64)]) -> EnvModel {
        // atoms: list of (eps value, weight); service deterministic 1.
        EnvModel {
            m: 1,
            final_product: FinalProduct::ServiceTime,
            states: atoms
                .iter()
                .map(|(e, _)| EnvState {
                    eps: vec![vec![*e]],
                    gamma: vec![vec![1.0, 0.0]],
                    service: vec![ServiceDist::Deterministic { value: 1.0 }],
                    policy: vec![Policy::Gated],
                })
                .collect(),
            probs: atoms.iter().map(|(_, p)| *p).collect(),
        }
    }

    #[test]
    fn extinct_population_is_absorbing() {
        let pop = Population::new(vec![0, 0]);
        let sampler = FixedSampler { theta: vec![1, 1], phi: 1.0 };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let next = step_generation(&pop, &sampler, &mut rng).unwrap();
        assert_eq!(next.z, vec![0, 0]);
        assert_eq!(next.phi_acc, 0.0);
        assert_eq!(next.generation, 1);
    }

    #[test]
    fn forced_offspring_step() {
        let pop = Population::new(vec![2, 0]);
        let sampler = FixedSampler { theta: vec![1, 1], phi: 0.5 };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let next = step_generation(&pop, &sampler, &mut rng).unwrap();
        assert_eq!(next.z, vec![2, 2]);
        assert_eq!(next.phi_acc, 1.0);
    }

    #[test]
    fn step_mean_matches_offspring_mean() {
        // 1000 particles with mean offspring 0.5 each: E[z'] = 500,
        // Var = 1000 * Var(one draw); 4 SE over 200 repetitions.
        let model = scalar_gated(&[(0.5, 1.0)]);
        let env = &model.states[0];
        let sampler = EnvSampler::new(env, FinalProduct::ServiceTime);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let reps = 200;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            let pop = Population::new(vec![1000]);
            let next = step_generation(&pop, &sampler, &mut rng).unwrap();
            let v = next.z[0] as f64;
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / reps as f64;
        let var = (sumsq / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt();
        assert!((mean - 500.0).abs() <= 4.0 * se, "mean {mean} vs 500 +- {}", 4.0 * se);
    }

    #[test]
    fn extinct_at_start() {
        let model = scalar_gated(&[(0.5, 1.0)]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut init = Population::new(vec![0]);
        init.phi_acc = 2.5;
        let traj = run_to_extinction(init, &model, &mut rng, &Caps::default()).unwrap();
        assert_eq!(traj.tau, ExtinctionTime::Extinct(0));
        assert_eq!(traj.phi_total, Some(2.5));
    }

    #[test]
    fn single_particle_no_offspring() {
        let model = scalar_gated(&[(0.0, 1.0)]);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let traj =
            run_to_extinction(Population::new(vec![1]), &model, &mut rng, &Caps::default())
                .unwrap();
        assert_eq!(traj.tau, ExtinctionTime::Extinct(1));
        assert_eq!(traj.phi_total, Some(1.0));
    }

    #[test]
    fn generation_cap_reported() {
        let model = scalar_gated(&[(2.0, 1.0)]);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let caps = Caps { max_generations: 5, max_population: u64::MAX };
        let traj =
            run_to_extinction(Population::new(vec![100]), &model, &mut rng, &caps).unwrap();
        if traj.capped() {
            assert_eq!(traj.tau, ExtinctionTime::NotExtinctAtCap(5));
            assert!(traj.phi_total.is_none());
        }
    }

    #[test]
    fn busy_period_trivial() {
        let model = scalar_gated(&[(0.0, 1.0)]);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let rec = simulate_busy_period_branching(0, &model, &mut rng, &Caps::default()).unwrap();
        assert_eq!(rec.phi_total, 1.0);
        assert_eq!(rec.cycles, 1);
        assert_eq!(rec.snapshots, vec![vec![0]]);
        assert!(!rec.capped);
    }

    #[test]
    fn survival_decays_at_least_geometrically() {
        // Fitted log-slope of the survival curve over n in [5, 25] is
        // negative (rate > 0) for the subcritical reference mixture.
        use crate::tails::survival_fit;
        let model = scalar_gated(&[(0.5, 2.0 / 3.0), (2.0, 1.0 / 3.0)]);
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        let taus: Vec<u32> = (0..30_000)
            .map(|_| {
                let traj =
                    run_to_extinction(Population::new(vec![1]), &model, &mut rng, &Caps::default())
                        .unwrap();
                match traj.tau {
                    ExtinctionTime::Extinct(t) => t,
                    ExtinctionTime::NotExtinctAtCap(t) => t,
                }
            })
            .collect();
        let fit = survival_fit(&taus, Some((5, 25))).unwrap();
        assert!(fit.rate > 0.0, "survival decay rate {}", fit.rate);
    }

    #[test]
    fn busy_period_mean_matches_both_routes() {
        // Subcritical with all atoms below 1: E[Phi] = mean(C)/(1 - mean(a)),
        // and the branching and event simulators agree within Monte Carlo
        // error on it.
        let model = scalar_gated(&[(0.5, 0.5), (0.8, 0.5)]);
        let exact = 1.0 / (1.0 - 0.65);
        let reps = 30_000;
        let stats = |samples: &[f64]| -> (f64, f64) {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, (var / n).sqrt())
        };
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let branching: Vec<f64> = (0..reps)
            .map(|_| {
                simulate_busy_period_branching(0, &model, &mut rng, &Caps::default())
                    .unwrap()
                    .phi_total
            })
            .collect();
        let mut rng2 = ChaCha12Rng::seed_from_u64(62);
        let events: Vec<f64> = (0..reps)
            .map(|_| {
                crate::polling::simulate_busy_period_events(
                    0,
                    &model,
                    &mut rng2,
                    &crate::polling::PollingCaps::default(),
                )
                .phi_total
            })
            .collect();
        let (mb, sb) = stats(&branching);
        let (me, se) = stats(&events);
        assert!((mb - exact).abs() <= 4.0 * sb, "branching mean {mb} vs {exact} +- {}", 4.0 * sb);
        assert!((me - exact).abs() <= 4.0 * se, "events mean {me} vs {exact} +- {}", 4.0 * se);
        let joint = (sb * sb + se * se).sqrt();
        assert!((mb - me).abs() <= 4.0 * joint, "cross-engine means {mb} vs {me}");
    }

    #[test]
    fn conditional_mean_per_environment_state() {
        // E[z(n+1) | z(n), env] = z(n) * A(env), per state, 4 SE.
        use crate::policy::station_means;
        let model = scalar_gated(&[(0.5, 2.0 / 3.0), (2.0, 1.0 / 3.0)]);
        for (k, env) in model.states.iter().enumerate() {
            let a = station_means(env, FinalProduct::ServiceTime).a.unwrap().get(0, 0);
            let sampler = EnvSampler::new(env, FinalProduct::ServiceTime);
            let mut rng = ChaCha12Rng::seed_from_u64(50 + k as u64);
            let z0 = 50u64;
            let reps = 4000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..reps {
                let next =
                    step_generation(&Population::new(vec![z0]), &sampler, &mut rng).unwrap();
                let v = next.z[0] as f64;
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / reps as f64;
            let var = (sumsq / reps as f64 - mean * mean).max(0.0);
            let se = (var / reps as f64).sqrt();
            let expected = z0 as f64 * a;
            assert!(
                (mean - expected).abs() <= 4.0 * se,
                "state {k}: {mean} vs {expected} +- {}",
                4.0 * se
            );
        }
    }

    #[test]
    fn branching_additivity() {
        // Two independent runs from e_1 and e_2 summed match one run from
        // (1,1) in mean and variance of z(3), within Monte Carlo error.
        let env = EnvState {
            eps: vec![vec![0.3, 0.2], vec![0.1, 0.3]],
            gamma: vec![vec![0.7, 0.1, 0.2], vec![0.6, 0.3, 0.1]],
            service: vec![
                ServiceDist::Exponential { rate: 2.0 },
                ServiceDist::Deterministic { value: 0.5 },
            ],
            policy: vec![Policy::Gated, Policy::Gated],
        };
        let model = EnvModel {
            m: 2,
            final_product: FinalProduct::ServiceTime,
            states: vec![env],
            probs: vec![1.0],
        };
        let reps = 100_000;
        let run = |seed: u64, init: Vec<u64>| -> Vec<f64> {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut totals = Vec::with_capacity(reps);
            for _ in 0..reps {
                let mut pop = Population::new(init.clone());
                for _ in 0..3 {
                    if pop.is_extinct() {
                        break;
                    }
                    let envk = sample_env_state(&model, &mut rng);
                    let sampler = EnvSampler::new(envk, FinalProduct::ServiceTime);
                    pop = step_generation(&pop, &sampler, &mut rng).unwrap();
                }
                totals.push(pop.total() as f64);
            }
            totals
        };
        let a = run(100, vec![1, 0]);
        let b = run(101, vec![0, 1]);
        let c = run(102, vec![1, 1]);
        let summed: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let stats = |v: &[f64]| -> (f64, f64) {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var)
        };
        let (ms, vs) = stats(&summed);
        let (mc, vc) = stats(&c);
        let n = reps as f64;
        let se_mean = ((vs + vc) / n).sqrt();
        assert!((ms - mc).abs() <= 4.0 * se_mean, "means {ms} vs {mc} +- {}", 4.0 * se_mean);
        // Variance comparison at a loose Monte Carlo tolerance.
        let se_var = (vs + vc) * (2.0 / n).sqrt();
        assert!((vs - vc).abs() <= 6.0 * se_var + 0.05 * (vs + vc));
    }

    #[test]
    fn moment_decay_for_subcritical_reference() {
        // Mean multipliers {0.5 w.p. 3/4, 2 w.p. 1/4}: E a = 0.875, so the
        // sample mean of ||z(n)|| decays by 0.875 per generation. Checked:
        // nonincreasing for n >= 5 (within noise) and a factor >= 2 drop
        // from n = 5 to n = 15 over 1e5 replicas.
        let model = scalar_gated(&[(0.5, 0.75), (2.0, 0.25)]);
        let reps = 100_000usize;
        let horizon = 16usize;
        let mut sums = vec![0.0f64; horizon];
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..reps {
            let mut pop = Population::new(vec![1]);
            sums[0] += pop.total() as f64;
            for n in 1..horizon {
                if !pop.is_extinct() {
                    let env = sample_env_state(&model, &mut rng);
                    let sampler = EnvSampler::new(env, FinalProduct::ServiceTime);
                    pop = step_generation(&pop, &sampler, &mut rng).unwrap();
                }
                sums[n] += pop.total() as f64;
            }
        }
        let means: Vec<f64> = sums.iter().map(|s| s / reps as f64).collect();
        for n in 5..horizon - 1 {
            assert!(
                means[n + 1] <= means[n] * 1.02,
                "mean ||z|| rose from {} to {} at n={}",
                means[n],
                means[n + 1],
                n
            );
        }
        assert!(
            means[15] <= means[5] / 2.0,
            "no factor-2 drop: {} vs {}",
            means[5],
            means[15]
        );
    }
}
