use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;

use super::config::{AlgorithmSpec, ExperimentConfig};
use crate::environment::{EnvironmentSpec, RoundSample};
use crate::error::{Error, Result};
use crate::learners::{
    Exp4Config, Exp4State, ExploreFirst, ExplorePhase, Learner, LinUcb, Uniform,
};
use crate::modcb::{Advance, ModCbState};
use crate::util::{derive_seed, rng_from_seed, stable_hash, SimRng};

/// One logged round of one learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub action: usize,
    pub loss: f64,
    /// `f*(x, a) − f*(x, π*(x))`, never negative.
    pub pseudo_regret_increment: f64,
    /// `ℓ(a) − ℓ(π*(x))`.
    pub realized_regret_increment: f64,
    pub pseudo_regret_cum: f64,
    pub realized_regret_cum: f64,
    /// Current class for ModCB, the fixed class for the oracle, 0 otherwise.
    pub m_hat: usize,
    pub explored: bool,
}

/// All rounds of one (replicate, algorithm) run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub replicate: usize,
    pub algorithm: String,
    pub records: Vec<RoundRecord>,
    /// Class changes, for ModCB.
    pub advances: Vec<Advance>,
    /// FNV digest of the context/loss stream the learner faced.
    pub stream_digest: u64,
}

impl Trajectory {
    pub fn final_pseudo_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.pseudo_regret_cum)
    }
}

enum Agent {
    ModCb {
        state: Box<ModCbState>,
        fixed_class: Option<usize>,
    },
    LinUcb(LinUcb),
    Exp4(Box<Exp4State>),
    ExploreFirst(Box<ExploreFirst>),
    Uniform(Uniform),
}

impl Agent {
    fn build(
        spec: &AlgorithmSpec,
        env: &EnvironmentSpec,
        horizon: usize,
        rng: &mut SimRng,
    ) -> Result<Agent> {
        let dims = &env.features.dims;
        let k = env.num_actions();
        Ok(match spec {
            AlgorithmSpec::ModCB { settings, .. } => Agent::ModCb {
                state: Box::new(ModCbState::new(
                    dims.clone(),
                    settings.params(env, dims.len(), horizon),
                    settings.policy_budget,
                    settings.test_every,
                )?),
                fixed_class: None,
            },
            AlgorithmSpec::Oracle {
                settings,
                class_index,
                ..
            } => {
                let c = class_index.unwrap_or(env.m_star);
                Agent::ModCb {
                    state: Box::new(ModCbState::new(
                        vec![dims[c - 1]],
                        settings.params(env, 1, horizon),
                        settings.policy_budget,
                        settings.test_every,
                    )?),
                    fixed_class: Some(c),
                }
            }
            AlgorithmSpec::LinUCB {
                premultiplier,
                ridge,
                ..
            } => Agent::LinUcb(LinUcb::new(env.ambient_dim(), *premultiplier, *ridge)),
            AlgorithmSpec::Exp4IXOnly {
                class_index,
                policy_budget,
                delta,
                ..
            } => Agent::Exp4(Box::new(Exp4State::new(Exp4Config::linear(
                dims[class_index - 1],
                *policy_budget,
                k,
                horizon,
                *delta,
                env.tau,
                env.gamma,
            )))),
            AlgorithmSpec::ExploreFirst {
                delta_constant,
                small_class,
                large_class,
                small_size,
                large_size,
                ..
            } => Agent::ExploreFirst(Box::new(ExploreFirst::sampled(
                dims[small_class.unwrap_or(1) - 1],
                *small_size,
                dims[large_class.unwrap_or(dims.len()) - 1],
                *large_size,
                env.tau / env.gamma,
                k,
                horizon,
                *delta_constant,
                rng,
            ))),
            AlgorithmSpec::Uniform { .. } => Agent::Uniform(Uniform { num_actions: k }),
        })
    }

    /// Plays one round; returns `(action, explored, m_hat)`.
    fn play(&mut self, sample: &RoundSample, rng: &mut SimRng) -> (usize, bool, usize) {
        let feats = &sample.features;
        match self {
            Agent::ModCb { state, fixed_class } => {
                let r = state.step(sample, rng);
                (r.action, r.explored, fixed_class.unwrap_or(r.m_hat))
            }
            Agent::LinUcb(l) => plain(l, sample, rng),
            Agent::Exp4(l) => plain(l.as_mut(), sample, rng),
            Agent::ExploreFirst(l) => {
                let a = l.act(feats, rng);
                let explored = matches!(l.phase(), ExplorePhase::Explore1 | ExplorePhase::Explore2);
                l.update(feats, a, sample.loss[a]);
                (a, explored, 0)
            }
            Agent::Uniform(l) => plain(l, sample, rng),
        }
    }
}

fn plain<L: Learner>(l: &mut L, sample: &RoundSample, rng: &mut SimRng) -> (usize, bool, usize) {
    let a = l.act(&sample.features, rng);
    l.update(&sample.features, a, sample.loss[a]);
    (a, false, 0)
}

fn fnv_update(h: &mut u64, bits: u64) {
    for b in bits.to_le_bytes() {
        *h ^= u64::from(b);
        *h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
}

/// Seed of the environment stream for a replicate; shared by all algorithms.
pub fn environment_seed(base_seed: u64, replicate: usize) -> u64 {
    derive_seed(base_seed, &[replicate as u64])
}

/// Seed of a learner's own randomness.
pub fn learner_seed(base_seed: u64, replicate: usize, label: &str) -> u64 {
    derive_seed(base_seed, &[replicate as u64, stable_hash(label)])
}

/// Runs one algorithm for `horizon` rounds on one replicate's environment stream.
pub fn run_replicate(
    config: &ExperimentConfig,
    algorithm: usize,
    replicate: usize,
) -> Result<Trajectory> {
    let spec = config
        .algorithms
        .get(algorithm)
        .ok_or_else(|| Error::invalid(format!("no algorithm at index {algorithm}")))?;
    let env = &config.environment;
    let label = spec.label();
    let mut env_rng = rng_from_seed(environment_seed(config.base_seed, replicate));
    let mut rng = rng_from_seed(learner_seed(config.base_seed, replicate, &label));
    let mut agent = Agent::build(spec, env, config.horizon, &mut rng)?;
    let mut records = Vec::with_capacity(config.horizon);
    let (mut pseudo, mut realized) = (0.0, 0.0);
    let mut digest: u64 = 0xcbf2_9ce4_8422_2325;
    for t in 1..=config.horizon {
        let sample = env.sample_round(&mut env_rng);
        for phi in &sample.features {
            phi.iter()
                .for_each(|v| fnv_update(&mut digest, v.to_bits()));
        }
        sample
            .loss
            .iter()
            .for_each(|v| fnv_update(&mut digest, v.to_bits()));

        let means = env.expected_losses(&sample);
        let best = env.optimal_action(&sample);
        let (action, explored, m_hat) = agent.play(&sample, &mut rng);
        let pseudo_inc = (means[action] - means[best]).max(0.0);
        let realized_inc = sample.loss[action] - sample.loss[best];
        pseudo += pseudo_inc;
        realized += realized_inc;
        records.push(RoundRecord {
            t,
            action,
            loss: sample.loss[action],
            pseudo_regret_increment: pseudo_inc,
            realized_regret_increment: realized_inc,
            pseudo_regret_cum: pseudo,
            realized_regret_cum: realized,
            m_hat,
            explored,
        });
    }
    let advances = match &agent {
        Agent::ModCb { state, .. } => state.advances().to_vec(),
        _ => Vec::new(),
    };
    Ok(Trajectory {
        replicate,
        algorithm: label,
        records,
        advances,
        stream_digest: digest,
    })
}

/// Worker count: `MODSEL_THREADS` if set to a positive integer, else rayon's default.
pub fn thread_count() -> Option<usize> {
    std::env::var("MODSEL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
}

/// Runs every (replicate, algorithm) pair, replicate-major. Each entry is the
/// trajectory or the failure of that run; a panic inside a learner is caught
/// and reported as a runtime error for that run only.
pub fn run_experiment(config: &ExperimentConfig) -> Vec<Result<Trajectory>> {
    let jobs: Vec<(usize, usize)> = (0..config.replicates)
        .flat_map(|r| (0..config.algorithms.len()).map(move |a| (r, a)))
        .collect();
    let work = || -> Vec<Result<Trajectory>> {
        jobs.par_iter()
            .map(|&(r, a)| {
                catch_unwind(AssertUnwindSafe(|| run_replicate(config, a, r))).unwrap_or_else(
                    |payload| {
                        let msg = payload
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "unknown panic".into());
                        Err(Error::Runtime(format!(
                            "{} on replicate {r} panicked: {msg}",
                            config.algorithms[a].label()
                        )))
                    },
                )
            })
            .collect()
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

/// Like [`run_experiment`] but fails on the first error.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    run_experiment(config).into_iter().collect()
}
