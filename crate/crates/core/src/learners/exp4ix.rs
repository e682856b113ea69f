//! Anytime Exp4-IX over a linear policy class.
//!
//! Epoch `k` covers rounds `[2^k, 2^{k+1})`. Its first `n_k` rounds witness
//! contexts (playing uniformly); the policy set for the rest of the epoch is one
//! representative per action pattern on those contexts, and exponential weights
//! with implicit exploration run over it from a uniform start.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{build_policy_set, LinearPolicy, PolicySource};
use super::Learner;
use crate::util::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Witnessing,
    Playing,
}

/// Static parameters of one Exp4-IX instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp4Config {
    /// Feature dimension of the policy class.
    pub dim: usize,
    /// Complexity `d` entering the schedules (the class's Natarajan-dimension proxy).
    pub complexity: f64,
    pub num_actions: usize,
    pub horizon: usize,
    pub delta: f64,
    /// Loss clip level `b`.
    pub clip: f64,
    pub source: PolicySource,
}

impl Exp4Config {
    /// Linear class of dimension `dim` sampled on the ball of radius `τ/γ`, with
    /// `b = 4τ√log(2TK/δ)`.
    #[allow(clippy::too_many_arguments)]
    pub fn linear(
        dim: usize,
        policy_budget: usize,
        num_actions: usize,
        horizon: usize,
        delta: f64,
        tau: f64,
        gamma: f64,
    ) -> Self {
        assert!(policy_budget >= 1, "policy budget must be positive");
        Exp4Config {
            dim,
            complexity: dim as f64,
            num_actions,
            horizon,
            delta,
            clip: default_clip(tau, horizon, num_actions, delta),
            source: PolicySource::SampledBall {
                budget: policy_budget,
                radius: tau / gamma,
            },
        }
    }

    fn log_term(&self) -> f64 {
        (self.horizon as f64 * self.num_actions as f64 / self.delta).ln()
    }

    /// `n_k = ⌈√(2^k d log(TK/δ))⌉`.
    pub fn witness_length(&self, epoch: u32) -> usize {
        self.witness_length_raw(epoch).ceil() as usize
    }

    pub fn witness_length_raw(&self, epoch: u32) -> f64 {
        (2f64.powi(epoch as i32) * self.complexity * self.log_term()).sqrt()
    }

    /// `η_k = √(d log(TK/δ) / (2^k K))`.
    pub fn learning_rate(&self, epoch: u32) -> f64 {
        (self.complexity * self.log_term() / (2f64.powi(epoch as i32) * self.num_actions as f64))
            .sqrt()
    }
}

pub fn default_clip(tau: f64, horizon: usize, num_actions: usize, delta: f64) -> f64 {
    4.0 * tau
        * (2.0 * horizon as f64 * num_actions as f64 / delta)
            .ln()
            .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RoundCache {
    round: usize,
    policy_actions: Vec<usize>,
    action_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp4State {
    config: Exp4Config,
    epoch: u32,
    phase: Phase,
    /// Next round to be played, 1-based on this instance's own clock.
    round: usize,
    witnessed: Vec<Vec<DVector<f64>>>,
    policies: Vec<LinearPolicy>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    eta: f64,
    clipped: usize,
    cache: Option<RoundCache>,
}

impl Exp4State {
    pub fn new(config: Exp4Config) -> Self {
        assert!(config.num_actions >= 1 && config.horizon >= 1);
        assert!(config.delta > 0.0 && config.clip > 0.0);
        let eta = config.learning_rate(0);
        Exp4State {
            config,
            epoch: 0,
            phase: Phase::Witnessing,
            round: 1,
            witnessed: Vec::new(),
            policies: Vec::new(),
            log_weights: Vec::new(),
            weights: Vec::new(),
            eta,
            clipped: 0,
            cache: None,
        }
    }

    pub fn config(&self) -> &Exp4Config {
        &self.config
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn policies(&self) -> &[LinearPolicy] {
        &self.policies
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn clip(&self) -> f64 {
        self.config.clip
    }

    /// Number of losses clamped into `[−b, b]` so far.
    pub fn clipped_count(&self) -> usize {
        self.clipped
    }

    pub fn witnessed(&self) -> &[Vec<DVector<f64>>] {
        &self.witnessed
    }

    fn epoch_start(&self) -> usize {
        1usize << self.epoch
    }

    fn maybe_start_playing(&mut self, rng: &mut SimRng) {
        if self.phase != Phase::Witnessing {
            return;
        }
        let n_k = self.config.witness_length(self.epoch);
        if self.round < self.epoch_start() + n_k || self.witnessed.is_empty() {
            return;
        }
        self.policies =
            build_policy_set(&self.witnessed, self.config.dim, &self.config.source, rng);
        let n = self.policies.len();
        self.log_weights = vec![0.0; n];
        self.weights = vec![1.0 / n as f64; n];
        self.eta = self.config.learning_rate(self.epoch);
        self.phase = Phase::Playing;
        self.cache = None;
    }

    fn round_cache(&mut self, features: &[DVector<f64>]) -> &RoundCache {
        let fresh = matches!(&self.cache, Some(c) if c.round == self.round);
        if !fresh {
            let policy_actions: Vec<usize> =
                self.policies.iter().map(|p| p.act(features)).collect();
            let mut action_probs = vec![0.0; self.config.num_actions];
            for (a, w) in policy_actions.iter().zip(&self.weights) {
                action_probs[*a] += w;
            }
            self.cache = Some(RoundCache {
                round: self.round,
                policy_actions,
                action_probs,
            });
        }
        self.cache.as_ref().expect("just filled")
    }

    /// Induced action distribution `P_t(a|x) = Σ_{π(x)=a} P_t(π)`; uniform while witnessing.
    pub fn induced_distribution(&mut self, features: &[DVector<f64>]) -> Vec<f64> {
        match self.phase {
            Phase::Witnessing => {
                vec![1.0 / self.config.num_actions as f64; self.config.num_actions]
            }
            Phase::Playing => self.round_cache(features).action_probs.clone(),
        }
    }

    /// Picks an action; returns it with the probability it had.
    pub fn act(&mut self, features: &[DVector<f64>], rng: &mut SimRng) -> (usize, f64) {
        debug_assert_eq!(features.len(), self.config.num_actions);
        self.maybe_start_playing(rng);
        let k = self.config.num_actions;
        match self.phase {
            Phase::Witnessing => {
                let dim = self.config.dim;
                self.witnessed.push(
                    features
                        .iter()
                        .map(|phi| phi.rows(0, dim).into_owned())
                        .collect(),
                );
                (rng.gen_range(0..k), 1.0 / k as f64)
            }
            Phase::Playing => {
                let probs = &self.round_cache(features).action_probs;
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = k - 1;
                for (a, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = a;
                        break;
                    }
                }
                // Never return a zero-probability action from rounding at the top end.
                while probs[chosen] == 0.0 && chosen > 0 {
                    chosen -= 1;
                }
                (chosen, probs[chosen])
            }
        }
    }

    /// Applies the IX exponential-weights update and advances the clock.
    pub fn update(&mut self, features: &[DVector<f64>], action: usize, loss: f64) {
        assert!(loss.is_finite(), "loss must be finite");
        if self.phase == Phase::Playing {
            let b = self.config.clip;
            let clamped = loss.clamp(-b, b);
            if clamped != loss {
                self.clipped += 1;
            }
            let shifted = clamped / b + 1.0;
            let eta = self.eta;
            let cache = self.round_cache(features);
            let denom = cache.action_probs[action] + eta;
            debug_assert!(denom > 0.0);
            let step = 2.0 * eta * shifted / denom;
            let matches: Vec<bool> = cache.policy_actions.iter().map(|&a| a == action).collect();
            for (lw, hit) in self.log_weights.iter_mut().zip(matches) {
                if hit {
                    *lw -= step;
                }
            }
            self.renormalize();
        }
        self.round += 1;
        self.cache = None;
        if self.round == 1usize << (self.epoch + 1) {
            self.epoch += 1;
            self.phase = Phase::Witnessing;
            self.witnessed.clear();
            self.policies.clear();
            self.log_weights.clear();
            self.weights.clear();
        }
    }

    fn renormalize(&mut self) {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        for lw in &mut self.log_weights {
            *lw -= max;
        }
        let z: f64 = self.log_weights.iter().map(|lw| lw.exp()).sum();
        for (w, lw) in self.weights.iter_mut().zip(&self.log_weights) {
            *w = lw.exp() / z;
        }
    }
}

impl Learner for Exp4State {
    fn act(&mut self, features: &[DVector<f64>], rng: &mut SimRng) -> usize {
        Exp4State::act(self, features, rng).0
    }

    fn update(&mut self, features: &[DVector<f64>], action: usize, loss: f64) {
        Exp4State::update(self, features, action, loss)
    }
}
