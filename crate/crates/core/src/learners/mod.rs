//! Contextual bandit learners driven round by round by the harness.

use nalgebra::DVector;
use rand::Rng;

use crate::util::SimRng;

pub mod exp4ix;
pub mod explore_first;
pub mod linucb;
pub mod policy;

pub use exp4ix::{default_clip, Exp4Config, Exp4State, Phase};
pub use explore_first::{ExploreFirst, ExplorePhase};
pub use linucb::LinUcb;
pub use policy::{build_policy_set, sample_ball, LinearPolicy, PolicySource};

pub trait Learner {
    /// Chooses an action given the per-action features of the current round.
    fn act(&mut self, features: &[DVector<f64>], rng: &mut SimRng) -> usize;

    /// Receives the loss of the action that was played.
    fn update(&mut self, features: &[DVector<f64>], action: usize, loss: f64);
}

/// Plays uniformly at random and ignores feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Uniform {
    pub num_actions: usize,
}

impl Learner for Uniform {
    fn act(&mut self, _features: &[DVector<f64>], rng: &mut SimRng) -> usize {
        rng.gen_range(0..self.num_actions)
    }

    fn update(&mut self, _features: &[DVector<f64>], _action: usize, _loss: f64) {}
}
