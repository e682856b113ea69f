use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::util::argmin_first;

/// `x ↦ argmin_a ⟨β, φ(x,a)⟩`, ties to the lowest action index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub beta: DVector<f64>,
}

impl LinearPolicy {
    pub fn new(beta: DVector<f64>) -> Self {
        LinearPolicy { beta }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// Action chosen on a context; features longer than `dim` are truncated.
    pub fn act(&self, features: &[DVector<f64>]) -> usize {
        let d = self.beta.len();
        argmin_first(features.iter().map(|phi| self.beta.dot(&phi.rows(0, d))))
    }
}

/// Uniform draw from the Euclidean ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
            return g * (r / norm);
        }
    }
}

/// Where candidate policies come from when a policy set is (re)built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySource {
    /// Draw this many coefficient vectors uniformly from the ball of `radius`.
    SampledBall { budget: usize, radius: f64 },
    /// A fixed finite class.
    Fixed(Vec<LinearPolicy>),
}

/// Action pattern of a policy over a list of contexts.
pub fn action_pattern(policy: &LinearPolicy, contexts: &[Vec<DVector<f64>>]) -> Vec<usize> {
    contexts.iter().map(|c| policy.act(c)).collect()
}

/// Keeps the first policy of each distinct action pattern on `contexts`.
pub fn dedupe_by_pattern(
    candidates: Vec<LinearPolicy>,
    contexts: &[Vec<DVector<f64>>],
) -> Vec<LinearPolicy> {
    let mut seen = std::collections::HashSet::new();
    candidates
        .into_iter()
        .filter(|p| seen.insert(action_pattern(p, contexts)))
        .collect()
}

/// Draws candidates from `source` and keeps one representative per witnessed
/// equivalence class (first drawn wins).
pub fn build_policy_set<R: Rng + ?Sized>(
    witnessed: &[Vec<DVector<f64>>],
    dim: usize,
    source: &PolicySource,
    rng: &mut R,
) -> Vec<LinearPolicy> {
    assert!(!witnessed.is_empty(), "need at least one witnessed context");
    let candidates = match source {
        PolicySource::SampledBall { budget, radius } => (0..*budget)
            .map(|_| LinearPolicy::new(sample_ball(dim, *radius, rng)))
            .collect(),
        PolicySource::Fixed(pool) => pool.clone(),
    };
    dedupe_by_pattern(candidates, witnessed)
}
