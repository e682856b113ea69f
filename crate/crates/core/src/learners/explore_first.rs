//! Adaptive explore-first over two finite policy classes `|Π₁| ≤ |Π₂|`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{sample_ball, LinearPolicy};
use super::Learner;
use crate::util::{argmin_first, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExplorePhase {
    Explore1,
    Committed1,
    Explore2,
    Committed2,
}

/// `t = ⌈T^{2/3} (K log|Π|)^{1/3}⌉`.
pub fn exploration_length(horizon: usize, num_actions: usize, log_class_size: f64) -> usize {
    let t = horizon as f64;
    let raw = (t * t * num_actions as f64 * log_class_size).cbrt();
    (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize
}

/// `Δ = c · (K / (T log(T|Π₁|)))^{1/3} · √log(T|Π₂|)`.
pub fn test_threshold(
    horizon: usize,
    num_actions: usize,
    size1: usize,
    size2: usize,
    constant: f64,
) -> f64 {
    let t = horizon as f64;
    let k = num_actions as f64;
    constant * (k / (t * (t * size1 as f64).ln())).cbrt() * (t * size2 as f64).ln().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreFirst {
    num_actions: usize,
    phase: ExplorePhase,
    t1: usize,
    t2: usize,
    threshold: f64,
    class1: Vec<LinearPolicy>,
    class2: Vec<LinearPolicy>,
    /// Raw `Σ ℓ𝟙{π(x)=a}` for each policy in Π₁ over the first `t₁` rounds.
    loss1: Vec<f64>,
    /// Same for each policy in Π₂ over the first `t₁` rounds.
    loss2_short: Vec<f64>,
    /// Cumulative loss for each policy in Π₂ over all exploration rounds.
    loss2_long: Vec<f64>,
    rounds: usize,
    committed: Option<LinearPolicy>,
}

impl ExploreFirst {
    /// Builds from explicit finite classes.
    pub fn with_classes(
        class1: Vec<LinearPolicy>,
        class2: Vec<LinearPolicy>,
        num_actions: usize,
        horizon: usize,
        delta_constant: f64,
    ) -> Self {
        assert!(
            !class1.is_empty() && class1.len() <= class2.len(),
            "need 0 < |Π₁| ≤ |Π₂|"
        );
        let (n1, n2) = (class1.len(), class2.len());
        let t1 = exploration_length(horizon, num_actions, (n1 as f64).ln()).min(horizon);
        let t2 = exploration_length(horizon, num_actions, (n2 as f64).ln())
            .min(horizon)
            .max(t1);
        ExploreFirst {
            num_actions,
            phase: ExplorePhase::Explore1,
            t1,
            t2,
            threshold: test_threshold(horizon, num_actions, n1, n2, delta_constant),
            loss1: vec![0.0; n1],
            loss2_short: vec![0.0; n2],
            loss2_long: vec![0.0; n2],
            class1,
            class2,
            rounds: 0,
            committed: None,
        }
    }

    /// Samples `size1` policies of dimension `dim1` and `size2` of dimension `dim2`
    /// from the ball of the given radius.
    #[allow(clippy::too_many_arguments)]
    pub fn sampled(
        dim1: usize,
        size1: usize,
        dim2: usize,
        size2: usize,
        radius: f64,
        num_actions: usize,
        horizon: usize,
        delta_constant: f64,
        rng: &mut SimRng,
    ) -> Self {
        let draw = |dim, n, rng: &mut SimRng| -> Vec<LinearPolicy> {
            (0..n)
                .map(|_| LinearPolicy::new(sample_ball(dim, radius, rng)))
                .collect()
        };
        let c1 = draw(dim1, size1, rng);
        let c2 = draw(dim2, size2, rng);
        Self::with_classes(c1, c2, num_actions, horizon, delta_constant)
    }

    pub fn phase(&self) -> ExplorePhase {
        self.phase
    }

    pub fn lengths(&self) -> (usize, usize) {
        (self.t1, self.t2)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn committed(&self) -> Option<&LinearPolicy> {
        self.committed.as_ref()
    }

    /// Importance-weighted risk estimate `(K/n)·Σ ℓ𝟙{π(x)=a}` from a raw sum.
    fn normalized(&self, sum: f64, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            sum * self.num_actions as f64 / n as f64
        }
    }

    fn decide_after_first_phase(&mut self) {
        let best1 = argmin_first(self.loss1.iter().copied());
        let best2 = argmin_first(self.loss2_short.iter().copied());
        let l1 = self.normalized(self.loss1[best1], self.t1);
        let l2 = self.normalized(self.loss2_short[best2], self.t1);
        if l1 <= l2 + self.threshold {
            self.committed = Some(self.class1[best1].clone());
            self.phase = ExplorePhase::Committed1;
        } else if self.t2 <= self.t1 {
            self.commit_second();
        } else {
            self.phase = ExplorePhase::Explore2;
        }
    }

    fn commit_second(&mut self) {
        let best = argmin_first(self.loss2_long.iter().copied());
        self.committed = Some(self.class2[best].clone());
        self.phase = ExplorePhase::Committed2;
    }

    fn check_transitions(&mut self) {
        if self.phase == ExplorePhase::Explore1 && self.rounds >= self.t1 {
            self.decide_after_first_phase();
        }
        if self.phase == ExplorePhase::Explore2 && self.rounds >= self.t2 {
            self.commit_second();
        }
    }
}

impl Learner for ExploreFirst {
    fn act(&mut self, features: &[DVector<f64>], rng: &mut SimRng) -> usize {
        self.check_transitions();
        match &self.committed {
            Some(p) => p.act(features),
            None => rng.gen_range(0..self.num_actions),
        }
    }

    fn update(&mut self, features: &[DVector<f64>], action: usize, loss: f64) {
        match self.phase {
            ExplorePhase::Explore1 => {
                for (l, p) in self.loss1.iter_mut().zip(&self.class1) {
                    if p.act(features) == action {
                        *l += loss;
                    }
                }
                for ((s, l), p) in self
                    .loss2_short
                    .iter_mut()
                    .zip(self.loss2_long.iter_mut())
                    .zip(&self.class2)
                {
                    if p.act(features) == action {
                        *s += loss;
                        *l += loss;
                    }
                }
            }
            ExplorePhase::Explore2 => {
                for (l, p) in self.loss2_long.iter_mut().zip(&self.class2) {
                    if p.act(features) == action {
                        *l += loss;
                    }
                }
            }
            ExplorePhase::Committed1 | ExplorePhase::Committed2 => {}
        }
        self.rounds += 1;
        self.check_transitions();
    }
}
