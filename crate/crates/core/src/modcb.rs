//! ModCB: Exp4-IX on the current candidate class, mixed with uniform
//! exploration whose data feeds a residual-variance test against every larger
//! class.
//!
//! All classes share one ambient feature vector of which class `m` sees the
//! first `d_m` coordinates, so the per-class second moments and exploration
//! buffers are stored once at ambient dimension and sliced on demand.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::RoundSample;
use crate::error::{Error, Result};
use crate::learners::{Exp4Config, Exp4State, Learner};
use crate::linalg::SymMatrix;
use crate::residual::{
    estimate_residual, AlgorithmParams, GapEstimate, LabeledSample, SecondMomentAccumulator,
};
use crate::util::SimRng;

/// Rounds between from-scratch refreshes of the maintained inverses.
const REFRESH_EVERY: usize = 1024;

/// One class change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advance {
    pub t: usize,
    pub from: usize,
    pub to: usize,
}

/// What happened in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModCbRound {
    pub t: usize,
    pub action: usize,
    pub explored: bool,
    /// Class index after this round's test.
    pub m_hat: usize,
    pub advanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModCbState {
    dims: Vec<usize>,
    params: AlgorithmParams,
    policy_budget: usize,
    test_every: usize,
    m_hat: usize,
    /// Rounds completed.
    t: usize,
    explore_rounds: Vec<usize>,
    /// Played-action features (ambient dimension) on exploration rounds.
    explore_x: Vec<DVector<f64>>,
    explore_y: Vec<f64>,
    moments: SecondMomentAccumulator,
    /// `Σ_{s∈S} x_s y_s`.
    cross: DVector<f64>,
    /// `Σ_{s∈S} y_s² x_s x_sᵀ`.
    weighted_outer: DMatrix<f64>,
    /// Inverses of the unnormalized per-class second-moment sums, kept current
    /// once first needed.
    inverses: Vec<Option<DMatrix<f64>>>,
    base: Exp4State,
    pending_explore: Option<bool>,
    advances: Vec<Advance>,
    last_tests: Vec<Option<GapEstimate>>,
}

impl ModCbState {
    /// Starts at class 1 with a fresh Exp4-IX instance for it.
    pub fn new(
        dims: Vec<usize>,
        params: AlgorithmParams,
        policy_budget: usize,
        test_every: usize,
    ) -> Result<Self> {
        params.validate()?;
        if dims.is_empty() || dims[0] == 0 || dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "class dimensions must be positive and strictly increasing, got {dims:?}"
            )));
        }
        if dims.len() != params.num_classes {
            return Err(Error::Config(format!(
                "{} class dimensions given but num_classes = {}",
                dims.len(),
                params.num_classes
            )));
        }
        if policy_budget == 0 || test_every == 0 {
            return Err(Error::Config(
                "policy_budget and test_every must be positive".into(),
            ));
        }
        let ambient = *dims.last().expect("nonempty");
        let m = dims.len();
        let base = Self::fresh_base(&dims, &params, policy_budget, 1);
        Ok(ModCbState {
            dims,
            params,
            policy_budget,
            test_every,
            m_hat: 1,
            t: 0,
            explore_rounds: Vec::new(),
            explore_x: Vec::new(),
            explore_y: Vec::new(),
            moments: SecondMomentAccumulator::new(ambient),
            cross: DVector::zeros(ambient),
            weighted_outer: DMatrix::zeros(ambient, ambient),
            inverses: vec![None; m],
            base,
            pending_explore: None,
            advances: Vec::new(),
            last_tests: vec![None; m],
        })
    }

    fn fresh_base(dims: &[usize], params: &AlgorithmParams, budget: usize, m: usize) -> Exp4State {
        let d = dims[m - 1];
        Exp4State::new(Exp4Config::linear(
            d,
            budget,
            params.num_actions,
            params.horizon,
            params.delta0(),
            params.tau,
            params.gamma,
        ))
    }

    pub fn m_hat(&self) -> usize {
        self.m_hat
    }

    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &AlgorithmParams {
        &self.params
    }

    pub fn explore_rounds(&self) -> &[usize] {
        &self.explore_rounds
    }

    pub fn advances(&self) -> &[Advance] {
        &self.advances
    }

    pub fn base(&self) -> &Exp4State {
        &self.base
    }

    /// Most recent test outcome against class `i` (1-based), if one ran.
    pub fn last_test(&self, i: usize) -> Option<GapEstimate> {
        self.last_tests.get(i.wrapping_sub(1)).copied().flatten()
    }

    /// `H_i`: exploration samples seen through class `i`'s features.
    pub fn explore_buffer(&self, i: usize) -> Vec<LabeledSample> {
        let d = self.dims[i - 1];
        self.explore_x
            .iter()
            .zip(&self.explore_y)
            .map(|(x, y)| LabeledSample {
                x: x.rows(0, d).into_owned(),
                y: *y,
            })
            .collect()
    }

    /// `Σ̂_i / t`.
    pub fn second_moment(&self, i: usize) -> Result<SymMatrix> {
        let d = self.dims[i - 1];
        SymMatrix::new(
            self.moments
                .normalized()?
                .as_matrix()
                .view((0, 0), (d, d))
                .into_owned(),
        )
    }

    /// Runs one full round against a sampled environment round.
    pub fn step(&mut self, sample: &RoundSample, rng: &mut SimRng) -> ModCbRound {
        let action = Learner::act(self, &sample.features, rng);
        let explored = self.pending_explore.expect("set by act");
        let before = self.m_hat;
        Learner::update(self, &sample.features, action, sample.loss[action]);
        ModCbRound {
            t: self.t,
            action,
            explored,
            m_hat: self.m_hat,
            advanced: self.m_hat != before,
        }
    }

    /// The gap estimate recomputed from the raw buffers with pseudo-inverses.
    pub fn recompute_gap(&self, i: usize) -> Result<f64> {
        estimate_residual(
            &self.explore_buffer(i),
            &self.second_moment(self.m_hat)?,
            &self.second_moment(i)?,
        )
    }

    fn unnormalized_block(&self, d: usize) -> DMatrix<f64> {
        self.moments.sum().view((0, 0), (d, d)).into_owned()
    }

    fn ensure_inverse(&mut self, class: usize) -> bool {
        if self.inverses[class - 1].is_none() {
            let d = self.dims[class - 1];
            self.inverses[class - 1] = self.unnormalized_block(d).cholesky().map(|c| c.inverse());
        }
        self.inverses[class - 1].is_some()
    }

    fn refresh_inverses(&mut self) {
        for c in 0..self.dims.len() {
            if self.inverses[c].is_some() {
                let d = self.dims[c];
                self.inverses[c] = self.unnormalized_block(d).cholesky().map(|ch| ch.inverse());
            }
        }
    }

    fn ingest_contexts(&mut self, features: &[DVector<f64>]) {
        self.moments.ingest(features);
        let w = 1.0 / features.len() as f64;
        for (c, inv) in self.inverses.iter_mut().enumerate() {
            let Some(inv) = inv else { continue };
            let d = self.dims[c];
            for phi in features {
                let x = phi.rows(0, d);
                let g = &*inv * x;
                let denom = 1.0 + w * x.dot(&g);
                inv.ger(-w / denom, &g, &g, 1.0);
            }
        }
        if self.t.is_multiple_of(REFRESH_EVERY) {
            self.refresh_inverses();
        }
    }

    /// `Ê_{m̂,i}` via `Ê = (vᵀAv − ⟨A, W⟩)/(n(n−1))` with `A = Σ̂_i⁻¹ − pad(Σ̂_m̂⁻¹)`,
    /// which equals the pseudo-inverse form whenever both moments are invertible.
    fn gap_estimate(&mut self, i: usize) -> Result<f64> {
        let n = self.explore_y.len();
        if !(self.ensure_inverse(i) && self.ensure_inverse(self.m_hat)) {
            return self.recompute_gap(i);
        }
        let (d, d1) = (self.dims[i - 1], self.dims[self.m_hat - 1]);
        let mut a = self.inverses[i - 1].clone().expect("ensured");
        {
            let mut block = a.view_mut((0, 0), (d1, d1));
            block -= self.inverses[self.m_hat - 1].as_ref().expect("ensured");
        }
        a *= self.t as f64;
        let v = self.cross.rows(0, d);
        let quad = v.dot(&(&a * v));
        let trace = a.dot(&self.weighted_outer.view((0, 0), (d, d)));
        let nf = n as f64;
        Ok((quad - trace) / (nf * (nf - 1.0)))
    }

    fn run_test(&mut self) {
        let m = self.dims.len();
        if self.m_hat == m || self.explore_y.len() < 2 || !self.t.is_multiple_of(self.test_every) {
            return;
        }
        let mut winner = None;
        for i in self.m_hat + 1..=m {
            let d = self.dims[i - 1];
            // The test is a conjunction, so skipping the estimate before T^min is exact.
            if self.t < self.params.t_min(d) {
                continue;
            }
            let value = match self.gap_estimate(i) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let est = GapEstimate {
                value,
                threshold: self.params.alpha_threshold(d, self.t),
                t_min_reached: true,
            };
            self.last_tests[i - 1] = Some(est);
            if est.passes() {
                winner = Some(i);
                break;
            }
        }
        if let Some(i) = winner {
            self.advances.push(Advance {
                t: self.t,
                from: self.m_hat,
                to: i,
            });
            self.m_hat = i;
            self.base = Self::fresh_base(&self.dims, &self.params, self.policy_budget, i);
            for c in 0..i - 1 {
                self.inverses[c] = None;
            }
        }
    }
}

impl Learner for ModCbState {
    fn act(&mut self, features: &[DVector<f64>], rng: &mut SimRng) -> usize {
        let mu = self.params.exploration_probability(self.t + 1);
        let explore = rng.gen::<f64>() < mu;
        self.pending_explore = Some(explore);
        if explore {
            rng.gen_range(0..self.params.num_actions)
        } else {
            self.base.act(features, rng).0
        }
    }

    fn update(&mut self, features: &[DVector<f64>], action: usize, loss: f64) {
        let explored = self
            .pending_explore
            .take()
            .expect("act must precede update");
        self.t += 1;
        if !explored {
            self.base.update(features, action, loss);
        }
        self.ingest_contexts(features);
        if explored {
            let x = features[action].rows(0, self.moments.dim()).into_owned();
            self.cross.axpy(loss, &x, 1.0);
            self.weighted_outer.ger(loss * loss, &x, &x, 1.0);
            self.explore_rounds.push(self.t);
            self.explore_x.push(x);
            self.explore_y.push(loss);
        }
        self.run_test();
    }
}

/// Thins a nested family to at most `⌈ln T⌉` maps: for each `i = 1..=⌈ln T⌉` the
/// largest map with `d_m ≤ e^i`, duplicates removed. Returns 1-based indices and dims.
pub fn preprocess_maps(dims: &[usize], horizon: usize) -> (Vec<usize>, Vec<usize>) {
    let levels = (horizon as f64).ln().ceil().max(1.0) as i32;
    let mut indices: Vec<usize> = Vec::new();
    for i in 1..=levels {
        let cap = (i as f64).exp();
        if let Some(m) = dims.iter().rposition(|&d| d as f64 <= cap) {
            if indices.last() != Some(&(m + 1)) {
                indices.push(m + 1);
            }
        }
    }
    let selected = indices.iter().map(|&m| dims[m - 1]).collect();
    (indices, selected)
}

/// Dimensions of the nested family `(φ¹), (φ¹, φ²), …` built from arbitrary maps.
pub fn concat_non_nested(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, d| {
            *acc += d;
            Some(*acc)
        })
        .collect()
}

/// Concatenates per-map features of one action into the nested family's largest map.
pub fn concat_features(maps: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        maps.iter().map(|m| m.len()).sum(),
        maps.iter().flat_map(|m| m.iter().copied()),
    )
}
