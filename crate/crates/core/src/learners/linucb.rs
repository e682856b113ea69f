use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Learner;
use crate::util::{argmin_first, SimRng};

/// Shared-parameter LinUCB for losses: ridge regression on `φ(x, a)` and an
/// optimistic (lower) confidence score per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinUcb {
    dim: usize,
    premultiplier: f64,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    moment: DVector<f64>,
}

impl LinUcb {
    pub fn new(dim: usize, premultiplier: f64, ridge: f64) -> Self {
        assert!(ridge > 0.0, "ridge must be positive");
        assert!(premultiplier >= 0.0, "premultiplier must be nonnegative");
        LinUcb {
            dim,
            premultiplier,
            gram: DMatrix::identity(dim, dim) * ridge,
            gram_inv: DMatrix::identity(dim, dim) / ridge,
            moment: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn estimate(&self) -> DVector<f64> {
        &self.gram_inv * &self.moment
    }

    /// `⟨β̂, φ⟩ − c·‖φ‖_{Gram⁻¹}` for each action.
    pub fn scores(&self, features: &[DVector<f64>]) -> Vec<f64> {
        let beta = self.estimate();
        features
            .iter()
            .map(|phi| {
                let x = phi.rows(0, self.dim);
                let width = (x.transpose() * &self.gram_inv * x)[(0, 0)].max(0.0).sqrt();
                beta.dot(&x) - self.premultiplier * width
            })
            .collect()
    }
}

impl Learner for LinUcb {
    fn act(&mut self, features: &[DVector<f64>], _rng: &mut SimRng) -> usize {
        if features.len() == 1 {
            return 0;
        }
        argmin_first(self.scores(features))
    }

    fn update(&mut self, features: &[DVector<f64>], action: usize, loss: f64) {
        let x = features[action].rows(0, self.dim).into_owned();
        // Sherman–Morrison on the inverse.
        let gx = &self.gram_inv * &x;
        let denom = 1.0 + x.dot(&gx);
        self.gram_inv.ger(-1.0 / denom, &gx, &gx, 1.0);
        self.gram.ger(1.0, &x, &x, 1.0);
        self.moment.axpy(loss, &x, 1.0);
    }
}
