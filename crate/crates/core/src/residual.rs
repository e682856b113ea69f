//! Square-loss gap estimation between a restricted and a full linear class,
//! plus the confidence schedules that drive the model-selection test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::environment::gaussian_subgaussian_norm;
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix, DEFAULT_CLAMP_TOL, DEFAULT_PINV_TOL};

/// One `(x_s, y_s)` pair: features of the played action and its observed loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: DVector<f64>,
    pub y: f64,
}

impl LabeledSample {
    pub fn new(x: DVector<f64>, y: f64) -> Result<Self> {
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("labeled sample has non-finite entries"));
        }
        Ok(LabeledSample { x, y })
    }
}

/// Running `Σ_s (1/K) Σ_a φ(x_s,a)φ(x_s,a)ᵀ` over rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentAccumulator {
    dim: usize,
    sum_outer: DMatrix<f64>,
    rounds: usize,
}

impl SecondMomentAccumulator {
    pub fn new(dim: usize) -> Self {
        SecondMomentAccumulator {
            dim,
            sum_outer: DMatrix::zeros(dim, dim),
            rounds: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Adds one round; each feature vector is truncated to the accumulator's dimension.
    pub fn ingest(&mut self, features: &[DVector<f64>]) {
        let w = 1.0 / features.len() as f64;
        for phi in features {
            let x = phi.rows(0, self.dim);
            self.sum_outer.ger(w, &x, &x, 1.0);
        }
        self.rounds += 1;
    }

    pub fn sum(&self) -> &DMatrix<f64> {
        &self.sum_outer
    }

    /// Empirical second moment at the scale of `Σ_m`.
    pub fn normalized(&self) -> Result<SymMatrix> {
        if self.rounds == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        SymMatrix::new(&self.sum_outer / self.rounds as f64)
    }
}

/// Outcome of one gap test against a candidate class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub value: f64,
    pub threshold: f64,
    pub t_min_reached: bool,
}

impl GapEstimate {
    /// The advance rule: `Ê ≥ 2α` and `t ≥ T^min`.
    pub fn passes(&self) -> bool {
        self.t_min_reached && self.value >= 2.0 * self.threshold
    }
}

/// Inputs to ModCB's schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    pub tau: f64,
    pub gamma: f64,
    pub delta: f64,
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
    pub num_actions: usize,
    pub num_classes: usize,
    pub horizon: usize,
    /// Multiplier on the exploration probability; `1.0` is the plain schedule.
    #[serde(default = "one")]
    pub explore_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl AlgorithmParams {
    /// Defaults: standard-normal `τ`, `γ = 1`, `δ = 0.1`, `κ = 1/3`, `C₁ = C₂ = 1`.
    pub fn new(num_actions: usize, num_classes: usize, horizon: usize) -> Self {
        AlgorithmParams {
            tau: gaussian_subgaussian_norm(),
            gamma: 1.0,
            delta: 0.1,
            kappa: 1.0 / 3.0,
            c1: 1.0,
            c2: 1.0,
            num_actions,
            num_classes,
            horizon,
            explore_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("tau", self.tau)?;
        positive("gamma", self.gamma)?;
        positive("c1", self.c1)?;
        positive("c2", self.c2)?;
        positive("explore_scale", self.explore_scale)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Config(format!(
                "kappa must lie in (0,1), got {}",
                self.kappa
            )));
        }
        if self.num_actions < 1 || self.num_classes < 1 || self.horizon < 1 {
            return Err(Error::Config(
                "num_actions, num_classes and horizon must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `δ₀ = δ / (10 M² T²)`.
    pub fn delta0(&self) -> f64 {
        let m = self.num_classes as f64;
        let t = self.horizon as f64;
        self.delta / (10.0 * m * m * t * t)
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            tau: self.tau,
            gamma: self.gamma,
            kappa: self.kappa,
            c1: self.c1,
            c2: self.c2,
            num_actions: self.num_actions,
            delta0: self.delta0(),
            explore_scale: self.explore_scale,
        }
    }

    pub fn alpha_threshold(&self, d_m: usize, t: usize) -> f64 {
        self.schedule().alpha(d_m, t)
    }

    pub fn t_min(&self, d_m: usize) -> usize {
        self.schedule().t_min(d_m)
    }

    pub fn exploration_probability(&self, t: usize) -> f64 {
        self.schedule().exploration_probability(t)
    }
}

/// The closed-form schedules with `δ₀` already resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub tau: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
    pub num_actions: usize,
    pub delta0: f64,
    pub explore_scale: f64,
}

// Values within a relative 1e-9 of an integer are treated as that integer, so
// rounding noise in logarithms does not bump the ceiling.
fn ceil_tolerant(x: f64) -> f64 {
    (x - 1e-9 * x.abs().max(1.0)).ceil()
}

impl Schedule {
    /// `α_{m,t}`.
    pub fn alpha(&self, d_m: usize, t: usize) -> f64 {
        assert!(t >= 1, "rounds are 1-based");
        let d = d_m as f64;
        let t = t as f64;
        let k = self.num_actions as f64;
        let log_d = (2.0 * d / self.delta0).ln();
        let log_1 = (2.0 / self.delta0).ln();
        let lead = self.tau.powi(6) / self.gamma.powi(4) * d.sqrt() * log_d * log_d
            / (k.powf(self.kappa) * t.powf(1.0 - self.kappa));
        let tail = self.tau.powi(10) / self.gamma.powi(8) * d * log_1 / t;
        self.c1 * (lead + tail)
    }

    /// `T_m^min`, rounded up.
    pub fn t_min(&self, d_m: usize) -> usize {
        let log_1 = (2.0 / self.delta0).ln();
        let inner = self.tau.powi(4) / self.gamma.powi(2) * d_m as f64 * log_1
            + log_1.powf(1.0 / (1.0 - self.kappa))
            + self.num_actions as f64;
        ceil_tolerant(self.c2 * inner) as usize + 1
    }

    /// `μ_t = (K/t)^κ ∧ 1`, scaled by `explore_scale`.
    pub fn exploration_probability(&self, t: usize) -> f64 {
        assert!(t >= 1, "rounds are 1-based");
        let base = (self.num_actions as f64 / t as f64).powf(self.kappa);
        (self.explore_scale * base).min(1.0)
    }
}

fn check_split(n: usize, sigma_hat_1: &SymMatrix, sigma_hat: &SymMatrix) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if sigma_hat_1.dim() >= sigma_hat.dim() {
        return Err(Error::invalid(format!(
            "restricted dimension {} must be smaller than full dimension {}",
            sigma_hat_1.dim(),
            sigma_hat.dim()
        )));
    }
    Ok(())
}

/// `Q = Σ̂^{1/2} R̂` with `R̂ = D̂† − Σ̂†`, `D̂ = blockdiag(Σ̂₁, 0)`.
pub fn residual_operator(sigma_hat_1: &SymMatrix, sigma_hat: &SymMatrix) -> Result<DMatrix<f64>> {
    let d = sigma_hat.dim();
    let d_pinv = linalg::pseudo_inverse(&sigma_hat_1.zero_padded(d)?, DEFAULT_PINV_TOL)?;
    let s_pinv = linalg::pseudo_inverse(sigma_hat, DEFAULT_PINV_TOL)?;
    let r = d_pinv.as_matrix() - s_pinv.as_matrix();
    let root = linalg::psd_sqrt(sigma_hat, DEFAULT_CLAMP_TOL)?;
    Ok(root.as_matrix() * r)
}

/// The pairwise U-statistic gap estimate over labeled samples.
///
/// Computed as `(‖Σ_s z_s‖² − Σ_s ‖z_s‖²) / (n(n−1))` with `z_s = Q x_s y_s`,
/// which equals the average of `⟨z_s, z_t⟩` over unordered pairs. May be negative.
pub fn estimate_residual(
    samples: &[LabeledSample],
    sigma_hat_1: &SymMatrix,
    sigma_hat: &SymMatrix,
) -> Result<f64> {
    let d = sigma_hat.dim();
    check_split(samples.len(), sigma_hat_1, sigma_hat)?;
    if let Some(bad) = samples.iter().position(|s| s.x.len() != d) {
        return Err(Error::invalid(format!(
            "sample {bad} has dimension {} but the second moment is {d}x{d}",
            samples[bad].x.len()
        )));
    }
    let xs = DMatrix::from_fn(samples.len(), d, |s, j| samples[s].x[j]);
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    estimate_residual_rows(&xs, &ys, sigma_hat_1, sigma_hat)
}

/// Same as [`estimate_residual`] with samples stored as rows of `xs`.
pub fn estimate_residual_rows(
    xs: &DMatrix<f64>,
    ys: &[f64],
    sigma_hat_1: &SymMatrix,
    sigma_hat: &SymMatrix,
) -> Result<f64> {
    let n = xs.nrows();
    check_split(n, sigma_hat_1, sigma_hat)?;
    if ys.len() != n || xs.ncols() != sigma_hat.dim() {
        return Err(Error::invalid(format!(
            "got {} labels for {n} samples of dimension {} (expected {})",
            ys.len(),
            xs.ncols(),
            sigma_hat.dim()
        )));
    }
    if !ys.iter().all(|y| y.is_finite()) || !xs.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("samples have non-finite entries"));
    }
    let q = residual_operator(sigma_hat_1, sigma_hat)?;
    // Row s of U is x_s y_s; row s of Z is z_sᵀ.
    let mut u = xs.clone();
    for (mut row, y) in u.row_iter_mut().zip(ys) {
        row *= *y;
    }
    let z = u * q.transpose();
    let total: DVector<f64> = z.row_sum().transpose();
    let sum_sq: f64 = z.iter().map(|v| v * v).sum();
    let nf = n as f64;
    Ok((total.norm_squared() - sum_sq) / (nf * (nf - 1.0)))
}

/// Population gap `‖Σ^{1/2}(D† − Σ⁻¹)μ‖²` with `μ = E[xy]`.
pub fn population_residual(
    sigma: &SymMatrix,
    sigma_1: &SymMatrix,
    mu: &DVector<f64>,
) -> Result<f64> {
    let d = sigma.dim();
    if sigma_1.dim() > d || mu.len() != d {
        return Err(Error::invalid(format!(
            "incompatible dimensions: sigma {d}, sigma_1 {}, mu {}",
            sigma_1.dim(),
            mu.len()
        )));
    }
    let chol = sigma
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(Error::NotInvertible)?;
    let full = chol.solve(mu);
    let d1 = sigma_1.dim();
    let chol1 = sigma_1
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(Error::NotInvertible)?;
    let mut restricted = DVector::zeros(d);
    restricted
        .rows_mut(0, d1)
        .copy_from(&chol1.solve(&mu.rows(0, d1).into_owned()));
    let r = restricted - full;
    Ok((r.transpose() * sigma.as_matrix() * &r)[(0, 0)])
}

/// Plug-in baseline: least squares on both classes, then the empirical gap
/// `(β̂ − β̂₁)ᵀ Σ̂ (β̂ − β̂₁)`. Minimum-norm solutions are used when underdetermined.
pub fn plug_in_gap_rows(
    xs: &DMatrix<f64>,
    ys: &[f64],
    d1: usize,
    sigma_hat: &SymMatrix,
) -> Result<f64> {
    let (n, d) = xs.shape();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if d1 == 0 || d1 >= d || ys.len() != n || sigma_hat.dim() != d {
        return Err(Error::invalid(
            "incompatible dimensions for the plug-in estimator",
        ));
    }
    let y = DVector::from_column_slice(ys);
    let fit = |cols: usize| -> Result<DVector<f64>> {
        let x = xs.columns(0, cols);
        let gram = SymMatrix::new(x.transpose() * x)?;
        let pinv = linalg::pseudo_inverse(&gram, DEFAULT_PINV_TOL)?;
        Ok(pinv.as_matrix() * (x.transpose() * &y))
    };
    let full = fit(d)?;
    let restricted = fit(d1)?;
    let mut diff = full;
    {
        let mut v = diff.rows_mut(0, d1);
        v -= &restricted;
    }
    Ok((diff.transpose() * sigma_hat.as_matrix() * &diff)[(0, 0)])
}
