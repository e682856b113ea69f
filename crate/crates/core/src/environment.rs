//! Synthetic stochastic linear contextual bandit with nested feature maps.
//!
//! Features for every action are drawn in the ambient dimension `d_M`; the
//! class-`m` map is the first `d_m` coordinates. Losses are linear in the
//! first `d_{m*}` coordinates plus Gaussian noise, so every population
//! quantity (second moments, restricted least-squares predictors, square-loss
//! gaps) has a closed form.
//!
//! Class indices are 1-based throughout (`1..=M`); action indices are 0-based.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::util::argmin_first;

/// Feature distribution shared by all actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Design {
    /// Every coordinate i.i.d. standard normal.
    IsotropicGaussian,
    /// Independent coordinates with variances spaced geometrically from 1 down to
    /// `1/condition_number` across the ambient dimension.
    CorrelatedGaussian { condition_number: f64 },
}

impl Design {
    /// Per-coordinate variances over the ambient dimension.
    pub fn coordinate_variances(&self, ambient_dim: usize) -> Vec<f64> {
        match *self {
            Design::IsotropicGaussian => vec![1.0; ambient_dim],
            Design::CorrelatedGaussian { condition_number } => {
                if ambient_dim == 1 {
                    return vec![1.0];
                }
                let steps = (ambient_dim - 1) as f64;
                (0..ambient_dim)
                    .map(|j| condition_number.powf(-(j as f64) / steps))
                    .collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Design::CorrelatedGaussian { condition_number } = *self {
            if !(condition_number.is_finite() && condition_number >= 1.0) {
                return Err(Error::Config(format!(
                    "condition_number must be finite and >= 1, got {condition_number}"
                )));
            }
        }
        Ok(())
    }
}

/// The nested feature-map stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedFeatureSpec {
    pub num_classes: usize,
    pub dims: Vec<usize>,
    pub num_actions: usize,
    pub design: Design,
}

impl NestedFeatureSpec {
    pub fn new(dims: Vec<usize>, num_actions: usize, design: Design) -> Result<Self> {
        let spec = NestedFeatureSpec {
            num_classes: dims.len(),
            dims,
            num_actions,
            design,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Config("at least one feature map is required".into()));
        }
        if self.num_classes != self.dims.len() {
            return Err(Error::Config(format!(
                "num_classes = {} but {} dims were given",
                self.num_classes,
                self.dims.len()
            )));
        }
        if self.dims[0] == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        if self.dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "dims must be strictly increasing, got {:?}",
                self.dims
            )));
        }
        if self.num_actions < 2 {
            return Err(Error::Config(format!(
                "num_actions must be at least 2, got {}",
                self.num_actions
            )));
        }
        self.design.validate()
    }

    pub fn ambient_dim(&self) -> usize {
        *self.dims.last().expect("validated non-empty")
    }

    /// Dimension `d_m` of class `m` (1-based).
    pub fn dim_of(&self, m: usize) -> Result<usize> {
        if m == 0 || m > self.dims.len() {
            return Err(Error::IndexOutOfRange {
                index: m,
                valid: format!("1..={}", self.dims.len()),
            });
        }
        Ok(self.dims[m - 1])
    }
}

/// Full environment description; the single source of ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvironmentSpec", into = "RawEnvironmentSpec")]
pub struct EnvironmentSpec {
    pub features: NestedFeatureSpec,
    /// Smallest realizing class, 1-based.
    pub m_star: usize,
    pub beta_star: DVector<f64>,
    pub noise_sigma: f64,
    pub tau: f64,
    pub gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct RawEnvironmentSpec {
    num_classes: usize,
    dims: Vec<usize>,
    num_actions: usize,
    design: Design,
    m_star: usize,
    beta_star: Vec<f64>,
    noise_sigma: f64,
    /// Filled in from the design when omitted.
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default)]
    gamma: Option<f64>,
}

impl TryFrom<RawEnvironmentSpec> for EnvironmentSpec {
    type Error = Error;

    fn try_from(raw: RawEnvironmentSpec) -> Result<Self> {
        let features = NestedFeatureSpec {
            num_classes: raw.num_classes,
            dims: raw.dims,
            num_actions: raw.num_actions,
            design: raw.design,
        };
        features.validate()?;
        let (tau, gamma) = design_constants(&features);
        let spec = EnvironmentSpec {
            features,
            m_star: raw.m_star,
            beta_star: DVector::from_vec(raw.beta_star),
            noise_sigma: raw.noise_sigma,
            tau: raw.tau.unwrap_or(tau),
            gamma: raw.gamma.unwrap_or(gamma),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<EnvironmentSpec> for RawEnvironmentSpec {
    fn from(s: EnvironmentSpec) -> Self {
        RawEnvironmentSpec {
            num_classes: s.features.num_classes,
            dims: s.features.dims,
            num_actions: s.features.num_actions,
            design: s.features.design,
            m_star: s.m_star,
            beta_star: s.beta_star.iter().copied().collect(),
            noise_sigma: s.noise_sigma,
            tau: Some(s.tau),
            gamma: Some(s.gamma),
        }
    }
}

/// `(τ, γ)` of a Gaussian design: the coordinate norm scaled by the largest
/// standard deviation, and the smallest standard deviation.
fn design_constants(features: &NestedFeatureSpec) -> (f64, f64) {
    let vars = features.design.coordinate_variances(features.ambient_dim());
    let max_var = vars.iter().cloned().fold(0.0, f64::max);
    let min_var = vars.iter().cloned().fold(f64::INFINITY, f64::min);
    (gaussian_subgaussian_norm() * max_var.sqrt(), min_var.sqrt())
}

/// `sup_{p≥1} p^{-1/2} (E|z|^p)^{1/p}` for `z ~ N(0,1)`, evaluated numerically.
///
/// The supremum is attained at `p = 1`, giving `√(2/π)`.
pub fn gaussian_subgaussian_norm() -> f64 {
    static CELL: OnceLock<f64> = OnceLock::new();
    *CELL.get_or_init(|| {
        use statrs::function::gamma::ln_gamma;
        let half_ln_pi = 0.5 * std::f64::consts::PI.ln();
        (0..=20_000)
            .map(|k| 1.0 + k as f64 * 0.01)
            .map(|p| {
                let ln_moment =
                    0.5 * p * std::f64::consts::LN_2 + ln_gamma((p + 1.0) / 2.0) - half_ln_pi;
                (ln_moment / p - 0.5 * p.ln()).exp()
            })
            .fold(0.0, f64::max)
    })
}

/// One context/loss draw: features of every action in the ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSample {
    pub features: Vec<DVector<f64>>,
    pub loss: Vec<f64>,
}

impl RoundSample {
    pub fn num_actions(&self) -> usize {
        self.features.len()
    }

    /// `φ^m(x, a)` as the first `dim` coordinates.
    pub fn class_features(&self, action: usize, dim: usize) -> DVectorView<'_, f64> {
        self.features[action].rows(0, dim)
    }
}

impl EnvironmentSpec {
    /// Builds a Gaussian environment with `τ` and `γ` filled in from the design.
    pub fn gaussian(
        features: NestedFeatureSpec,
        m_star: usize,
        beta_star: Vec<f64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        features.validate()?;
        let (tau, gamma) = design_constants(&features);
        let spec = EnvironmentSpec {
            features,
            m_star,
            beta_star: DVector::from_vec(beta_star),
            noise_sigma,
            tau,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let d_star = self.features.dim_of(self.m_star).map_err(|_| {
            Error::Config(format!(
                "m_star = {} outside 1..={}",
                self.m_star, self.features.num_classes
            ))
        })?;
        if self.beta_star.len() != d_star {
            return Err(Error::Config(format!(
                "beta_star has length {} but d_(m_star) = {d_star}",
                self.beta_star.len()
            )));
        }
        if self.beta_star.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("beta_star has non-finite entries".into()));
        }
        let norm = self.beta_star.norm();
        if norm > 1.0 + 1e-12 {
            return Err(Error::Config(format!("||beta_star|| = {norm} exceeds 1")));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if self.noise_sigma > self.tau {
            return Err(Error::Config(format!(
                "noise_sigma = {} exceeds tau = {}",
                self.noise_sigma, self.tau
            )));
        }
        if self.m_star > 1 {
            let d_prev = self.features.dims[self.m_star - 2];
            if self
                .beta_star
                .rows(d_prev, d_star - d_prev)
                .iter()
                .all(|b| *b == 0.0)
            {
                return Err(Error::Config(format!(
                    "beta_star vanishes beyond coordinate {d_prev}, so m_star would be smaller than {}",
                    self.m_star
                )));
            }
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        self.features.num_actions
    }

    pub fn num_classes(&self) -> usize {
        self.features.num_classes
    }

    pub fn ambient_dim(&self) -> usize {
        self.features.ambient_dim()
    }

    pub fn d_star(&self) -> usize {
        self.beta_star.len()
    }

    fn coordinate_std(&self) -> Vec<f64> {
        self.features
            .design
            .coordinate_variances(self.ambient_dim())
            .into_iter()
            .map(f64::sqrt)
            .collect()
    }

    /// Draws per-action features only.
    pub fn sample_features<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        let std = self.coordinate_std();
        (0..self.num_actions())
            .map(|_| {
                DVector::from_iterator(
                    std.len(),
                    std.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)),
                )
            })
            .collect()
    }

    /// Draws a noisy loss vector for fixed features.
    pub fn sample_losses<R: Rng + ?Sized>(
        &self,
        features: &[DVector<f64>],
        rng: &mut R,
    ) -> Vec<f64> {
        features
            .iter()
            .map(|phi| {
                let noise: f64 = rng.sample(StandardNormal);
                self.mean_loss(phi) + self.noise_sigma * noise
            })
            .collect()
    }

    /// Draws one round: all actions' features first, then all noise terms.
    pub fn sample_round<R: Rng + ?Sized>(&self, rng: &mut R) -> RoundSample {
        let features = self.sample_features(rng);
        let loss = self.sample_losses(&features, rng);
        RoundSample { features, loss }
    }

    fn mean_loss(&self, phi: &DVector<f64>) -> f64 {
        self.beta_star.dot(&phi.rows(0, self.d_star()))
    }

    /// Noise-free conditional mean `⟨β*, φ^{m*}(x, a)⟩`.
    pub fn true_expected_loss(&self, sample: &RoundSample, action: usize) -> Result<f64> {
        let phi = sample
            .features
            .get(action)
            .ok_or_else(|| Error::IndexOutOfRange {
                index: action,
                valid: format!("0..{}", sample.num_actions()),
            })?;
        Ok(self.mean_loss(phi))
    }

    pub fn expected_losses(&self, sample: &RoundSample) -> Vec<f64> {
        sample
            .features
            .iter()
            .map(|phi| self.mean_loss(phi))
            .collect()
    }

    /// Bayes-optimal action, ties to the lowest index.
    pub fn optimal_action(&self, sample: &RoundSample) -> usize {
        argmin_first(sample.features.iter().map(|phi| self.mean_loss(phi)))
    }

    /// Exact action-averaged second moment `Σ_m`.
    pub fn population_second_moment(&self, m: usize) -> Result<SymMatrix> {
        let d = self.features.dim_of(m)?;
        let vars = self
            .features
            .design
            .coordinate_variances(self.ambient_dim());
        Ok(SymMatrix::from_diagonal(&vars[..d]))
    }

    /// Population square-loss minimizer `β*_m` over class `m`.
    pub fn population_beta(&self, m: usize) -> Result<DVector<f64>> {
        let d = self.features.dim_of(m)?;
        let d_star = self.d_star();
        if d >= d_star {
            let mut out = DVector::zeros(d);
            out.rows_mut(0, d_star).copy_from(&self.beta_star);
            return Ok(out);
        }
        // Cross moment (1/K)Σ_a E[φ^m ℓ(a)] is the top d_m block of Σ_{m*} β*.
        let sigma_star = self.population_second_moment(self.m_star)?;
        let cross: DVector<f64> = (sigma_star.as_matrix() * &self.beta_star)
            .rows(0, d)
            .into_owned();
        let sigma_m = self.population_second_moment(m)?;
        let chol = sigma_m
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or(Error::NotInvertible)?;
        Ok(chol.solve(&cross))
    }

    /// Square-loss gap `E_{i,j}` in closed form.
    pub fn population_gap(&self, i: usize, j: usize) -> Result<f64> {
        let bi = self.population_beta(i)?;
        let bj = self.population_beta(j)?;
        let d = bi.len().max(bj.len());
        let mut diff = DVector::zeros(d);
        {
            let mut v = diff.rows_mut(0, bi.len());
            v += &bi;
        }
        {
            let mut v = diff.rows_mut(0, bj.len());
            v -= &bj;
        }
        let sigma = self.population_second_moment(i.max(j))?;
        Ok((diff.transpose() * sigma.as_matrix() * &diff)[(0, 0)].max(0.0))
    }

    /// Monte-Carlo estimate (mean, standard error) of `L(π_i) − L(π_j)` for the
    /// argmin policies induced by `β*_i` and `β*_j`, using conditional-mean losses.
    pub fn policy_gap_monte_carlo<R: Rng + ?Sized>(
        &self,
        i: usize,
        j: usize,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if n_samples < 100 {
            return Err(Error::InsufficientData {
                needed: 100,
                got: n_samples,
            });
        }
        let bi = self.population_beta(i)?;
        let bj = self.population_beta(j)?;
        let policy = |beta: &DVector<f64>, feats: &[DVector<f64>]| {
            argmin_first(feats.iter().map(|phi| beta.dot(&phi.rows(0, beta.len()))))
        };
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_samples {
            let feats = self.sample_features(rng);
            let ai = policy(&bi, &feats);
            let aj = policy(&bj, &feats);
            let diff = if ai == aj {
                0.0
            } else {
                self.mean_loss(&feats[ai]) - self.mean_loss(&feats[aj])
            };
            sum += diff;
            sum_sq += diff * diff;
        }
        let n = n_samples as f64;
        let mean = sum / n;
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Ok((mean, (var / n).sqrt()))
    }

    /// Ambient-dimension cross moment `(1/K)Σ_a E[φ^M(x,a) ℓ(a)]`.
    pub fn population_cross_moment(&self) -> DVector<f64> {
        let sigma = self
            .population_second_moment(self.num_classes())
            .expect("M is valid");
        let mut padded = DVector::zeros(self.ambient_dim());
        padded.rows_mut(0, self.d_star()).copy_from(&self.beta_star);
        sigma.as_matrix() * padded
    }

    pub fn ambient_second_moment(&self) -> DMatrix<f64> {
        self.population_second_moment(self.num_classes())
            .expect("M is valid")
            .into_matrix()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;
    use approx::assert_relative_eq;

    fn iso(dims: Vec<usize>, m_star: usize, beta: Vec<f64>, sigma: f64) -> EnvironmentSpec {
        let f = NestedFeatureSpec::new(dims, 2, Design::IsotropicGaussian).unwrap();
        EnvironmentSpec::gaussian(f, m_star, beta, sigma).unwrap()
    }

    #[test]
    fn gaussian_norm_is_attained_at_p_one() {
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(gaussian_subgaussian_norm(), expected, epsilon = 1e-12);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let f = NestedFeatureSpec::new(vec![1, 2], 2, Design::IsotropicGaussian).unwrap();
        assert!(
            EnvironmentSpec::gaussian(f.clone(), 2, vec![1.0, 1.0], 0.1).is_err(),
            "norm > 1"
        );
        assert!(
            EnvironmentSpec::gaussian(f.clone(), 2, vec![0.5, 0.0], 0.1).is_err(),
            "tail zero"
        );
        assert!(
            EnvironmentSpec::gaussian(f.clone(), 2, vec![0.5], 0.1).is_err(),
            "length"
        );
        assert!(
            EnvironmentSpec::gaussian(f.clone(), 3, vec![0.5], 0.1).is_err(),
            "m_star range"
        );
        assert!(
            EnvironmentSpec::gaussian(f, 1, vec![0.5], 5.0).is_err(),
            "sigma > tau"
        );
        assert!(NestedFeatureSpec::new(vec![2, 2], 2, Design::IsotropicGaussian).is_err());
        assert!(NestedFeatureSpec::new(vec![2], 1, Design::IsotropicGaussian).is_err());
        assert!(NestedFeatureSpec::new(
            vec![2],
            2,
            Design::CorrelatedGaussian {
                condition_number: 0.5
            }
        )
        .is_err());
    }

    #[test]
    fn json_round_trip_uses_flat_field_names() {
        let env = iso(vec![1, 3], 2, vec![0.5, 0.0, 0.5], 0.1);
        let json = serde_json::to_value(&env).unwrap();
        let obj = json.as_object().unwrap();
        for key in [
            "num_classes",
            "dims",
            "num_actions",
            "design",
            "m_star",
            "beta_star",
            "noise_sigma",
            "tau",
            "gamma",
        ] {
            assert!(obj.contains_key(key), "missing {key}");
        }
        assert_eq!(obj.len(), 9);
        let back: EnvironmentSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn json_validation_applies_on_load() {
        let bad = r#"{"num_classes":2,"dims":[2,1],"num_actions":2,"design":{"kind":"IsotropicGaussian"},
            "m_star":1,"beta_star":[1.0,0.0],"noise_sigma":0.1,"tau":0.8,"gamma":1.0}"#;
        assert!(serde_json::from_str::<EnvironmentSpec>(bad).is_err());
    }

    #[test]
    fn noiseless_loss_is_first_coordinate() {
        let env = iso(vec![1, 3], 1, vec![1.0], 0.0);
        let mut rng = rng_from_seed(1);
        for _ in 0..50 {
            let s = env.sample_round(&mut rng);
            for a in 0..2 {
                assert_eq!(s.loss[a], s.features[a][0]);
                assert_eq!(s.loss[a], env.true_expected_loss(&s, a).unwrap());
            }
        }
    }

    #[test]
    fn expected_loss_by_hand() {
        let env = iso(vec![2], 1, vec![0.5, 0.8], 0.0);
        let s = RoundSample {
            features: vec![
                DVector::from_vec(vec![2.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0]),
            ],
            loss: vec![0.0, 0.0],
        };
        assert_eq!(env.true_expected_loss(&s, 0).unwrap(), 1.0);
        assert!(matches!(
            env.true_expected_loss(&s, 2),
            Err(Error::IndexOutOfRange { .. })
        ));

        let env = iso(vec![2], 1, vec![1.0, 0.0], 0.0);
        let s = RoundSample {
            features: vec![
                DVector::from_vec(vec![0.0, 1.0]),
                DVector::from_vec(vec![0.0, 1.0]),
            ],
            loss: vec![0.0, 0.0],
        };
        assert_eq!(env.true_expected_loss(&s, 0).unwrap(), 0.0);
    }

    #[test]
    fn optimal_action_argmin_and_ties() {
        let env = iso(vec![1], 1, vec![1.0], 0.0);
        let mk = |vals: &[f64]| RoundSample {
            features: vals.iter().map(|v| DVector::from_vec(vec![*v])).collect(),
            loss: vals.to_vec(),
        };
        assert_eq!(env.optimal_action(&mk(&[0.2, -0.1])), 1);
        assert_eq!(env.optimal_action(&mk(&[0.3, 0.3, 0.3])), 0);
        assert_eq!(env.optimal_action(&mk(&[1.0, 0.0, -3.0, 5.0])), 2);
    }

    #[test]
    fn noise_mean_matches_conditional_mean() {
        let env = iso(vec![2, 4], 2, vec![0.3, -0.2, 0.5, 0.4], 0.1);
        let mut rng = rng_from_seed(77);
        let feats = env.sample_features(&mut rng);
        let n = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            for (s, l) in sums.iter_mut().zip(env.sample_losses(&feats, &mut rng)) {
                *s += l;
            }
        }
        let tol = 3.0 * 0.1 / (n as f64).sqrt();
        for (a, s) in sums.iter().enumerate() {
            let mean = env.beta_star.dot(&feats[a]);
            assert!((s / n as f64 - mean).abs() <= tol, "action {a}");
        }
    }

    #[test]
    fn empirical_second_moment_is_near_identity() {
        let env = iso(vec![2, 5], 1, vec![0.6, 0.0], 0.1);
        let mut rng = rng_from_seed(5);
        let n = 100_000;
        let mut acc = DMatrix::zeros(5, 5);
        for _ in 0..n {
            for phi in env.sample_features(&mut rng) {
                acc += &phi * phi.transpose();
            }
        }
        acc /= (n * env.num_actions()) as f64;
        let err = crate::linalg::spectral_norm(&(acc - DMatrix::identity(5, 5)));
        assert!(err < 0.05, "spectral error {err}");
    }

    #[test]
    fn second_moment_examples() {
        let env = iso(vec![3, 5], 1, vec![0.1, 0.2, 0.3], 0.0);
        assert_eq!(
            env.population_second_moment(1).unwrap(),
            SymMatrix::identity(3)
        );

        let f = NestedFeatureSpec::new(
            vec![1, 2],
            2,
            Design::CorrelatedGaussian {
                condition_number: 4.0,
            },
        )
        .unwrap();
        let env = EnvironmentSpec::gaussian(f, 1, vec![0.5], 0.1).unwrap();
        let s2 = env.population_second_moment(2).unwrap();
        assert_relative_eq!(s2.get(0, 0), 1.0);
        assert_relative_eq!(s2.get(1, 1), 0.25);
        assert_eq!(s2.get(0, 1), 0.0);
        assert_eq!(
            env.population_second_moment(1).unwrap(),
            s2.leading_block(1).unwrap()
        );
        assert_relative_eq!(env.gamma, 0.5);
    }

    #[test]
    fn beta_above_m_star_is_padded_truth() {
        let env = iso(vec![1, 2, 4], 2, vec![0.5, 1.0 / 3.0], 0.0);
        let b = env.population_beta(3).unwrap();
        assert_eq!(b.as_slice(), &[0.5, 1.0 / 3.0, 0.0, 0.0]);
        let b1 = env.population_beta(1).unwrap();
        assert_eq!(b1.as_slice(), &[0.5]);
    }

    #[test]
    fn gap_examples() {
        let env = iso(vec![1, 2, 4], 2, vec![0.5, 0.8], 0.0);
        assert_eq!(env.population_gap(2, 3).unwrap(), 0.0);
        assert_eq!(env.population_gap(3, 3).unwrap(), 0.0);
        assert_relative_eq!(env.population_gap(1, 2).unwrap(), 0.64, epsilon = 1e-15);
        assert_eq!(
            env.population_gap(1, 2).unwrap(),
            env.population_gap(1, 3).unwrap()
        );

        let env = iso(vec![1, 2], 2, vec![0.5, 0.75], 0.0);
        assert_relative_eq!(env.population_gap(1, 2).unwrap(), 0.5625, epsilon = 1e-15);
    }

    #[test]
    fn correlated_restricted_beta_is_exact_minimizer() {
        // Independent coordinates: the restriction is still a projection.
        let f = NestedFeatureSpec::new(
            vec![2, 4],
            3,
            Design::CorrelatedGaussian {
                condition_number: 10.0,
            },
        )
        .unwrap();
        let env = EnvironmentSpec::gaussian(f, 2, vec![0.3, 0.2, -0.4, 0.5], 0.2).unwrap();
        let b1 = env.population_beta(1).unwrap();
        assert_relative_eq!(b1[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(b1[1], 0.2, epsilon = 1e-12);
        let vars = env.features.design.coordinate_variances(4);
        let expected = vars[2] * 0.16 + vars[3] * 0.25;
        assert_relative_eq!(env.population_gap(1, 2).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn policy_gap_identical_classes_is_zero() {
        let env = iso(vec![1, 3], 2, vec![0.5, 0.2, 0.1], 0.1);
        let mut rng = rng_from_seed(3);
        assert_eq!(
            env.policy_gap_monte_carlo(2, 2, 1000, &mut rng).unwrap(),
            (0.0, 0.0)
        );
        assert!(env.policy_gap_monte_carlo(1, 2, 10, &mut rng).is_err());
    }

    #[test]
    fn seed_determinism() {
        let env = iso(vec![2, 6], 2, vec![0.1, 0.2, 0.3, 0.0, 0.0, 0.4], 0.3);
        let mut a = rng_from_seed(42);
        let mut b = rng_from_seed(42);
        for _ in 0..100 {
            let (x, y) = (env.sample_round(&mut a), env.sample_round(&mut b));
            assert_eq!(x, y);
        }
    }

    #[test]
    fn truncation_reproduces_class_predictions() {
        let env = iso(vec![2, 3, 6], 3, vec![0.1, -0.3, 0.2, 0.4, 0.0, 0.1], 0.0);
        let mut rng = rng_from_seed(8);
        for _ in 0..20 {
            let s = env.sample_round(&mut rng);
            for m in 1..=3 {
                let d = env.features.dim_of(m).unwrap();
                let beta = env.population_beta(m).unwrap();
                let mut padded = DVector::zeros(6);
                padded.rows_mut(0, d).copy_from(&beta);
                for a in 0..2 {
                    let direct = beta.dot(&s.class_features(a, d));
                    let via_pad = padded.dot(&s.features[a]);
                    assert_eq!(direct, via_pad);
                }
            }
        }
    }
}
