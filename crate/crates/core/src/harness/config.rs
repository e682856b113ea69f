use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::residual::AlgorithmParams;

fn one() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.1
}
fn default_kappa() -> f64 {
    1.0 / 3.0
}
fn default_budget() -> usize {
    512
}
fn default_stride() -> usize {
    1
}
fn default_size1() -> usize {
    64
}

/// Tunables shared by ModCB and its single-class oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModCbSettings {
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "one")]
    pub explore_scale: f64,
    #[serde(default = "default_budget")]
    pub policy_budget: usize,
    #[serde(default = "default_stride")]
    pub test_every: usize,
}

impl Default for ModCbSettings {
    fn default() -> Self {
        ModCbSettings {
            c1: 1.0,
            c2: 1.0,
            delta: 0.1,
            kappa: 1.0 / 3.0,
            explore_scale: 1.0,
            policy_budget: 512,
            test_every: 1,
        }
    }
}

impl ModCbSettings {
    pub fn params(
        &self,
        env: &EnvironmentSpec,
        num_classes: usize,
        horizon: usize,
    ) -> AlgorithmParams {
        AlgorithmParams {
            tau: env.tau,
            gamma: env.gamma,
            delta: self.delta,
            kappa: self.kappa,
            c1: self.c1,
            c2: self.c2,
            num_actions: env.num_actions(),
            num_classes,
            horizon,
            explore_scale: self.explore_scale,
        }
    }
}

/// One learner to run, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AlgorithmSpec {
    ModCB {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        settings: ModCbSettings,
    },
    LinUCB {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "one")]
        premultiplier: f64,
        #[serde(default = "one")]
        ridge: f64,
    },
    /// Exp4-IX alone on one class (1-based).
    Exp4IXOnly {
        #[serde(default)]
        label: Option<String>,
        class_index: usize,
        #[serde(default = "default_budget")]
        policy_budget: usize,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    /// Explore-first between two classes with sampled finite policy sets.
    ExploreFirst {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "one")]
        delta_constant: f64,
        /// Defaults to class 1.
        #[serde(default)]
        small_class: Option<usize>,
        /// Defaults to the largest class.
        #[serde(default)]
        large_class: Option<usize>,
        #[serde(default = "default_size1")]
        small_size: usize,
        #[serde(default = "default_budget")]
        large_size: usize,
    },
    /// ModCB confined to one class (default `m*`): Exp4-IX plus the exploration schedule.
    Oracle {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        class_index: Option<usize>,
        #[serde(default)]
        settings: ModCbSettings,
    },
    Uniform {
        #[serde(default)]
        label: Option<String>,
    },
}

impl AlgorithmSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AlgorithmSpec::ModCB { .. } => "ModCB",
            AlgorithmSpec::LinUCB { .. } => "LinUCB",
            AlgorithmSpec::Exp4IXOnly { .. } => "Exp4IX",
            AlgorithmSpec::ExploreFirst { .. } => "ExploreFirst",
            AlgorithmSpec::Oracle { .. } => "Oracle",
            AlgorithmSpec::Uniform { .. } => "Uniform",
        }
    }

    /// Display name used in output files; defaults to the kind.
    pub fn label(&self) -> String {
        let label = match self {
            AlgorithmSpec::ModCB { label, .. }
            | AlgorithmSpec::LinUCB { label, .. }
            | AlgorithmSpec::Exp4IXOnly { label, .. }
            | AlgorithmSpec::ExploreFirst { label, .. }
            | AlgorithmSpec::Oracle { label, .. }
            | AlgorithmSpec::Uniform { label } => label,
        };
        label.clone().unwrap_or_else(|| self.kind().to_string())
    }

    pub fn set_label(&mut self, new: String) {
        match self {
            AlgorithmSpec::ModCB { label, .. }
            | AlgorithmSpec::LinUCB { label, .. }
            | AlgorithmSpec::Exp4IXOnly { label, .. }
            | AlgorithmSpec::ExploreFirst { label, .. }
            | AlgorithmSpec::Oracle { label, .. }
            | AlgorithmSpec::Uniform { label } => *label = Some(new),
        }
    }

    /// Mutable access to a named scalar hyperparameter, if this algorithm has it.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut f64> {
        match (self, name) {
            (AlgorithmSpec::ModCB { settings, .. } | AlgorithmSpec::Oracle { settings, .. }, _) => {
                match name {
                    "c1" => Some(&mut settings.c1),
                    "c2" => Some(&mut settings.c2),
                    "delta" => Some(&mut settings.delta),
                    "kappa" => Some(&mut settings.kappa),
                    "explore_scale" => Some(&mut settings.explore_scale),
                    _ => None,
                }
            }
            (AlgorithmSpec::LinUCB { premultiplier, .. }, "premultiplier") => Some(premultiplier),
            (AlgorithmSpec::LinUCB { ridge, .. }, "ridge") => Some(ridge),
            (AlgorithmSpec::Exp4IXOnly { delta, .. }, "delta") => Some(delta),
            (AlgorithmSpec::ExploreFirst { delta_constant, .. }, "delta_constant") => {
                Some(delta_constant)
            }
            _ => None,
        }
    }

    fn validate(&self, env: &EnvironmentSpec) -> Result<()> {
        let m = env.num_classes();
        let class_ok = |c: usize, what: &str| -> Result<()> {
            if c == 0 || c > m {
                return Err(Error::Config(format!("{what} = {c} outside 1..={m}")));
            }
            Ok(())
        };
        let positive = |v: f64, what: &str| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{what} must be positive, got {v}")));
            }
            Ok(())
        };
        let settings_ok = |s: &ModCbSettings, classes: usize| -> Result<()> {
            if s.policy_budget == 0 || s.test_every == 0 {
                return Err(Error::Config(
                    "policy_budget and test_every must be positive".into(),
                ));
            }
            s.params(env, classes, 1).validate()
        };
        match self {
            AlgorithmSpec::ModCB { settings, .. } => settings_ok(settings, m),
            AlgorithmSpec::Oracle {
                settings,
                class_index,
                ..
            } => {
                class_ok(class_index.unwrap_or(env.m_star), "class_index")?;
                settings_ok(settings, 1)
            }
            AlgorithmSpec::LinUCB {
                premultiplier,
                ridge,
                ..
            } => {
                if !(premultiplier.is_finite() && *premultiplier >= 0.0) {
                    return Err(Error::Config(format!(
                        "premultiplier must be nonnegative, got {premultiplier}"
                    )));
                }
                positive(*ridge, "ridge")
            }
            AlgorithmSpec::Exp4IXOnly {
                class_index,
                policy_budget,
                delta,
                ..
            } => {
                class_ok(*class_index, "class_index")?;
                if *policy_budget == 0 {
                    return Err(Error::Config("policy_budget must be positive".into()));
                }
                positive(*delta, "delta")
            }
            AlgorithmSpec::ExploreFirst {
                delta_constant,
                small_class,
                large_class,
                small_size,
                large_size,
                ..
            } => {
                class_ok(small_class.unwrap_or(1), "small_class")?;
                class_ok(large_class.unwrap_or(m), "large_class")?;
                if *small_size < 2 || small_size > large_size {
                    return Err(Error::Config(format!(
                        "need 2 <= small_size <= large_size, got {small_size} and {large_size}"
                    )));
                }
                positive(*delta_constant, "delta_constant")
            }
            AlgorithmSpec::Uniform { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    pub horizon: usize,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output_path: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms configured".into()));
        }
        self.environment.validate()?;
        let mut labels = std::collections::HashSet::new();
        for alg in &self.algorithms {
            alg.validate(&self.environment)?;
            if !labels.insert(alg.label()) {
                return Err(Error::Config(format!(
                    "duplicate algorithm label {:?}",
                    alg.label()
                )));
            }
        }
        Ok(())
    }

    /// Expands every algorithm that has hyperparameter `name` into one copy per
    /// value, labelled `Kind[name=value]`. A `Kind.name` prefix restricts the
    /// sweep to that kind. Errors if nothing matches.
    pub fn sweep(&self, name: &str, values: &[f64]) -> Result<ExperimentConfig> {
        let (kind, param) = match name.split_once('.') {
            Some((k, p)) => (Some(k), p),
            None => (None, name),
        };
        let mut out = Vec::new();
        let mut matched = false;
        for alg in &self.algorithms {
            let applies =
                kind.is_none_or(|k| k == alg.kind()) && alg.clone().param_mut(param).is_some();
            if !applies {
                out.push(alg.clone());
                continue;
            }
            matched = true;
            for v in values {
                let mut copy = alg.clone();
                *copy.param_mut(param).expect("checked") = *v;
                copy.set_label(format!("{}[{param}={v}]", alg.label()));
                out.push(copy);
            }
        }
        if !matched {
            return Err(Error::Config(format!(
                "no configured algorithm has parameter {name:?}"
            )));
        }
        let cfg = ExperimentConfig {
            algorithms: out,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "environment": {"num_classes": 2, "dims": [2, 4], "num_actions": 2,
                        "design": {"kind": "IsotropicGaussian"}, "m_star": 1,
                        "beta_star": [0.6, 0.0], "noise_sigma": 0.1},
        "algorithms": [{"kind": "ModCB", "settings": {"c1": 0.5}}, {"kind": "LinUCB"}, {"kind": "Uniform"}],
        "horizon": 50, "replicates": 2
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(SMALL).unwrap();
        assert_eq!(cfg.base_seed, 0);
        match &cfg.algorithms[0] {
            AlgorithmSpec::ModCB { settings, .. } => {
                assert_eq!(settings.c1, 0.5);
                assert_eq!(settings.policy_budget, 512);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(cfg.algorithms[1].label(), "LinUCB");
        assert!((cfg.environment.tau - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = SMALL.replace("\"replicates\": 2", "\"replicates\": 0");
        assert!(matches!(
            ExperimentConfig::from_json(&bad),
            Err(Error::Config(_))
        ));
        let bad = SMALL.replace(
            "{\"kind\": \"LinUCB\"}",
            "{\"kind\": \"LinUCB\", \"ridge\": -1}",
        );
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = SMALL.replace("\"c1\": 0.5", "\"C1\": 0.5");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn sweep_expands_matching_algorithms() {
        let cfg = ExperimentConfig::from_json(SMALL).unwrap();
        let swept = cfg.sweep("premultiplier", &[0.1, 1.0, 3.0]).unwrap();
        let labels: Vec<String> = swept.algorithms.iter().map(|a| a.label()).collect();
        assert_eq!(
            labels,
            vec![
                "ModCB",
                "LinUCB[premultiplier=0.1]",
                "LinUCB[premultiplier=1]",
                "LinUCB[premultiplier=3]",
                "Uniform"
            ]
        );
        assert!(cfg.sweep("nonexistent", &[1.0]).is_err());
        assert_eq!(
            cfg.sweep("ModCB.c1", &[1.0, 2.0]).unwrap().algorithms.len(),
            4
        );
    }
}
