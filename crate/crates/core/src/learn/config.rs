use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::autodiff::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision `{s}`; valid choices: f32, f64")),
        }
    }
}

/// PPO configuration. Every field has a default so config files may be
/// partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    pub orth_weight: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub total_env_steps: usize,
    pub n_envs: usize,
    /// Control steps collected per environment per iteration.
    pub rollout_len: usize,
    pub seed: u64,
    /// Iterations between evaluations and checkpoints.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Stop once a deterministic evaluation reaches this mean return.
    pub target_return: Option<f64>,
    pub d: usize,
    pub head_hidden: usize,
    pub orth_per_sample: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 4,
            minibatch_size: 256,
            lr: 3e-4,
            orth_weight: 1e-2,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            total_env_steps: 200_000,
            n_envs: 16,
            rollout_len: 128,
            seed: 0,
            eval_interval: 10,
            eval_episodes: 10,
            target_return: None,
            d: 16,
            head_hidden: 32,
            orth_per_sample: false,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let fail = |m: &str| Err(LearnError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return fail("clip_eps must be positive");
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if self.orth_weight < 0.0 || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return fail("loss weights must be non-negative");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.n_envs == 0 || self.rollout_len == 0 {
            return fail("epochs, minibatch_size, n_envs and rollout_len must be positive");
        }
        if self.total_env_steps == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return fail("total_env_steps, eval_interval and eval_episodes must be positive");
        }
        if self.d == 0 || self.head_hidden == 0 {
            return fail("d and head_hidden must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Dynamics-model regression configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressConfig {
    /// Transitions collected with a uniform random policy.
    pub dataset_steps: usize,
    pub val_fraction: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    pub orth_weight: f64,
    pub d: usize,
    pub head_hidden: usize,
    pub seed: u64,
    pub rollout_horizons: Vec<usize>,
    pub precision: Precision,
}

impl Default for RegressConfig {
    fn default() -> Self {
        Self {
            dataset_steps: 20_000,
            val_fraction: 0.1,
            epochs: 40,
            minibatch_size: 128,
            lr: 1e-3,
            orth_weight: 1e-4,
            d: 32,
            head_hidden: 32,
            seed: 0,
            rollout_horizons: vec![1, 3, 5],
            precision: Precision::F32,
        }
    }
}

impl RegressConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let fail = |m: &str| Err(LearnError::Config(m.to_string()));
        if self.dataset_steps < 2 {
            return fail("dataset_steps must be at least 2");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail("val_fraction must lie in (0, 1)");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.d == 0 || self.head_hidden == 0 {
            return fail("epochs, minibatch_size, d and head_hidden must be positive");
        }
        if !(self.lr > 0.0) || self.orth_weight < 0.0 {
            return fail("lr must be positive and orth_weight non-negative");
        }
        if self.rollout_horizons.iter().any(|&k| k == 0) {
            return fail("rollout horizons must be positive");
        }
        Ok(())
    }
}
