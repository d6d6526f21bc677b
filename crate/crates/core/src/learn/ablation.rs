use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Precision, TrainConfig};
use super::ppo::{ppo_train, TrainOptions, TrainOutcome};
use super::LearnError;
use crate::autodiff::Real;
use crate::envs::EnvSpec;
use crate::nets::ActorKind;

/// One `(variant, seed, metric)` cell of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

fn rows_for<T: Real>(kind: ActorKind, seed: u64, env: &EnvSpec, out: &TrainOutcome<T>) -> Vec<AblationRow> {
    let last_orth = out.metrics.last().map_or(0.0, |r| r.orth_loss);
    let last_return = out.metrics.iter().rev().map(|r| r.mean_return).find(|r| r.is_finite()).unwrap_or(f64::NAN);
    [
        ("final_eval_return", out.final_eval),
        ("best_eval_return", out.best_eval),
        ("random_return", out.random_return),
        ("final_train_return", last_return),
        ("final_orth_loss", last_orth),
        ("param_count", out.actor.param_count(&env.tree) as f64),
        ("env_steps", out.env_steps as f64),
    ]
    .into_iter()
    .map(|(m, v)| AblationRow {
        variant: kind.to_string(),
        seed,
        metric: m.to_string(),
        value: v,
    })
    .collect()
}

/// Train every variant with every seed under the same configuration.
/// Each run's artifacts go to `<out>/<variant>_seed<seed>/`.
pub fn ablation_suite(
    env: &EnvSpec,
    cfg: &TrainConfig,
    variants: &[ActorKind],
    seeds: &[u64],
    out_dir: Option<&Path>,
    deterministic: bool,
) -> Result<Vec<AblationRow>, LearnError> {
    let mut rows = Vec::new();
    for &kind in variants {
        for &seed in seeds {
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let dir = out_dir.map(|d| d.join(format!("{kind}_seed{seed}")));
            let opts = TrainOptions {
                out_dir: dir.as_deref(),
                deterministic,
                on_iteration: None,
            };
            rows.extend(match cfg.precision {
                Precision::F32 => rows_for(kind, seed, env, &ppo_train::<f32>(kind, env, &run_cfg, &opts)?),
                Precision::F64 => rows_for(kind, seed, env, &ppo_train::<f64>(kind, env, &run_cfg, &opts)?),
            });
        }
    }
    Ok(rows)
}
