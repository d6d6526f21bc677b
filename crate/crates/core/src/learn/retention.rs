use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{evaluate, random_baseline};
use super::LearnError;
use crate::autodiff::Real;
use crate::dynamics::mass_scaled;
use crate::envs::EnvSpec;
use crate::nets::checkpoint::CheckpointManifest;
use crate::nets::Params;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// One row of `retention.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub factor: f64,
    pub mean_return: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub retention_pct: f64,
    pub retention_ci_low: f64,
    pub retention_ci_high: f64,
    pub n_episodes: usize,
    pub non_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub env: String,
    pub link: String,
    pub nominal: Estimate,
    /// One row per factor, in the order requested.
    pub rows: Vec<RetentionRow>,
    pub n_episodes: usize,
    pub seed: u64,
    pub random_return: f64,
    /// Nominal return below twice the random-policy return ("N/C").
    pub non_converged: bool,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 95% percentile-bootstrap interval of `stat` over paired resamples of
/// episode indices.
pub fn bootstrap_ci(n: usize, seed: u64, stat: impl Fn(&[usize]) -> f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            stat(&idx)
        })
        .collect();
    draws.sort_by(|a, b| a.total_cmp(b));
    (percentile(&draws, 0.025), percentile(&draws, 0.975))
}

fn mean_of(x: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64
}

/// Returns of the trained policy on the nominal tree and with the mass of
/// `env.config.base_link` scaled by each factor. Every variant replays the
/// same episode seeds.
pub fn eval_retention<T: Real>(
    manifest: &CheckpointManifest,
    params: &Params<T>,
    env: &EnvSpec,
    factors: &[f64],
    n_episodes: usize,
    seed: u64,
) -> Result<RetentionReport, LearnError> {
    if n_episodes == 0 {
        return Err(LearnError::Config("need at least one episode".into()));
    }
    if factors.iter().any(|f| !(*f > 0.0)) {
        return Err(LearnError::Config("mass factors must be positive".into()));
    }
    manifest.check_tree(&env.tree)?;
    let link = env
        .config
        .base_link
        .clone()
        .ok_or_else(|| LearnError::Config(format!("environment `{}` names no base link", env.name())))?;
    let (actor, _) = crate::nets::checkpoint::split_critic(params);
    let nominal = evaluate(&manifest.net, &env.tree, &actor, env, n_episodes, seed)?;
    let random_return = random_baseline(env, n_episodes, seed)?;
    let all: Vec<usize> = (0..n_episodes).collect();
    let nominal_mean = mean_of(&nominal, &all);
    let (lo, hi) = bootstrap_ci(n_episodes, seed, |idx| mean_of(&nominal, idx));
    let non_converged = nominal_mean < 2.0 * random_return;

    let mut rows = Vec::with_capacity(factors.len());
    for &f in factors {
        let shifted_env = env.with_tree(mass_scaled(&env.tree, &link, f).map_err(crate::envs::EnvError::from)?)?;
        let shifted = evaluate(&manifest.net, &env.tree, &actor, &shifted_env, n_episodes, seed)?;
        let mean = mean_of(&shifted, &all);
        let (slo, shi) = bootstrap_ci(n_episodes, seed, |idx| mean_of(&shifted, idx));
        let (rlo, rhi) = bootstrap_ci(n_episodes, seed, |idx| 100.0 * mean_of(&shifted, idx) / mean_of(&nominal, idx));
        rows.push(RetentionRow {
            factor: f,
            mean_return: mean,
            ci_low: slo,
            ci_high: shi,
            retention_pct: 100.0 * mean / nominal_mean,
            retention_ci_low: rlo,
            retention_ci_high: rhi,
            n_episodes,
            non_converged,
        });
    }
    Ok(RetentionReport {
        env: env.name().to_string(),
        link,
        nominal: Estimate {
            mean: nominal_mean,
            ci_low: lo,
            ci_high: hi,
        },
        rows,
        n_episodes,
        seed,
        random_return,
        non_converged,
    })
}
