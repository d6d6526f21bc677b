//! Diagonal-Gaussian policy head and the PPO objective.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::TrainConfig;
use crate::autodiff::{Real, Tensor, Var};
use crate::morphology::KinematicTree;
use crate::nets::{actor_forward, Bound, CriticSpec, NetError, NetSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log N(a; μ, diag σ²)` per row: `[B, A] → [B]`.
pub fn gaussian_log_prob<'t, T: Real>(
    mean: Var<'t, T>,
    log_std: Var<'t, T>,
    actions: Var<'t, T>,
) -> Result<Var<'t, T>, NetError> {
    let shape = mean.shape();
    let (b, a) = (shape[0], shape[1]);
    let inv_std = log_std.neg().exp().repeat_rows(b)?;
    let z = actions.sub(mean)?.mul(inv_std)?;
    let quad = z.square().sum_cols().scalar_mul(-0.5).add_scalar(-0.5 * a as f64 * LN_2PI);
    let norm = log_std.sum().reshape(&[1])?;
    Ok(quad.reshape(&[b, 1])?.add_bias(norm.neg())?.reshape(&[b])?)
}

/// Differential entropy of the diagonal Gaussian (scalar).
pub fn gaussian_entropy<'t, T: Real>(log_std: Var<'t, T>) -> Var<'t, T> {
    let a = log_std.shape()[0] as f64;
    log_std.sum().add_scalar(0.5 * a * (1.0 + LN_2PI))
}

/// Log-density evaluated outside the tape.
pub fn log_prob_f64(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let mut lp = -0.5 * mean.len() as f64 * LN_2PI;
    for ((m, s), a) in mean.iter().zip(log_std).zip(action) {
        let z = (a - m) / s.exp();
        lp -= 0.5 * z * z + s;
    }
    lp
}

pub fn sample(mean: &[f64], log_std: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// A minibatch for the PPO objective.
#[derive(Debug, Clone)]
pub struct PpoMinibatch<T> {
    /// `[B, obs_dim]`.
    pub obs: Tensor<T>,
    /// `[B, A]` unsquashed samples.
    pub actions: Tensor<T>,
    pub old_log_probs: Tensor<T>,
    pub advantages: Tensor<T>,
    pub returns: Tensor<T>,
}

pub struct PpoLoss<'t, T> {
    pub total: Var<'t, T>,
    pub policy: Var<'t, T>,
    pub value: Var<'t, T>,
    pub entropy: Var<'t, T>,
    /// Unweighted orthogonality loss; absent unless it enters the objective.
    pub orth: Option<Var<'t, T>>,
}

/// `L = L_clip + c_v·L_V − c_e·H + λ_orth·L_orth`.
pub fn ppo_loss<'t, T: Real>(
    actor: &NetSpec,
    tree: &KinematicTree,
    critic: &CriticSpec,
    bound: &Bound<'t, T>,
    mb: &PpoMinibatch<T>,
    cfg: &TrainConfig,
) -> Result<PpoLoss<'t, T>, NetError> {
    let tape = bound.vars()[0].tape();
    let obs = tape.constant(mb.obs.clone());
    let with_orth = cfg.orth_weight > 0.0 && actor.kind == crate::nets::ActorKind::AbdNet;
    let out = actor_forward(actor, tree, bound, obs, with_orth)?;
    let log_std = out
        .log_std
        .ok_or_else(|| NetError::Config("PPO needs a stochastic actor".into()))?;
    let logp = gaussian_log_prob(out.mean, log_std, tape.constant(mb.actions.clone()))?;
    let ratio = logp.sub(tape.constant(mb.old_log_probs.clone()))?.exp();
    let adv = tape.constant(mb.advantages.clone());
    let unclipped = ratio.mul(adv)?;
    let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps).mul(adv)?;
    let policy = unclipped.minimum(clipped)?.mean().neg();

    let v = critic.forward(bound, obs)?;
    let value = v.sub(tape.constant(mb.returns.clone()))?.square().mean();
    let entropy = gaussian_entropy(log_std);

    let mut total = policy.add(value.scalar_mul(cfg.value_coef))?;
    if cfg.entropy_coef > 0.0 {
        total = total.sub(entropy.scalar_mul(cfg.entropy_coef))?;
    }
    if let Some(o) = out.orth {
        total = total.add(o.scalar_mul(cfg.orth_weight))?;
    }
    Ok(PpoLoss {
        total,
        policy,
        value,
        entropy,
        orth: out.orth,
    })
}
