use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::gae::TrajectoryBatch;
use super::metrics::{CsvLog, EvalRow, MetricsRow};
use super::policy::{log_prob_f64, ppo_loss, sample, PpoMinibatch};
use super::LearnError;
use crate::autodiff::{Adam, Real, Tape, Tensor};
use crate::envs::{reset, step, ActionSource, EnvSpec, RandomPolicy, VecEnv};
use crate::nets::checkpoint::{self, CheckpointManifest};
use crate::nets::{actor_forward, ActorKind, CriticSpec, NetSpec, Params};

/// Offsets separating the random streams derived from one seed.
const EVAL_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const ENV_STREAM: u64 = 0x6a09_e667_f3bc_c909;

pub struct TrainOptions<'a> {
    /// Directory for `metrics.csv`, `eval.csv` and checkpoints.
    pub out_dir: Option<&'a Path>,
    /// Report `wall_ms = 0` so that metrics are byte-reproducible.
    pub deterministic: bool,
    pub on_iteration: Option<&'a (dyn Fn(&MetricsRow) + Sync)>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            out_dir: None,
            deterministic: true,
            on_iteration: None,
        }
    }
}

pub struct TrainOutcome<T> {
    pub actor: NetSpec,
    pub critic: CriticSpec,
    /// Actor and critic tensors together (critic names start with `critic.`).
    pub params: Params<T>,
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalRow>,
    pub random_return: f64,
    pub best_eval: f64,
    pub final_eval: f64,
    pub env_steps: usize,
}

/// Map an unbounded policy sample to joint torques.
pub fn to_torque(env: &EnvSpec, u: &[f64]) -> Vec<f64> {
    u.iter().zip(&env.torque_limit).map(|(x, l)| x.clamp(-1.0, 1.0) * l).collect()
}

pub fn actor_spec(kind: ActorKind, env: &EnvSpec, cfg: &TrainConfig) -> NetSpec {
    let mut spec = NetSpec::policy(kind, &env.tree, env.obs_dim(), cfg.d, cfg.head_hidden);
    spec.orth_per_sample = cfg.orth_per_sample;
    spec
}

fn episode_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(EVAL_STREAM.wrapping_mul(i as u64 + 1))
}

fn run_episode(env: &EnvSpec, seed: u64, policy: &mut dyn ActionSource) -> Result<f64, LearnError> {
    let mut state = reset(env, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ENV_STREAM);
    let mut ret = 0.0;
    loop {
        let a = policy.act(&state.obs(), &mut rng);
        let (next, tr) = step(env, &state, &a)?;
        ret += tr.reward;
        if tr.done || tr.truncated {
            return Ok(ret);
        }
        state = next;
    }
}

/// Mean return of the uniform random policy over `episodes` episodes.
pub fn random_baseline(env: &EnvSpec, episodes: usize, seed: u64) -> Result<f64, LearnError> {
    let rets: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(env, episode_seed(seed, i), &mut RandomPolicy::new(env)))
        .collect::<Result<_, _>>()?;
    Ok(rets.iter().sum::<f64>() / episodes as f64)
}

/// Per-episode returns of the deterministic (mean-action) policy.
/// `net_tree` is the morphology the network was built for; `env` may carry a
/// modified tree.
pub fn evaluate<T: Real>(
    actor: &NetSpec,
    net_tree: &crate::morphology::KinematicTree,
    params: &Params<T>,
    env: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>, LearnError> {
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut err = None;
            let mut policy = |obs: &[f64], _: &mut ChaCha8Rng| -> Vec<f64> {
                let x: Vec<T> = obs.iter().map(|&v| T::lit(v)).collect();
                match crate::nets::predict(actor, net_tree, params, &[x]) {
                    Ok(out) => to_torque(env, &out[0].iter().map(|v| v.as_f64()).collect::<Vec<_>>()),
                    Err(e) => {
                        err = Some(e);
                        vec![0.0; env.action_dim()]
                    }
                }
            };
            let r = run_episode(env, episode_seed(seed, i), &mut policy)?;
            match err {
                Some(e) => Err(e.into()),
                None => Ok(r),
            }
        })
        .collect()
}

fn to_tensor<T: Real>(rows: &[&Vec<f64>], cols: usize) -> Tensor<T> {
    let data: Vec<T> = rows.iter().flat_map(|r| r.iter().map(|&x| T::lit(x))).collect();
    Tensor::new(&[rows.len(), cols], data).expect("rows have equal length")
}

struct Collected {
    batch: TrajectoryBatch,
    finished: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn collect<T: Real>(
    actor: &NetSpec,
    critic: &CriticSpec,
    env: &EnvSpec,
    params: &Params<T>,
    envs: &mut VecEnv,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Collected, LearnError> {
    let n = envs.len();
    let o = env.obs_dim();
    let mut per_env: Vec<TrajectoryBatch> = vec![TrajectoryBatch::default(); n];
    let mut finished = Vec::new();
    for _ in 0..steps {
        let obs = envs.observations();
        let (means, log_std, values) = {
            let tape = Tape::new();
            let bound = params.bind(&tape, false);
            let x = tape.constant(to_tensor::<T>(&obs.iter().collect::<Vec<_>>(), o));
            let out = actor_forward(actor, &env.tree, &bound, x, false)?;
            let v = critic.forward(&bound, x)?;
            (out.mean.value().to_f64(), out.log_std.expect("stochastic").value().to_f64(), v.value().to_f64())
        };
        let a_dim = log_std.len();
        let mut raw = Vec::with_capacity(n);
        let mut torques = Vec::with_capacity(n);
        let mut logps = Vec::with_capacity(n);
        for i in 0..n {
            let mean = &means[i * a_dim..(i + 1) * a_dim];
            let u = sample(mean, &log_std, rng);
            logps.push(log_prob_f64(mean, &log_std, &u));
            torques.push(to_torque(env, &u));
            raw.push(u);
        }
        let results = envs.step(&torques)?;
        let next_values = {
            let tape = Tape::new();
            let bound = params.bind(&tape, false);
            let rows: Vec<&Vec<f64>> = results.iter().map(|(t, _)| &t.next_obs).collect();
            critic.forward(&bound, tape.constant(to_tensor::<T>(&rows, o)))?.value().to_f64()
        };
        for (i, ((tr, ret), u)) in results.into_iter().zip(raw).enumerate() {
            let b = &mut per_env[i];
            b.obs.push(obs[i].clone());
            b.actions.push(u);
            b.rewards.push(tr.reward);
            b.dones.push(tr.done);
            b.truncations.push(tr.truncated);
            b.log_probs.push(logps[i]);
            b.values.push(values[i]);
            b.next_values.push(next_values[i]);
            if let Some(r) = ret {
                finished.push(r);
            }
        }
    }
    let mut batch = TrajectoryBatch::default();
    for b in per_env {
        batch.obs.extend(b.obs);
        batch.actions.extend(b.actions);
        batch.rewards.extend(b.rewards);
        batch.dones.extend(b.dones);
        batch.truncations.extend(b.truncations);
        batch.log_probs.extend(b.log_probs);
        batch.values.extend(b.values);
        batch.next_values.extend(b.next_values);
    }
    Ok(Collected { batch, finished })
}

fn minibatch<T: Real>(batch: &TrajectoryBatch, idx: &[usize], normalize: bool) -> PpoMinibatch<T> {
    let obs: Vec<&Vec<f64>> = idx.iter().map(|&i| &batch.obs[i]).collect();
    let acts: Vec<&Vec<f64>> = idx.iter().map(|&i| &batch.actions[i]).collect();
    let mut adv: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();
    if normalize && adv.len() > 1 {
        let m = adv.iter().sum::<f64>() / adv.len() as f64;
        let var = adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / adv.len() as f64;
        let s = var.sqrt() + 1e-8;
        adv.iter_mut().for_each(|a| *a = (*a - m) / s);
    }
    let vec = |v: Vec<f64>| Tensor::from_f64(&[v.len()], &v).expect("vector");
    PpoMinibatch {
        obs: to_tensor(&obs, obs[0].len()),
        actions: to_tensor(&acts, acts[0].len()),
        old_log_probs: vec(idx.iter().map(|&i| batch.log_probs[i]).collect()),
        advantages: vec(adv),
        returns: vec(idx.iter().map(|&i| batch.returns[i]).collect()),
    }
}

/// Scale gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq().as_f64()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

/// Clipped-surrogate PPO with GAE and a shared-architecture MLP critic.
pub fn ppo_train<T: Real>(
    kind: ActorKind,
    env: &EnvSpec,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome<T>, LearnError> {
    cfg.validate()?;
    let actor = actor_spec(kind, env, cfg);
    actor.validate(&env.tree)?;
    let critic = CriticSpec::new(env.obs_dim());
    let mut params = actor.init::<T>(&env.tree, cfg.seed);
    for (name, t) in critic.init::<T>(cfg.seed.wrapping_add(1)).iter() {
        params.push(name.to_string(), t.clone());
    }
    let mut adam = Adam::new(cfg.adam(), params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval_seed = cfg.seed.wrapping_add(EVAL_STREAM);
    let random_return = random_baseline(env, cfg.eval_episodes, eval_seed)?;

    let mut metrics_log = None;
    let mut eval_log = None;
    if let Some(dir) = opts.out_dir {
        std::fs::create_dir_all(dir)?;
        metrics_log = Some(CsvLog::create(&dir.join("metrics.csv"))?);
        eval_log = Some(CsvLog::create(&dir.join("eval.csv"))?);
    }

    let mut envs = VecEnv::new(Arc::new(env.clone()), cfg.n_envs, cfg.seed ^ ENV_STREAM);
    let per_iter = cfg.n_envs * cfg.rollout_len;
    let iterations = cfg.total_env_steps.div_ceil(per_iter);
    let mut metrics = Vec::new();
    let mut evals = Vec::new();
    let mut env_steps = 0;
    let mut best_eval = f64::NEG_INFINITY;
    let mut final_eval = f64::NAN;
    for iter in 1..=iterations {
        let started = Instant::now();
        let Collected { mut batch, finished } = collect(&actor, &critic, env, &params, &mut envs, cfg.rollout_len, &mut rng)?;
        env_steps += batch.len();
        batch.compute_advantages(cfg.rollout_len, cfg.gamma, cfg.gae_lambda);

        let mut sums = [0.0f64; 4];
        let mut updates = 0usize;
        let mut order: Vec<usize> = (0..batch.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(cfg.minibatch_size) {
                let mb = minibatch::<T>(&batch, idx, cfg.normalize_advantages);
                let tape = Tape::new();
                let bound = params.bind(&tape, true);
                let loss = ppo_loss(&actor, &env.tree, &critic, &bound, &mb, cfg)?;
                let total = loss.total.item().as_f64();
                if !total.is_finite() {
                    return Err(LearnError::NaNLoss { iteration: iter });
                }
                let g = tape.backward(loss.total)?;
                let mut grads: Vec<Tensor<T>> = bound.vars().iter().map(|v| g.get(*v)).collect();
                if grads.iter().any(|t| !t.is_finite()) {
                    return Err(LearnError::NaNLoss { iteration: iter });
                }
                clip_grad_norm(&mut grads, cfg.max_grad_norm);
                adam.step(params.tensors_mut(), &grads)?;
                sums[0] += loss.policy.item().as_f64();
                sums[1] += loss.value.item().as_f64();
                sums[2] += loss.entropy.item().as_f64();
                sums[3] += loss.orth.map_or(0.0, |o| o.item().as_f64());
                updates += 1;
            }
        }
        let avg = |s: f64| s / updates as f64;
        let row = MetricsRow {
            iter,
            env_steps,
            mean_return: if finished.is_empty() {
                f64::NAN
            } else {
                finished.iter().sum::<f64>() / finished.len() as f64
            },
            policy_loss: avg(sums[0]),
            value_loss: avg(sums[1]),
            entropy: avg(sums[2]),
            orth_loss: avg(sums[3]),
            wall_ms: if opts.deterministic { 0 } else { started.elapsed().as_millis() as u64 },
        };
        if let Some(log) = metrics_log.as_mut() {
            log.write(&row)?;
        }
        if let Some(cb) = opts.on_iteration {
            cb(&row);
        }
        metrics.push(row);

        if iter % cfg.eval_interval == 0 || iter == iterations {
            let rets = evaluate(&actor, &env.tree, &params, env, cfg.eval_episodes, eval_seed)?;
            let mean = rets.iter().sum::<f64>() / rets.len() as f64;
            best_eval = best_eval.max(mean);
            final_eval = mean;
            let er = EvalRow {
                iter,
                env_steps,
                eval_return: mean,
                random_return,
            };
            if let Some(log) = eval_log.as_mut() {
                log.write(&er)?;
            }
            evals.push(er);
            if let Some(dir) = opts.out_dir {
                let m = manifest::<T>(&actor, &critic, env, cfg, iter, env_steps);
                checkpoint::save(&dir.join(format!("ckpt_{iter:05}.bin")), &m, &params)?;
            }
            if cfg.target_return.is_some_and(|t| mean >= t) {
                break;
            }
        }
    }
    if let Some(dir) = opts.out_dir {
        let last = metrics.last().map_or(0, |r| r.iter);
        checkpoint::save(&dir.join("final.bin"), &manifest::<T>(&actor, &critic, env, cfg, last, env_steps), &params)?;
    }
    Ok(TrainOutcome {
        actor,
        critic,
        params,
        metrics,
        evals,
        random_return,
        best_eval,
        final_eval,
        env_steps,
    })
}

fn manifest<T: Real>(
    actor: &NetSpec,
    critic: &CriticSpec,
    env: &EnvSpec,
    cfg: &TrainConfig,
    iter: usize,
    env_steps: usize,
) -> CheckpointManifest {
    let mut m = CheckpointManifest::new::<T>(actor, &env.tree, Some(critic.clone()), Some(env.name().to_string()));
    m.meta = serde_json::json!({
        "iteration": iter,
        "env_steps": env_steps,
        "config": cfg,
    });
    m
}
