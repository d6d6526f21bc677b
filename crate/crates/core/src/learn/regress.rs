//! Supervised next-observation models `(s, a) ↦ s′`.
//!
//! Both model kinds predict the standardised residual `(s′ − s − μ) / σ`.
//! ABD-Net reads `[s, a / τmax]` in every encoder and has one head per link
//! that owns observation entries; each head reads the owner's parent link
//! (the root for root-owned entries). Reported errors are mean squared
//! errors in standardised-residual units.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RegressConfig;
use super::LearnError;
use crate::autodiff::{Adam, AdamConfig, Real, Tape, Tensor};
use crate::envs::{episode_ids, rollout_dataset, EnvSpec, RandomPolicy, Transition};
use crate::morphology::KinematicTree;
use crate::nets::{actor_forward, ActorKind, HeadSpec, NetSpec, Params};

/// Network plus the fixed input/output scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub spec: NetSpec,
    /// Observation index predicted by each output column.
    pub output_index: Vec<usize>,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
    pub torque_limit: Vec<f64>,
}

/// Heads grouped by owning link, and the observation index of each output.
pub fn dynamics_heads(env: &EnvSpec) -> (Vec<HeadSpec>, Vec<usize>) {
    let tree = &env.tree;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, owner) in env.obs_owners().into_iter().enumerate() {
        groups.entry(owner).or_default().push(k);
    }
    let mut heads = Vec::new();
    let mut index = Vec::new();
    for (owner, entries) in groups {
        let reads = tree.parent(owner).unwrap_or(owner);
        heads.push(HeadSpec {
            name: format!("state.{}", tree.link(owner).name),
            link: tree.link(reads).name.clone(),
            out_dim: entries.len(),
        });
        index.extend(entries);
    }
    (heads, index)
}

pub fn dynamics_spec(kind: ActorKind, env: &EnvSpec, cfg: &RegressConfig) -> (NetSpec, Vec<usize>) {
    let (heads, index) = dynamics_heads(env);
    let in_dim = env.base_obs_dim() + env.action_dim();
    (NetSpec::matched(kind, &env.tree, in_dim, cfg.d, cfg.head_hidden, heads, false), index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub k: usize,
    pub error: f64,
    pub n_starts: usize,
}

pub struct RegressOutcome<T> {
    pub model: DynamicsModel,
    pub params: Params<T>,
    pub epochs: Vec<EpochRow>,
    pub val_mse: f64,
    pub rollout: Vec<RolloutRow>,
    pub n_train: usize,
    pub n_val: usize,
    pub param_count: usize,
}

/// Train/validation split by whole episodes.
pub struct Split {
    pub train: Vec<Transition>,
    /// Validation episodes, each time-ordered.
    pub val: Vec<Vec<Transition>>,
}

pub fn split_by_episode(data: Vec<Transition>, val_fraction: f64, seed: u64) -> Result<Split, LearnError> {
    let ids = episode_ids(&data);
    let n_ep = ids.last().map_or(0, |&i| i + 1);
    if n_ep < 2 {
        return Err(LearnError::EmptyDataset(format!("need at least 2 episodes, got {n_ep}")));
    }
    let mut order: Vec<usize> = (0..n_ep).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n_ep as f64 * val_fraction).round() as usize).clamp(1, n_ep - 1);
    let mut is_val = vec![false; n_ep];
    for &e in &order[..n_val] {
        is_val[e] = true;
    }
    let mut train = Vec::new();
    let mut val: Vec<Vec<Transition>> = vec![Vec::new(); n_ep];
    for (t, id) in data.into_iter().zip(ids) {
        if is_val[id] {
            val[id].push(t);
        } else {
            train.push(t);
        }
    }
    Ok(Split {
        train,
        val: val.into_iter().filter(|e| !e.is_empty()).collect(),
    })
}

fn mean_std(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m).powi(2) / n;
        }
    }
    let std = var.into_iter().map(|v| if v.sqrt() < 1e-8 { 1.0 } else { v.sqrt() }).collect();
    (mean, std)
}

impl DynamicsModel {
    fn input(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = obs.to_vec();
        x.extend(action.iter().zip(&self.torque_limit).map(|(a, l)| a / l));
        x.iter_mut()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .for_each(|(v, (m, s))| *v = (*v - m) / s);
        x
    }

    /// Standardised residual target in observation order.
    fn target(&self, t: &Transition) -> Vec<f64> {
        (0..t.obs.len())
            .map(|k| (t.next_obs[k] - t.obs[k] - self.out_mean[k]) / self.out_std[k])
            .collect()
    }

    /// Predicted standardised residuals, in observation order.
    pub fn predict<T: Real>(
        &self,
        tree: &KinematicTree,
        params: &Params<T>,
        inputs: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, LearnError> {
        let rows: Vec<Vec<T>> = inputs.iter().map(|r| r.iter().map(|&x| T::lit(x)).collect()).collect();
        let out = crate::nets::predict(&self.spec, tree, params, &rows)?;
        Ok(out
            .into_iter()
            .map(|r| {
                let mut y = vec![0.0; r.len()];
                for (c, v) in r.into_iter().enumerate() {
                    y[self.output_index[c]] = v.as_f64();
                }
                y
            })
            .collect())
    }

    /// Mean squared standardised error of `k`-step open-loop predictions,
    /// feeding predictions back and replaying the recorded actions.
    pub fn rollout_error<T: Real>(
        &self,
        tree: &KinematicTree,
        params: &Params<T>,
        episodes: &[Vec<Transition>],
        k: usize,
    ) -> Result<RolloutRow, LearnError> {
        let mut starts = Vec::new();
        for (e, ep) in episodes.iter().enumerate() {
            for t in 0..ep.len().saturating_sub(k - 1) {
                starts.push((e, t));
            }
        }
        if starts.is_empty() {
            return Ok(RolloutRow {
                k,
                error: f64::NAN,
                n_starts: 0,
            });
        }
        let mut state: Vec<Vec<f64>> = starts.iter().map(|&(e, t)| episodes[e][t].obs.clone()).collect();
        for j in 0..k {
            let inputs: Vec<Vec<f64>> = starts
                .iter()
                .zip(&state)
                .map(|(&(e, t), s)| self.input(s, &episodes[e][t + j].action))
                .collect();
            let pred = self.predict(tree, params, &inputs)?;
            for (s, p) in state.iter_mut().zip(pred) {
                for (i, v) in s.iter_mut().enumerate() {
                    *v += p[i] * self.out_std[i] + self.out_mean[i];
                }
            }
        }
        let dim = self.out_std.len();
        let mut total = 0.0;
        for (&(e, t), s) in starts.iter().zip(&state) {
            let truth = &episodes[e][t + k - 1].next_obs;
            for i in 0..dim {
                total += ((s[i] - truth[i]) / self.out_std[i]).powi(2);
            }
        }
        Ok(RolloutRow {
            k,
            error: total / (starts.len() * dim) as f64,
            n_starts: starts.len(),
        })
    }
}

/// Collect a random-policy dataset on `env` (history forced to 1).
pub fn collect_dataset(env: &EnvSpec, steps: usize, seed: u64) -> Result<(EnvSpec, Vec<Transition>), LearnError> {
    let mut flat = env.clone();
    flat.config.history = 1;
    let data = rollout_dataset(&flat, &mut RandomPolicy::new(&flat), steps, seed)?;
    Ok((flat, data))
}

/// Fit a dynamics model of `kind` on a random-policy dataset from `env`.
pub fn regress_dynamics<T: Real>(
    kind: ActorKind,
    env: &EnvSpec,
    cfg: &RegressConfig,
) -> Result<RegressOutcome<T>, LearnError> {
    cfg.validate()?;
    let (env, data) = collect_dataset(env, cfg.dataset_steps, cfg.seed)?;
    fit(kind, &env, data, cfg)
}

/// Fit on an existing dataset.
pub fn fit<T: Real>(
    kind: ActorKind,
    env: &EnvSpec,
    data: Vec<Transition>,
    cfg: &RegressConfig,
) -> Result<RegressOutcome<T>, LearnError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(LearnError::EmptyDataset("no transitions".into()));
    }
    let split = split_by_episode(data, cfg.val_fraction, cfg.seed)?;
    if split.train.is_empty() {
        return Err(LearnError::EmptyDataset("no training transitions".into()));
    }
    let (spec, output_index) = dynamics_spec(kind, env, cfg);
    spec.validate(&env.tree)?;

    let raw_inputs: Vec<Vec<f64>> = split
        .train
        .iter()
        .map(|t| {
            let mut x = t.obs.clone();
            x.extend(t.action.iter().zip(&env.torque_limit).map(|(a, l)| a / l));
            x
        })
        .collect();
    let residuals: Vec<Vec<f64>> =
        split.train.iter().map(|t| t.next_obs.iter().zip(&t.obs).map(|(n, o)| n - o).collect()).collect();
    let (in_mean, in_std) = mean_std(&raw_inputs);
    let (out_mean, out_std) = mean_std(&residuals);
    let model = DynamicsModel {
        spec: spec.clone(),
        output_index,
        in_mean,
        in_std,
        out_mean,
        out_std,
        torque_limit: env.torque_limit.clone(),
    };
    let inputs: Vec<Vec<f64>> = split.train.iter().map(|t| model.input(&t.obs, &t.action)).collect();
    // targets permuted into output-column order
    let targets: Vec<Vec<f64>> = split
        .train
        .iter()
        .map(|t| {
            let y = model.target(t);
            model.output_index.iter().map(|&i| y[i]).collect()
        })
        .collect();

    let mut params = spec.init::<T>(&env.tree, cfg.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        params.tensors(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let with_orth = kind == ActorKind::AbdNet && cfg.orth_weight > 0.0;
    let in_dim = inputs[0].len();
    let out_dim = targets[0].len();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for idx in order.chunks(cfg.minibatch_size) {
            let x: Vec<T> = idx.iter().flat_map(|&i| inputs[i].iter().map(|&v| T::lit(v))).collect();
            let y: Vec<T> = idx.iter().flat_map(|&i| targets[i].iter().map(|&v| T::lit(v))).collect();
            let tape = Tape::new();
            let bound = params.bind(&tape, true);
            let xv = tape.constant(Tensor::new(&[idx.len(), in_dim], x)?);
            let out = actor_forward(&spec, &env.tree, &bound, xv, with_orth)?;
            let mse = out.mean.sub(tape.constant(Tensor::new(&[idx.len(), out_dim], y)?))?.square().mean();
            let loss = match out.orth {
                Some(o) => mse.add(o.scalar_mul(cfg.orth_weight))?,
                None => mse,
            };
            let v = mse.item().as_f64();
            if !v.is_finite() {
                return Err(LearnError::NaNLoss { iteration: epoch });
            }
            let g = tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = bound.vars().iter().map(|v| g.get(*v)).collect();
            adam.step(params.tensors_mut(), &grads)?;
            loss_sum += v * idx.len() as f64;
            count += idx.len();
        }
        let val = model.rollout_error(&env.tree, &params, &split.val, 1)?;
        epochs.push(EpochRow {
            epoch,
            train_loss: loss_sum / count as f64,
            val_mse: val.error,
        });
    }
    let val_mse = epochs.last().map_or(f64::NAN, |e| e.val_mse);
    let rollout = cfg
        .rollout_horizons
        .iter()
        .map(|&k| model.rollout_error(&env.tree, &params, &split.val, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RegressOutcome {
        param_count: spec.param_count(&env.tree),
        model,
        params,
        epochs,
        val_mse,
        rollout,
        n_train: split.train.len(),
        n_val: split.val.iter().map(Vec::len).sum(),
    })
}
