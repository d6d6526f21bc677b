use abd_core::autodiff::{Tape, Tensor};
use abd_core::envs::EnvSpec;
use abd_core::learn::policy::{gaussian_log_prob, log_prob_f64, ppo_loss, PpoMinibatch};
use abd_core::learn::ppo::actor_spec;
use abd_core::learn::regress::{collect_dataset, fit, split_by_episode};
use abd_core::learn::{
    bootstrap_ci, eval_retention, gae, ppo_train, regress_dynamics, LearnError, RegressConfig, TrainConfig,
    TrainOptions,
};
use abd_core::nets::checkpoint::CheckpointManifest;
use abd_core::nets::{ActorKind, CriticSpec, NetError, Params};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        total_env_steps: 1024,
        n_envs: 4,
        rollout_len: 64,
        minibatch_size: 64,
        epochs: 2,
        eval_interval: 2,
        eval_episodes: 2,
        d: 4,
        head_hidden: 8,
        seed,
        ..TrainConfig::default()
    }
}

// ------------------------------------------------------------------- GAE

/// Discounted sum of rewards until the stream ends, a termination or a
/// truncation, bootstrapping from `next_values` only where not terminated.
fn monte_carlo(r: &[f64], v: &[f64], nv: &[f64], done: &[bool], trunc: &[bool], gamma: f64) -> Vec<f64> {
    (0..r.len())
        .map(|t| {
            let mut g = 0.0;
            let mut disc = 1.0;
            let mut k = t;
            loop {
                g += disc * r[k];
                disc *= gamma;
                if done[k] {
                    break;
                }
                if trunc[k] || k + 1 == r.len() {
                    g += disc * nv[k];
                    break;
                }
                k += 1;
            }
            g - v[t]
        })
        .collect()
}

fn stream(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let done: Vec<bool> = (0..n).map(|_| rng.random_bool(0.15)).collect();
    let trunc: Vec<bool> = done.iter().map(|&d| !d && rng.random_bool(0.1)).collect();
    // successor values agree with the next step's value inside an episode
    let nv = (0..n)
        .map(|t| {
            let fresh: f64 = rng.random_range(-2.0..2.0);
            if done[t] || trunc[t] || t + 1 == n { fresh } else { v[t + 1] }
        })
        .collect();
    (r, v, nv, done, trunc)
}

#[test]
fn gae_with_zero_gamma_is_one_step_td() {
    let (r, v, nv, done, trunc) = stream(3, 50);
    let (adv, ret) = gae(&r, &v, &nv, &done, &trunc, 0.0, 0.95);
    for t in 0..r.len() {
        assert_eq!(adv[t], r[t] - v[t]);
        assert_eq!(ret[t], adv[t] + v[t]);
    }
}

#[test]
fn gae_with_zero_lambda_is_td_error() {
    let (r, v, nv, done, trunc) = stream(4, 50);
    let (adv, _) = gae(&r, &v, &nv, &done, &trunc, 0.9, 0.0);
    for t in 0..r.len() {
        let alive = if done[t] { 0.0 } else { 1.0 };
        assert!((adv[t] - (r[t] + 0.9 * alive * nv[t] - v[t])).abs() < 1e-12);
    }
}

#[test]
fn gae_hand_computed_three_steps() {
    // r = [1, 2, 3], V = [0.5, 0.25, 0], V' = [0.25, 0, 1], γ = 0.5, λ = 0.5
    let (adv, _) = gae(
        &[1.0, 2.0, 3.0],
        &[0.5, 0.25, 0.0],
        &[0.25, 0.0, 1.0],
        &[false; 3],
        &[false; 3],
        0.5,
        0.5,
    );
    // δ = [0.625, 1.75, 3.5]
    assert_eq!(adv[2], 3.5);
    assert_eq!(adv[1], 1.75 + 0.25 * 3.5);
    assert_eq!(adv[0], 0.625 + 0.25 * (1.75 + 0.25 * 3.5));
}

proptest! {
    #[test]
    fn gae_lambda_one_matches_monte_carlo(seed in 0u64..500, n in 1usize..40, gamma in 0.0f64..0.999) {
        let (r, v, nv, done, trunc) = stream(seed, n);
        let (adv, _) = gae(&r, &v, &nv, &done, &trunc, gamma, 1.0);
        let mc = monte_carlo(&r, &v, &nv, &done, &trunc, gamma);
        for (a, m) in adv.iter().zip(&mc) {
            prop_assert!((a - m).abs() < 1e-9, "{a} vs {m}");
        }
    }
}

// ------------------------------------------------------------------- PPO loss

fn minibatch(env: &EnvSpec, actor: &abd_core::nets::NetSpec, params: &Params<f64>, b: usize) -> PpoMinibatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let obs: Vec<f64> = (0..b * env.obs_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a_dim = env.action_dim();
    let actions: Vec<f64> = (0..b * a_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let rows: Vec<Vec<f64>> = obs.chunks(env.obs_dim()).map(|c| c.to_vec()).collect();
    let means = abd_core::nets::predict(actor, &env.tree, params, &rows).unwrap();
    let log_std: Vec<f64> = params.get("log_std").unwrap().data().to_vec();
    let old: Vec<f64> = (0..b).map(|i| log_prob_f64(&means[i], &log_std, &actions[i * a_dim..(i + 1) * a_dim])).collect();
    PpoMinibatch {
        obs: Tensor::from_f64(&[b, env.obs_dim()], &obs).unwrap(),
        actions: Tensor::from_f64(&[b, a_dim], &actions).unwrap(),
        old_log_probs: Tensor::from_f64(&[b], &old).unwrap(),
        advantages: Tensor::from_f64(&[b], &(0..b).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()).unwrap(),
        returns: Tensor::from_f64(&[b], &(0..b).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()).unwrap(),
    }
}

fn policy_setup(kind: ActorKind, cfg: &TrainConfig) -> (EnvSpec, abd_core::nets::NetSpec, CriticSpec, Params<f64>) {
    let env = EnvSpec::preset("double_pendulum_balance").unwrap();
    let actor = actor_spec(kind, &env, cfg);
    let critic = CriticSpec::new(env.obs_dim());
    let mut params = actor.init::<f64>(&env.tree, 5);
    for (n, t) in critic.init::<f64>(6).iter() {
        params.push(n.to_string(), t.clone());
    }
    (env, actor, critic, params)
}

#[test]
fn ppo_gradient_at_unit_ratio_equals_policy_gradient() {
    let cfg = TrainConfig {
        orth_weight: 0.0,
        ..tiny_cfg(0)
    };
    let (env, actor, critic, params) = policy_setup(ActorKind::AbdNet, &cfg);
    let mb = minibatch(&env, &actor, &params, 12);

    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let loss = ppo_loss(&actor, &env.tree, &critic, &bound, &mb, &cfg).unwrap();
    let g_ppo = tape.backward(loss.policy).unwrap();

    // −mean(A · log π(a|s))
    let tape2 = Tape::new();
    let bound2 = params.bind(&tape2, true);
    let out = abd_core::nets::actor_forward(&actor, &env.tree, &bound2, tape2.constant(mb.obs.clone()), false).unwrap();
    let logp = gaussian_log_prob(out.mean, out.log_std.unwrap(), tape2.constant(mb.actions.clone())).unwrap();
    let pg = logp.mul(tape2.constant(mb.advantages.clone())).unwrap().mean().neg();
    let g_pg = tape2.backward(pg).unwrap();

    let mut nonzero = 0;
    for (a, b) in bound.vars().iter().zip(bound2.vars()) {
        let (x, y) = (g_ppo.get(*a), g_pg.get(*b));
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).abs() <= 1e-10 * (1.0 + q.abs()), "{p} vs {q}");
            nonzero += (q.abs() > 0.0) as usize;
        }
    }
    assert!(nonzero > 0);
}

#[test]
fn orth_term_is_skipped_when_weight_is_zero() {
    for (w, kind, expect) in [
        (0.0, ActorKind::AbdNet, false),
        (1e-2, ActorKind::AbdNet, true),
        (1e-2, ActorKind::AbdNetNoOrth, false),
        (1e-2, ActorKind::Mlp, false),
    ] {
        let cfg = TrainConfig {
            orth_weight: w,
            ..tiny_cfg(0)
        };
        let (env, actor, critic, params) = policy_setup(kind, &cfg);
        let mb = minibatch(&env, &actor, &params, 4);
        let tape = Tape::new();
        let bound = params.bind(&tape, true);
        let loss = ppo_loss(&actor, &env.tree, &critic, &bound, &mb, &cfg).unwrap();
        assert_eq!(loss.orth.is_some(), expect, "{kind} w={w}");
        assert_eq!(tape.flops_in("orth") > 0, expect, "{kind} w={w}");
    }
}

// ------------------------------------------------------------------- training

#[test]
fn same_seed_gives_identical_metrics_csv() {
    let env = EnvSpec::preset("double_pendulum_balance").unwrap();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let opts = TrainOptions {
            out_dir: Some(d.path()),
            ..TrainOptions::default()
        };
        ppo_train::<f32>(ActorKind::AbdNet, &env, &tiny_cfg(11), &opts).unwrap();
    }
    for f in ["metrics.csv", "eval.csv", "final.bin", "ckpt_00002.bin"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f}");
    }
    let head = std::fs::read_to_string(dirs[0].path().join("metrics.csv")).unwrap();
    assert!(head.starts_with("iter,env_steps,mean_return,policy_loss,value_loss,entropy,orth_loss,wall_ms"));
}

#[test]
fn different_seeds_diverge() {
    let env = EnvSpec::preset("double_pendulum_balance").unwrap();
    let a = ppo_train::<f32>(ActorKind::Mlp, &env, &tiny_cfg(1), &TrainOptions::default()).unwrap();
    let b = ppo_train::<f32>(ActorKind::Mlp, &env, &tiny_cfg(2), &TrainOptions::default()).unwrap();
    assert_ne!(a.metrics, b.metrics);
    assert_eq!(a.env_steps, 1024);
    assert!(a.metrics.iter().all(|r| r.orth_loss == 0.0));
}

#[test]
fn training_reports_orth_loss_only_for_orth_variant() {
    let env = EnvSpec::preset("double_pendulum_balance").unwrap();
    let out = ppo_train::<f32>(ActorKind::AbdNet, &env, &tiny_cfg(1), &TrainOptions::default()).unwrap();
    assert!(out.metrics.iter().all(|r| r.orth_loss > 0.0));
    let out = ppo_train::<f32>(ActorKind::AbdNetNoOrth, &env, &tiny_cfg(1), &TrainOptions::default()).unwrap();
    assert!(out.metrics.iter().all(|r| r.orth_loss == 0.0));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        TrainConfig { gamma: 1.0, ..TrainConfig::default() },
        TrainConfig { clip_eps: 0.0, ..TrainConfig::default() },
        TrainConfig { lr: -1.0, ..TrainConfig::default() },
        TrainConfig { orth_weight: -0.1, ..TrainConfig::default() },
        TrainConfig { n_envs: 0, ..TrainConfig::default() },
        TrainConfig { d: 0, ..TrainConfig::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(LearnError::Config(_))), "{c:?}");
    }
    TrainConfig::default().validate().unwrap();
    assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    let partial: TrainConfig = serde_json::from_str(r#"{"lr": 0.001, "precision": "f64"}"#).unwrap();
    assert_eq!(partial.lr, 0.001);
    assert_eq!(partial.gamma, 0.99);
    assert!(matches!(
        RegressConfig { val_fraction: 1.0, ..RegressConfig::default() }.validate(),
        Err(LearnError::Config(_))
    ));
}

// ------------------------------------------------------------------- retention

fn stat(v: &[f64]) -> impl Fn(&[usize]) -> f64 + '_ {
    move |idx| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64
}

#[test]
fn bootstrap_ci_properties() {
    let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
    let mean = x.iter().sum::<f64>() / 30.0;
    let (lo, hi) = bootstrap_ci(30, 7, stat(&x));
    assert!(lo < mean && mean < hi);
    assert_eq!((lo, hi), bootstrap_ci(30, 7, stat(&x)));
    let scaled: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
    let (slo, shi) = bootstrap_ci(30, 7, stat(&scaled));
    assert!((slo - 3.0 * lo).abs() < 1e-9 && (shi - 3.0 * hi).abs() < 1e-9);
    assert_eq!(bootstrap_ci(1, 7, stat(&[4.5])), (4.5, 4.5));
}

fn random_checkpoint(env: &EnvSpec) -> (CheckpointManifest, Params<f64>) {
    let cfg = tiny_cfg(0);
    let actor = actor_spec(ActorKind::AbdNet, env, &cfg);
    let critic = CriticSpec::new(env.obs_dim());
    let mut params = actor.init::<f64>(&env.tree, 2);
    for (n, t) in critic.init::<f64>(3).iter() {
        params.push(n.to_string(), t.clone());
    }
    let m = CheckpointManifest::new::<f64>(&actor, &env.tree, Some(critic), Some(env.name().to_string()));
    (m, params)
}

#[test]
fn unit_factor_retains_exactly_one_hundred_percent() {
    let env = EnvSpec::preset("double_pendulum_balance").unwrap();
    let (m, params) = random_checkpoint(&env);
    let rep = eval_retention(&m, &params, &env, &[1.0, 2.0], 6, 4).unwrap();
    assert_eq!(rep.rows[0].retention_pct, 100.0);
    assert_eq!(rep.rows[0].mean_return, rep.nominal.mean);
    assert_eq!(rep.rows[0].retention_ci_low, 100.0);
    assert_eq!(rep.rows[0].retention_ci_high, 100.0);
    assert!(rep.nominal.ci_low <= rep.nominal.mean && rep.nominal.mean <= rep.nominal.ci_high);
    assert_ne!(rep.rows[1].mean_return, rep.nominal.mean);
    assert_eq!(rep.link, "upper");
    assert_eq!(rep, eval_retention(&m, &params, &env, &[1.0, 2.0], 6, 4).unwrap());
}

#[test]
fn retention_rejects_mismatched_tree_and_bad_factors() {
    let env = EnvSpec::preset("double_pendulum_balance").unwrap();
    let (m, params) = random_checkpoint(&env);
    let other = EnvSpec::preset("chain4_regress").unwrap();
    assert!(matches!(
        eval_retention(&m, &params, &other, &[1.0], 2, 0),
        Err(LearnError::Net(NetError::TreeMismatch { .. }))
    ));
    assert!(matches!(eval_retention(&m, &params, &env, &[0.0], 2, 0), Err(LearnError::Config(_))));
    assert!(matches!(eval_retention(&m, &params, &env, &[1.0], 0, 0), Err(LearnError::Config(_))));
}

// ------------------------------------------------------------------- regression

fn small_regress() -> RegressConfig {
    RegressConfig {
        dataset_steps: 2000,
        epochs: 3,
        d: 8,
        head_hidden: 8,
        ..RegressConfig::default()
    }
}

#[test]
fn one_step_rollout_error_equals_single_step_mse() {
    let env = EnvSpec::preset("chain4_regress").unwrap();
    let cfg = small_regress();
    let (flat, data) = collect_dataset(&env, cfg.dataset_steps, cfg.seed).unwrap();
    let out = fit::<f64>(ActorKind::AbdNet, &flat, data.clone(), &cfg).unwrap();
    let split = split_by_episode(data, cfg.val_fraction, cfg.seed).unwrap();
    let m = &out.model;
    let mut total = 0.0;
    let mut n = 0;
    for t in split.val.iter().flatten() {
        let mut x = t.obs.clone();
        x.extend(t.action.iter().zip(&m.torque_limit).map(|(a, l)| a / l));
        for ((v, mu), s) in x.iter_mut().zip(&m.in_mean).zip(&m.in_std) {
            *v = (*v - mu) / s;
        }
        let p = &m.predict(&flat.tree, &out.params, &[x]).unwrap()[0];
        for i in 0..t.obs.len() {
            let target = (t.next_obs[i] - t.obs[i] - m.out_mean[i]) / m.out_std[i];
            total += (p[i] - target).powi(2);
            n += 1;
        }
    }
    let single = total / n as f64;
    let k1 = out.rollout.iter().find(|r| r.k == 1).unwrap();
    assert!((k1.error - single).abs() < 1e-9 * single.max(1.0), "{} vs {single}", k1.error);
    assert_eq!(out.val_mse, k1.error);
    assert!(out.rollout.iter().all(|r| r.error.is_finite() && r.n_starts > 0));
    assert_eq!(out.n_val, split.val.iter().map(Vec::len).sum::<usize>());
}

#[test]
fn identity_dynamics_is_learned_to_near_zero_error() {
    let env = EnvSpec::preset("identity_synthetic").unwrap();
    for kind in [ActorKind::AbdNet, ActorKind::Mlp] {
        let out = regress_dynamics::<f64>(kind, &env, &small_regress()).unwrap();
        assert!(out.val_mse < 1e-4, "{kind}: {}", out.val_mse);
    }
}

#[test]
fn regression_is_deterministic_and_learns() {
    let env = EnvSpec::preset("chain4_regress").unwrap();
    let cfg = RegressConfig {
        epochs: 10,
        ..small_regress()
    };
    let a = regress_dynamics::<f32>(ActorKind::Gnn, &env, &cfg).unwrap();
    let b = regress_dynamics::<f32>(ActorKind::Gnn, &env, &cfg).unwrap();
    assert_eq!(a.epochs, b.epochs);
    assert!(a.epochs.last().unwrap().train_loss < a.epochs[0].train_loss);
    assert!(a.val_mse < 1.0, "{}", a.val_mse);
}

#[test]
fn too_few_episodes_is_an_empty_dataset_error() {
    let env = EnvSpec::preset("chain4_regress").unwrap();
    let (_, data) = collect_dataset(&env, 50, 0).unwrap();
    assert!(matches!(split_by_episode(data, 0.1, 0), Err(LearnError::EmptyDataset(_))));
}
