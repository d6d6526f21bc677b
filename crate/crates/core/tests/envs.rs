use std::sync::Arc;

use abd_core::dynamics::JointState;
use abd_core::envs::{
    episode_ids, reset, rollout_dataset, step, EnvConfig, EnvError, EnvSpec, EnvState, ObsKind, RandomPolicy, VecEnv,
    PRESETS,
};
use proptest::prelude::*;

fn spec(name: &str) -> EnvSpec {
    EnvSpec::preset(name).unwrap()
}

#[test]
fn every_preset_loads_with_consistent_layout() {
    for name in PRESETS {
        let s = spec(name);
        let last = s.blocks().last().unwrap();
        assert_eq!(last.offset + last.len, s.base_obs_dim(), "{name}");
        assert_eq!(s.obs_owners().len(), s.base_obs_dim());
        assert_eq!(s.action_dim(), s.tree.action_dim());
        for seed in 0..5 {
            let st = reset(&s, seed);
            assert_eq!(st.obs().len(), s.obs_dim());
            let (next, tr) = step(&s, &st, &vec![0.0; s.action_dim()]).unwrap();
            assert_eq!(tr.obs.len(), s.obs_dim());
            assert_eq!(next.obs().len(), s.obs_dim());
        }
    }
}

#[test]
fn unknown_preset_lists_valid_names() {
    let err = EnvSpec::preset("cartpole").unwrap_err();
    assert!(matches!(err, EnvError::UnknownPreset(_)));
    assert!(err.to_string().contains("hopper_hop"));
}

#[test]
fn reset_is_deterministic_in_seed() {
    for name in PRESETS {
        let s = spec(name);
        assert_eq!(reset(&s, 42).obs(), reset(&s, 42).obs());
        if name != "identity_synthetic" {
            assert_ne!(reset(&s, 42).obs(), reset(&s, 43).obs());
        }
    }
}

#[test]
fn balance_resets_stay_near_upright() {
    let s = spec("double_pendulum_balance");
    let mut worst: f64 = 0.0;
    for seed in 0..1000 {
        worst = worst.max(reset(&s, seed).joints.q.iter().fold(0.0, |m, q| m.max(q.abs())));
    }
    assert!(worst <= 0.1, "{worst}");
    assert!(worst > 0.09);
}

#[test]
fn upright_equilibrium_earns_the_full_bonus() {
    let s = spec("double_pendulum_balance");
    let st = EnvState::from_joints(&s, JointState::zeros(&s.tree));
    let (next, tr) = step(&s, &st, &[0.0, 0.0]).unwrap();
    assert_eq!(tr.reward, s.config.reward.upright_weight);
    assert_eq!(next.joints.q, vec![0.0, 0.0]);
    assert!(!tr.done && !tr.truncated);
}

#[test]
fn oversized_actions_are_clamped() {
    let s = spec("double_pendulum_balance");
    let st = reset(&s, 3);
    let (n1, t1) = step(&s, &st, &[500.0, -500.0]).unwrap();
    let (n2, t2) = step(&s, &st, &[20.0, -20.0]).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(n1, n2);
    assert_eq!(t1.action, vec![20.0, -20.0]);
}

#[test]
fn wrong_action_length_is_a_dimension_error() {
    let s = spec("double_pendulum_balance");
    let st = reset(&s, 0);
    assert!(matches!(step(&s, &st, &[0.0]), Err(EnvError::Dimension(_))));
}

#[test]
fn airborne_hopper_feels_no_contact() {
    let s = spec("hopper_hop");
    let mut js = reset(&s, 0).joints;
    let slide_z = s.tree.dof_offset(s.tree.link_index("mast").unwrap());
    js.q[slide_z] = 0.3;
    js.qd.iter_mut().for_each(|v| *v = 0.7);
    assert!(s.contact_torques(&js).iter().all(|&t| t == 0.0));

    // pressed into the ground the normal force pushes the base up
    js.q[slide_z] = -0.05;
    js.qd.iter_mut().for_each(|v| *v = 0.0);
    let tau = s.contact_torques(&js);
    assert!(tau[slide_z] > 0.0);
}

#[test]
fn hopper_settles_on_its_foot() {
    let s = spec("hopper_hop");
    let mut st = reset(&s, 1);
    for _ in 0..50 {
        let (next, tr) = step(&s, &st, &[0.0; 3]).unwrap();
        assert!(tr.reward.is_finite());
        st = next;
    }
    let h = s.height(&st.joints.q).unwrap();
    assert!(h > 0.5 && h < 1.3, "torso height {h}");
}

#[test]
fn horizon_truncates_without_terminating() {
    let s = spec("double_pendulum_swingup");
    let mut st = reset(&s, 0);
    for t in 1..=s.config.horizon {
        let (next, tr) = step(&s, &st, &[0.0, 0.0]).unwrap();
        assert!(!tr.done);
        assert_eq!(tr.truncated, t == s.config.horizon);
        st = next;
    }
}

#[test]
fn falling_terminates_balance_episode() {
    let s = spec("double_pendulum_balance");
    let mut st = EnvState::from_joints(&s, JointState::new(vec![0.6, 0.0], vec![0.0, 0.0]));
    let mut done = false;
    for _ in 0..s.config.horizon {
        let (next, tr) = step(&s, &st, &[0.0, 0.0]).unwrap();
        st = next;
        if tr.done {
            assert!(!tr.truncated);
            assert!(s.height(&st.joints.q).unwrap() < 1.5);
            done = true;
            break;
        }
    }
    assert!(done);
}

#[test]
fn history_stacks_recent_frames_with_zero_padding() {
    let mut cfg = EnvConfig::preset("double_pendulum_balance").unwrap();
    cfg.history = 3;
    let s = EnvSpec::from_config(cfg, None).unwrap();
    let n = s.base_obs_dim();
    assert_eq!(s.obs_dim(), 3 * n);
    let st0 = reset(&s, 5);
    let o0 = st0.obs();
    assert!(o0[..2 * n].iter().all(|&x| x == 0.0));
    let (st1, _) = step(&s, &st0, &[1.0, -1.0]).unwrap();
    let (st2, _) = step(&s, &st1, &[2.0, 0.5]).unwrap();
    let o2 = st2.obs();
    assert_eq!(&o2[..n], &o0[2 * n..]);
    assert_eq!(&o2[n..2 * n], &st1.obs()[2 * n..]);
    let pa = s.blocks().iter().find(|b| b.kind == ObsKind::PrevAction).unwrap();
    assert_eq!(o2[2 * n + pa.offset], 2.0 / 20.0);
}

#[test]
fn identity_preset_never_moves() {
    let s = spec("identity_synthetic");
    let data = rollout_dataset(&s, &mut RandomPolicy::new(&s), 100, 9).unwrap();
    for t in &data {
        assert_eq!(t.obs, t.next_obs);
        assert!(t.truncated);
    }
    assert_eq!(episode_ids(&data).last(), Some(&99));
}

#[test]
fn rollouts_are_reproducible_and_finite() {
    let s = spec("double_pendulum_swingup");
    let a = rollout_dataset(&s, &mut RandomPolicy::new(&s), 10_000, 11).unwrap();
    let b = rollout_dataset(&s, &mut RandomPolicy::new(&s), 10_000, 11).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|t| t.obs.iter().chain(&t.next_obs).all(|x| x.is_finite())));
    assert_eq!(rollout_dataset(&s, &mut RandomPolicy::new(&s), 1, 0).unwrap().len(), 1);
    assert!(rollout_dataset(&s, &mut RandomPolicy::new(&s), 0, 0).is_err());
}

#[test]
fn vector_runner_matches_serial_instances() {
    let s = Arc::new(spec("hopper_hop"));
    let mut par = VecEnv::new(s.clone(), 6, 3);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut ser = VecEnv::new(s.clone(), 6, 3);
    for k in 0..60 {
        let actions: Vec<Vec<f64>> = (0..6).map(|i| vec![((i + k) as f64).sin() * 20.0, 5.0, -3.0]).collect();
        let a = par.step(&actions).unwrap();
        let b = pool.install(|| ser.step(&actions)).unwrap();
        assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rewards_respect_the_declared_bound(preset in 0usize..4, seed in 0u64..1000, a in prop::collection::vec(-100.0f64..100.0, 4)) {
        let s = spec(PRESETS[preset]);
        let mut st = reset(&s, seed);
        let bound = s.reward_bound();
        for _ in 0..20 {
            let (next, tr) = step(&s, &st, &a[..s.action_dim()]).unwrap();
            prop_assert!(tr.reward.abs() <= bound + 1e-12, "{} > {}", tr.reward, bound);
            if tr.done { break; }
            st = next;
        }
    }

    #[test]
    fn layout_is_stable_across_steps(seed in 0u64..1000) {
        let s = spec("hopper_hop");
        let data = rollout_dataset(&s, &mut RandomPolicy::new(&s), 30, seed).unwrap();
        for t in data {
            prop_assert_eq!(t.obs.len(), s.obs_dim());
            prop_assert_eq!(t.next_obs.len(), s.obs_dim());
        }
    }
}
