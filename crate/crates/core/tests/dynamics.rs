use abd_core::dynamics::{
    crba_mass_matrix, enforce_limits, aba_forward_dynamics, aba_with_trace, crba_oracle_dynamics, step_semi_implicit, total_energy, JointState,
};
use abd_core::morphology::random::{random_tree, random_tree_doc};
use abd_core::morphology::shapes::chain_doc;
use abd_core::morphology::{parse_native, KinematicTree, MorphologyDoc};
use abd_core::spatial::Vec3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -9.81)
}

fn random_state(rng: &mut impl Rng, n: usize) -> (JointState, Vec<f64>) {
    let q = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let qd = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let tau = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    (JointState::new(q, qd), tau)
}

fn double_pendulum() -> KinematicTree {
    let text = include_str!("../assets/morphologies/double_pendulum.json");
    parse_native(&MorphologyDoc::from_json(text).unwrap()).unwrap()
}

#[test]
fn aba_agrees_with_oracle_on_200_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..=8);
        let tree = random_tree(&mut rng, k, 0.1);
        let (state, tau) = random_state(&mut rng, tree.dof());
        let a = aba_forward_dynamics(&tree, &state, &tau, gravity()).unwrap();
        let b = crba_oracle_dynamics(&tree, &state, &tau, gravity()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-8, "worst deviation {worst}");
}

#[test]
fn uniform_rod_matches_closed_form() {
    let tree = parse_native(&chain_doc(2)).unwrap();
    let (g, l) = (9.81, 0.5);
    for i in 0..100 {
        let q = -3.1 + 6.2 * i as f64 / 99.0;
        let a = aba_forward_dynamics(&tree, &JointState::new(vec![q], vec![0.0]), &[0.0], gravity()).unwrap();
        let expect = -3.0 * g / (2.0 * l) * q.sin();
        assert!((a[0] - expect).abs() <= 1e-10, "q {q}: {} vs {expect}", a[0]);
    }
}

#[test]
fn double_pendulum_energy_drift_below_one_percent() {
    let tree = double_pendulum();
    // energy is measured above the hanging rest configuration
    let rest = JointState::new(vec![std::f64::consts::PI, 0.0], vec![0.0, 0.0]);
    let e_rest = total_energy(&tree, &rest, gravity());
    let mut state = JointState::new(vec![2.0, -1.0], vec![0.0, 0.0]);
    let e0 = total_energy(&tree, &state, gravity()) - e_rest;
    assert!(e0 > 0.0);
    let dt = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        state = step_semi_implicit(&tree, &state, &[0.0, 0.0], gravity(), dt).unwrap();
        let e = total_energy(&tree, &state, gravity()) - e_rest;
        worst = worst.max((e - e0).abs());
    }
    assert!(worst < 0.01 * e0, "drift {worst} vs energy {e0}");
}

/// Reorder the non-root links of `doc` and return the new tree.
fn relabeled(doc: &MorphologyDoc, rng: &mut impl Rng) -> KinematicTree {
    let mut doc = doc.clone();
    let mut tail = doc.links.split_off(1);
    for i in (1..tail.len()).rev() {
        tail.swap(i, rng.random_range(0..=i));
    }
    doc.links.extend(tail);
    doc.joints.reverse();
    parse_native(&doc).unwrap()
}

/// Per-joint-name view of a dof-ordered vector.
fn by_joint(tree: &KinematicTree, v: &[f64]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = tree
        .moving_links()
        .into_iter()
        .map(|i| (tree.joint(i).unwrap().name.clone(), v[tree.dof_offset(i)]))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn from_joint(tree: &KinematicTree, named: &[(String, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; tree.dof()];
    for (name, x) in named {
        let i = tree.moving_links().into_iter().find(|&i| &tree.joint(i).unwrap().name == name).unwrap();
        v[tree.dof_offset(i)] = *x;
    }
    v
}

#[test]
fn dynamics_invariant_under_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let doc = random_tree_doc(&mut rng, 7, 0.15);
        let a = parse_native(&doc).unwrap();
        let b = relabeled(&doc, &mut rng);
        let (state, tau) = random_state(&mut rng, a.dof());
        let qdd_a = aba_forward_dynamics(&a, &state, &tau, gravity()).unwrap();
        let map = |v: &[f64]| from_joint(&b, &by_joint(&a, v));
        let state_b = JointState::new(map(&state.q), map(&state.qd));
        let qdd_b = aba_forward_dynamics(&b, &state_b, &map(&tau), gravity()).unwrap();
        for ((na, xa), (nb, xb)) in by_joint(&a, &qdd_a).iter().zip(by_joint(&b, &qdd_b).iter()) {
            assert_eq!(na, nb);
            assert!((xa - xb).abs() <= 1e-12, "{na}: {xa} vs {xb}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_and_psd_hold(seed in any::<u64>(), k in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, k, 0.15);
        let (state, tau) = random_state(&mut rng, tree.dof());
        let trace = aba_with_trace(&tree, &state, &tau, gravity()).unwrap();
        for i in 1..tree.num_links() {
            let ia = &trace.child_contribution[i];
            prop_assert!((ia - ia.transpose()).amax() <= 1e-10);
            for s in tree.joint(i).unwrap().motion_subspace().columns() {
                let sv = s.to_vec6();
                prop_assert!((sv.transpose() * ia * sv)[0].abs() <= 1e-9);
            }
            prop_assert!(ia.symmetric_eigenvalues().min() >= -1e-9);
        }
    }

    #[test]
    fn torque_linearity(seed in any::<u64>(), k in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, k, 0.15);
        let n = tree.dof();
        let (state, t1) = random_state(&mut rng, n);
        let (_, t2) = random_state(&mut rng, n);
        let f = |t: &[f64]| aba_forward_dynamics(&tree, &state, t, gravity()).unwrap();
        let z = f(&vec![0.0; n]);
        let a = f(&t1);
        let b = f(&t2);
        let sum: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| x + y).collect();
        let ab = f(&sum);
        for r in 0..n {
            prop_assert!(((ab[r] - z[r]) - (a[r] - z[r]) - (b[r] - z[r])).abs() <= 1e-9);
        }
    }
}

fn hopper() -> KinematicTree {
    let text = include_str!("../assets/morphologies/hopper.json");
    parse_native(&MorphologyDoc::from_json(text).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn limit_impulse_is_a_plastic_constraint(seed in any::<u64>()) {
        let tree = hopper();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = tree.dof();
        let limited: Vec<usize> = tree
            .moving_links()
            .into_iter()
            .filter(|&i| tree.joint(i).unwrap().position_limits.is_some())
            .map(|i| tree.dof_offset(i))
            .collect();
        let (mut state, _) = random_state(&mut rng, n);
        // push every limited joint past a bound with random velocity
        for &r in &limited {
            state.q[r] = if rng.random::<bool>() { 5.0 } else { -5.0 };
        }
        let before = state.clone();
        enforce_limits(&tree, &mut state);
        let m = crba_mass_matrix(&tree, &state.q);
        let dv = nalgebra::DVector::from_fn(n, |r, _| state.qd[r] - before.qd[r]);
        let impulse = &m * &dv;
        let energy = |qd: &[f64]| {
            let v = nalgebra::DVector::from_column_slice(qd);
            0.5 * v.dot(&(&m * &v))
        };
        for r in 0..n {
            if !limited.contains(&r) {
                prop_assert!(impulse[r].abs() <= 1e-9, "row {r}: {}", impulse[r]);
            } else {
                let side = before.q[r].signum();
                prop_assert!(side * state.qd[r] <= 1e-9);
                prop_assert!(side * impulse[r] <= 1e-9);
            }
        }
        prop_assert!(energy(&state.qd) <= energy(&before.qd) + 1e-9);
    }
}
