//! Exact forward dynamics for fixed-base kinematic trees.
//!
//! [`aba_forward_dynamics`] is the three-pass Articulated Body Algorithm.
//! [`crba_oracle_dynamics`] is an independent route (CRBA mass matrix, RNEA
//! bias, Cholesky solve) used to check it. Gravity enters as a fictitious
//! upward acceleration of the base.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::morphology::KinematicTree;
use crate::spatial::{cross_force, cross_motion, Mat6, SpatialTransform, SpatialVector, Vec3, Vec6};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("joint inertia SᵀIᴬS of link `{0}` is singular")]
    SingularJointInertia(String),
    #[error("joint-space mass matrix is not positive definite")]
    NonPosDefMassMatrix,
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

impl JointState {
    pub fn zeros(tree: &KinematicTree) -> Self {
        Self {
            q: vec![0.0; tree.dof()],
            qd: vec![0.0; tree.dof()],
        }
    }

    pub fn new(q: Vec<f64>, qd: Vec<f64>) -> Self {
        Self { q, qd }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|x| x.is_finite())
    }
}

fn check_dims(tree: &KinematicTree, state: &JointState, tau: &[f64]) -> Result<(), DynamicsError> {
    let n = tree.dof();
    if state.q.len() != n || state.qd.len() != n || tau.len() != n {
        return Err(DynamicsError::Dimension(format!(
            "tree has {n} dof; got q={}, qd={}, tau={}",
            state.q.len(),
            state.qd.len(),
            tau.len()
        )));
    }
    Ok(())
}

fn joint_slice<'a>(tree: &KinematicTree, i: usize, v: &'a [f64]) -> &'a [f64] {
    let off = tree.dof_offset(i);
    let n = tree.joint(i).map_or(0, |j| j.dof);
    &v[off..off + n]
}

/// Pose of every link in its parent frame at configuration `q`
/// (identity for the root).
pub fn parent_poses(tree: &KinematicTree, q: &[f64]) -> Vec<SpatialTransform> {
    (0..tree.num_links())
        .map(|i| match tree.joint(i) {
            Some(j) => j.child_pose(joint_slice(tree, i, q)),
            None => SpatialTransform::identity(),
        })
        .collect()
}

/// Pose of every link in the root (world) frame.
pub fn world_poses(tree: &KinematicTree, q: &[f64]) -> Vec<SpatialTransform> {
    let local = parent_poses(tree, q);
    let mut world = vec![SpatialTransform::identity(); tree.num_links()];
    for &i in tree.root_to_leaf() {
        if let Some(p) = tree.parent(i) {
            world[i] = world[p].compose(&local[i]);
        }
    }
    world
}

/// Spatial velocity of every link in its own frame.
pub fn link_velocities(tree: &KinematicTree, state: &JointState) -> Vec<SpatialVector> {
    let poses = parent_poses(tree, &state.q);
    let mut v = vec![SpatialVector::zero(); tree.num_links()];
    for &i in tree.root_to_leaf() {
        if let (Some(p), Some(j)) = (tree.parent(i), tree.joint(i)) {
            let vj = j.motion_subspace().motion(joint_slice(tree, i, &state.qd));
            v[i] = poses[i].inv_transform_motion(&v[p]) + vj;
        }
    }
    v
}

/// Intermediate quantities of one ABA evaluation, kept for inspection.
#[derive(Debug, Clone)]
pub struct AbaTrace {
    pub qdd: Vec<f64>,
    /// Articulated-body inertia `Iᴬ_i` of each link, in link coordinates.
    pub articulated_inertia: Vec<Mat6>,
    /// Bias force `bᴬ_i` of each link, in link coordinates.
    pub bias_force: Vec<SpatialVector>,
    /// Contribution `Iᵃ_i` of each non-root link to its parent, in the
    /// child's coordinates (zero matrix for the root).
    pub child_contribution: Vec<Mat6>,
}

/// Forward dynamics by the Articulated Body Algorithm.
pub fn aba_forward_dynamics(
    tree: &KinematicTree,
    state: &JointState,
    tau: &[f64],
    gravity: Vec3,
) -> Result<Vec<f64>, DynamicsError> {
    aba_with_trace(tree, state, tau, gravity).map(|t| t.qdd)
}

pub fn aba_with_trace(
    tree: &KinematicTree,
    state: &JointState,
    tau: &[f64],
    gravity: Vec3,
) -> Result<AbaTrace, DynamicsError> {
    check_dims(tree, state, tau)?;
    let k = tree.num_links();
    let poses = parent_poses(tree, &state.q);
    let subspaces: Vec<_> = (0..k).map(|i| tree.joint(i).map(|j| j.motion_subspace())).collect();

    // pass 1: velocities, velocity-product accelerations, rigid bias forces
    let mut vel = vec![SpatialVector::zero(); k];
    let mut c = vec![SpatialVector::zero(); k];
    let mut ia: Vec<Mat6> = tree.links().iter().map(|l| l.inertia.to_matrix()).collect();
    let mut pa = vec![SpatialVector::zero(); k];
    for &i in tree.root_to_leaf() {
        let inertia = &tree.link(i).inertia;
        if let (Some(p), Some(s)) = (tree.parent(i), &subspaces[i]) {
            let vj = s.motion(joint_slice(tree, i, &state.qd));
            vel[i] = poses[i].inv_transform_motion(&vel[p]) + vj;
            c[i] = cross_motion(&vel[i], &vj);
        }
        pa[i] = cross_force(&vel[i], &inertia.apply(&vel[i]));
    }

    // pass 2: articulated inertias and bias forces, leaves to root
    let mut u: Vec<Vec<Vec6>> = vec![Vec::new(); k];
    let mut d_inv: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); k];
    let mut u_tau: Vec<DVector<f64>> = vec![DVector::zeros(0); k];
    let mut contribution = vec![Mat6::zeros(); k];
    for &i in tree.leaf_to_root() {
        let Some(p) = tree.parent(i) else { continue };
        let s = subspaces[i].as_ref().expect("non-root has a joint");
        let n = s.dof();
        let cols: Vec<Vec6> = s.columns().iter().map(|c| c.to_vec6()).collect();
        let ui: Vec<Vec6> = cols.iter().map(|sc| ia[i] * sc).collect();
        let mut ia_a = ia[i];
        let mut pa_a = pa[i];
        if n > 0 {
            let d = DMatrix::from_fn(n, n, |r, cc| cols[r].dot(&ui[cc]));
            let tau_i = joint_slice(tree, i, tau);
            let ut = DVector::from_fn(n, |r, _| tau_i[r] - cols[r].dot(&pa[i].to_vec6()));
            let dinv = invert_small(&d).ok_or_else(|| DynamicsError::SingularJointInertia(tree.link(i).name.clone()))?;
            for r in 0..n {
                for cc in 0..n {
                    ia_a -= ui[r] * ui[cc].transpose() * dinv[(r, cc)];
                }
            }
            let coeff = &dinv * &ut;
            for r in 0..n {
                pa_a += SpatialVector::from_vec6(&(ui[r] * coeff[r]));
            }
            d_inv[i] = dinv;
            u_tau[i] = ut;
        }
        ia_a = (ia_a + ia_a.transpose()) * 0.5;
        pa_a += SpatialVector::from_vec6(&(ia_a * c[i].to_vec6()));
        contribution[i] = ia_a;
        ia[p] += poses[i].transform_inertia(&ia_a);
        pa[p] += poses[i].transform_force(&pa_a);
        u[i] = ui;
    }

    // pass 3: accelerations, root to leaves
    let mut acc = vec![SpatialVector::zero(); k];
    acc[0] = SpatialVector::new(Vec3::zeros(), -gravity);
    let mut qdd = vec![0.0; tree.dof()];
    for &i in tree.root_to_leaf() {
        let Some(p) = tree.parent(i) else { continue };
        let s = subspaces[i].as_ref().expect("non-root has a joint");
        let a_pre = poses[i].inv_transform_motion(&acc[p]) + c[i];
        let n = s.dof();
        if n > 0 {
            let rhs = DVector::from_fn(n, |r, _| u_tau[i][r] - u[i][r].dot(&a_pre.to_vec6()));
            let qdd_i = &d_inv[i] * rhs;
            let off = tree.dof_offset(i);
            qdd[off..off + n].copy_from_slice(qdd_i.as_slice());
            acc[i] = a_pre + s.motion(qdd_i.as_slice());
        } else {
            acc[i] = a_pre;
        }
    }

    Ok(AbaTrace {
        qdd,
        articulated_inertia: ia,
        bias_force: pa,
        child_contribution: contribution,
    })
}

fn invert_small(d: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if d.nrows() == 1 {
        let x = d[(0, 0)];
        return (x.abs() > SINGULAR_TOL && x.is_finite()).then(|| DMatrix::from_element(1, 1, 1.0 / x));
    }
    let det = d.determinant();
    if det.abs() <= SINGULAR_TOL {
        return None;
    }
    d.clone().try_inverse()
}

/// Joint-space mass matrix by the Composite Rigid Body Algorithm.
pub fn crba_mass_matrix(tree: &KinematicTree, q: &[f64]) -> DMatrix<f64> {
    let k = tree.num_links();
    let n = tree.dof();
    let poses = parent_poses(tree, q);
    let mut ic: Vec<Mat6> = tree.links().iter().map(|l| l.inertia.to_matrix()).collect();
    for &i in tree.leaf_to_root() {
        if let Some(p) = tree.parent(i) {
            let moved = poses[i].transform_inertia(&ic[i]);
            ic[p] += moved;
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 1..k {
        let j = tree.joint(i).unwrap();
        let s = j.motion_subspace();
        for (ci, col) in s.columns().iter().enumerate() {
            let row = tree.dof_offset(i) + ci;
            let mut f = SpatialVector::from_vec6(&(ic[i] * col.to_vec6()));
            for (cj, col_j) in s.columns().iter().enumerate() {
                m[(row, tree.dof_offset(i) + cj)] = col_j.dot(&f);
            }
            // walk towards the root, carrying the force into each ancestor frame
            let mut cur = i;
            while let Some(p) = tree.parent(cur) {
                f = poses[cur].transform_force(&f);
                cur = p;
                if let Some(jp) = tree.joint(cur) {
                    for (cp, sp) in jp.motion_subspace().columns().iter().enumerate() {
                        let col_idx = tree.dof_offset(cur) + cp;
                        let val = sp.dot(&f);
                        m[(row, col_idx)] = val;
                        m[(col_idx, row)] = val;
                    }
                }
            }
        }
    }
    m
}

/// Inverse dynamics by the Recursive Newton-Euler Algorithm.
pub fn rnea(tree: &KinematicTree, state: &JointState, qdd: &[f64], gravity: Vec3) -> Vec<f64> {
    let k = tree.num_links();
    let poses = parent_poses(tree, &state.q);
    let mut vel = vec![SpatialVector::zero(); k];
    let mut acc = vec![SpatialVector::zero(); k];
    let mut f = vec![SpatialVector::zero(); k];
    acc[0] = SpatialVector::new(Vec3::zeros(), -gravity);
    for &i in tree.root_to_leaf() {
        if let (Some(p), Some(j)) = (tree.parent(i), tree.joint(i)) {
            let s = j.motion_subspace();
            let vj = s.motion(joint_slice(tree, i, &state.qd));
            vel[i] = poses[i].inv_transform_motion(&vel[p]) + vj;
            acc[i] = poses[i].inv_transform_motion(&acc[p])
                + s.motion(joint_slice(tree, i, qdd))
                + cross_motion(&vel[i], &vj);
        }
        let inertia = &tree.link(i).inertia;
        f[i] = inertia.apply(&acc[i]) + cross_force(&vel[i], &inertia.apply(&vel[i]));
    }
    let mut tau = vec![0.0; tree.dof()];
    for &i in tree.leaf_to_root() {
        let (Some(p), Some(j)) = (tree.parent(i), tree.joint(i)) else { continue };
        let proj = j.motion_subspace().project_force(&f[i]);
        let off = tree.dof_offset(i);
        tau[off..off + proj.len()].copy_from_slice(&proj);
        let moved = poses[i].transform_force(&f[i]);
        f[p] += moved;
    }
    tau
}

/// Forward dynamics through `M(q) q̈ = τ − b(q, q̇)`, solved by Cholesky.
pub fn crba_oracle_dynamics(
    tree: &KinematicTree,
    state: &JointState,
    tau: &[f64],
    gravity: Vec3,
) -> Result<Vec<f64>, DynamicsError> {
    check_dims(tree, state, tau)?;
    let n = tree.dof();
    let m = crba_mass_matrix(tree, &state.q);
    let bias = rnea(tree, state, &vec![0.0; n], gravity);
    let rhs = DVector::from_fn(n, |r, _| tau[r] - bias[r]);
    let chol = m.cholesky().ok_or(DynamicsError::NonPosDefMassMatrix)?;
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// Kinetic plus gravitational potential energy.
pub fn total_energy(tree: &KinematicTree, state: &JointState, gravity: Vec3) -> f64 {
    let m = crba_mass_matrix(tree, &state.q);
    let qd = DVector::from_column_slice(&state.qd);
    let kinetic = 0.5 * qd.dot(&(&m * &qd));
    let world = world_poses(tree, &state.q);
    let potential: f64 = tree
        .links()
        .iter()
        .skip(1)
        .map(|l| -l.inertia.mass * gravity.dot(&world[l.index].apply_point(&l.inertia.com)))
        .sum();
    kinetic + potential
}

/// One semi-implicit Euler step, `qd' = qd + dt·qdd; q' = q + dt·qd'`,
/// followed by position-limit clamping.
pub fn step_semi_implicit(
    tree: &KinematicTree,
    state: &JointState,
    tau: &[f64],
    gravity: Vec3,
    dt: f64,
) -> Result<JointState, DynamicsError> {
    debug_assert!(dt > 0.0);
    let qdd = aba_forward_dynamics(tree, state, tau, gravity)?;
    let mut next = state.clone();
    for r in 0..tree.dof() {
        next.qd[r] += dt * qdd[r];
        next.q[r] += dt * next.qd[r];
    }
    enforce_limits(tree, &mut next);
    Ok(next)
}

/// Clamp joint positions into their limits and stop outward motion at active
/// limits with a plastic constraint impulse, so the rest of the tree takes
/// the reaction.
pub fn enforce_limits(tree: &KinematicTree, state: &mut JointState) {
    // (row, +1 at an upper limit, -1 at a lower one)
    let mut at_limit = Vec::new();
    for i in tree.moving_links() {
        let j = tree.joint(i).unwrap();
        let Some((lo, hi)) = j.position_limits else { continue };
        let off = tree.dof_offset(i);
        for r in off..off + j.dof {
            if state.q[r] >= hi {
                state.q[r] = hi;
                at_limit.push((r, 1.0));
            } else if state.q[r] <= lo {
                state.q[r] = lo;
                at_limit.push((r, -1.0));
            }
        }
    }
    let outward = |qd: &[f64], &(r, side): &(usize, f64)| side * qd[r] > 0.0;
    if !at_limit.iter().any(|c| outward(&state.qd, c)) {
        return;
    }
    let Some(m_inv) = crba_mass_matrix(tree, &state.q).try_inverse() else {
        for c in &at_limit {
            if outward(&state.qd, c) {
                state.qd[c.0] = 0.0;
            }
        }
        return;
    };
    let qd0 = DVector::from_column_slice(&state.qd);
    let mut active: Vec<(usize, f64)> = at_limit.iter().copied().filter(|c| outward(&state.qd, c)).collect();
    for _ in 0..=at_limit.len() {
        let n = active.len();
        let k = DMatrix::from_fn(n, n, |a, b| m_inv[(active[a].0, active[b].0)]);
        let rhs = DVector::from_fn(n, |a, _| -qd0[active[a].0]);
        let Some(lambda) = k.lu().solve(&rhs) else { break };
        // impulses may only push back into the allowed range
        if let Some(a) = (0..n).find(|&a| active[a].1 * lambda[a] > 1e-12) {
            active.remove(a);
            if active.is_empty() {
                break;
            }
            continue;
        }
        let mut qd = qd0.clone();
        for (a, &(r, _)) in active.iter().enumerate() {
            qd += m_inv.column(r) * lambda[a];
        }
        let newly: Vec<(usize, f64)> = at_limit
            .iter()
            .copied()
            .filter(|c| !active.contains(c) && c.1 * qd[c.0] > 1e-12)
            .collect();
        state.qd.copy_from_slice(qd.as_slice());
        if newly.is_empty() {
            return;
        }
        active.extend(newly);
    }
    for c in &at_limit {
        if outward(&state.qd, c) {
            state.qd[c.0] = 0.0;
        }
    }
}

/// Copy of `tree` with one link's mass and rotational inertia scaled.
pub fn mass_scaled(tree: &KinematicTree, link_name: &str, factor: f64) -> Result<KinematicTree, DynamicsError> {
    debug_assert!(factor > 0.0);
    let i = tree
        .link_index(link_name)
        .ok_or_else(|| DynamicsError::UnknownLink(link_name.to_string()))?;
    Ok(tree.with_link_inertia(i, tree.link(i).inertia.scaled(factor)))
}

/// World-frame linear velocity Jacobian (3 × dof) of a point fixed in `link`.
pub fn point_jacobian(tree: &KinematicTree, q: &[f64], link: usize, point: &Vec3) -> DMatrix<f64> {
    let world = world_poses(tree, q);
    let p_world = world[link].apply_point(point);
    let mut jac = DMatrix::zeros(3, tree.dof());
    let mut cur = link;
    while let Some(parent) = tree.parent(cur) {
        let j = tree.joint(cur).unwrap();
        for (c, s) in j.motion_subspace().columns().iter().enumerate() {
            let sw = world[cur].transform_motion(s);
            let v = sw.linear + sw.angular.cross(&p_world);
            jac.set_column(tree.dof_offset(cur) + c, &v);
        }
        cur = parent;
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::random::random_tree;
    use crate::morphology::{parse_native, JointDoc, JointKind, LinkDoc, MorphologyDoc, OriginDoc};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: f64 = 9.81;

    fn gravity() -> Vec3 {
        Vec3::new(0.0, 0.0, -G)
    }

    /// Uniform rod of length `l` and mass `m` hanging from a pivot about y.
    pub(crate) fn rod_pendulum(m: f64, l: f64) -> KinematicTree {
        let i = m * l * l / 12.0;
        parse_native(&MorphologyDoc {
            links: vec![
                LinkDoc {
                    name: "base".into(),
                    mass: 1.0,
                    com: [0.0; 3],
                    inertia: [0.01, 0.01, 0.01, 0.0, 0.0, 0.0],
                },
                LinkDoc {
                    name: "rod".into(),
                    mass: m,
                    com: [0.0, 0.0, -l / 2.0],
                    inertia: [i, i, 0.0, 0.0, 0.0, 0.0],
                },
            ],
            joints: vec![JointDoc {
                name: "pivot".into(),
                parent: "base".into(),
                child: "rod".into(),
                kind: JointKind::Revolute,
                axis: [0.0, 1.0, 0.0],
                origin: OriginDoc {
                    xyz: [0.0; 3],
                    rpy: [0.0; 3],
                },
                limits: None,
                actuated: true,
            }],
        })
        .unwrap()
    }

    fn random_state(rng: &mut impl Rng, n: usize) -> (JointState, Vec<f64>) {
        let q = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let qd = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tau = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        (JointState::new(q, qd), tau)
    }

    #[test]
    fn pendulum_equilibrium_and_analytic_acceleration() {
        let (m, l) = (1.3, 0.8);
        let tree = rod_pendulum(m, l);
        let qdd = aba_forward_dynamics(&tree, &JointState::zeros(&tree), &[0.0], gravity()).unwrap();
        assert_eq!(qdd[0], 0.0);
        for k in 0..50 {
            let q = -3.0 + 6.0 * k as f64 / 49.0;
            let state = JointState::new(vec![q], vec![0.0]);
            let qdd = aba_forward_dynamics(&tree, &state, &[0.0], gravity()).unwrap();
            let expected = -(3.0 * G / (2.0 * l)) * q.sin();
            assert!((qdd[0] - expected).abs() < 1e-10, "q={q}: {} vs {expected}", qdd[0]);
        }
    }

    #[test]
    fn pendulum_mass_matrix_is_rod_moment() {
        let (m, l) = (2.0, 1.5);
        let tree = rod_pendulum(m, l);
        for q in [0.0, 0.4, -2.0] {
            let mm = crba_mass_matrix(&tree, &[q]);
            assert!((mm[(0, 0)] - m * l * l / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aba_matches_oracle_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let k = rng.random_range(2..=8);
            let tree = random_tree(&mut rng, k, 0.15);
            let (state, tau) = random_state(&mut rng, tree.dof());
            let a = aba_forward_dynamics(&tree, &state, &tau, gravity()).unwrap();
            let b = crba_oracle_dynamics(&tree, &state, &tau, gravity()).unwrap();
            let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-8, "max deviation {err}");
        }
    }

    #[test]
    fn rnea_inverts_aba() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..50 {
            let tree = random_tree(&mut rng, 6, 0.1);
            let (state, tau) = random_state(&mut rng, tree.dof());
            let qdd = aba_forward_dynamics(&tree, &state, &tau, gravity()).unwrap();
            let back = rnea(&tree, &state, &qdd, gravity());
            for (x, y) in back.iter().zip(&tau) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn child_contribution_annihilates_joint_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let tree = random_tree(&mut rng, 7, 0.15);
            let (state, tau) = random_state(&mut rng, tree.dof());
            let trace = aba_with_trace(&tree, &state, &tau, gravity()).unwrap();
            for i in 1..tree.num_links() {
                let ia = &trace.child_contribution[i];
                for s in tree.joint(i).unwrap().motion_subspace().columns() {
                    let sv = s.to_vec6();
                    assert!((ia * sv).amax() < 1e-9);
                }
                let eig = ia.symmetric_eigenvalues();
                assert!(eig.min() >= -1e-9, "eigenvalue {}", eig.min());
            }
        }
    }

    #[test]
    fn zero_everything_gives_zero_acceleration() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let tree = random_tree(&mut rng, 5, 0.0);
        let n = tree.dof();
        let mut state = JointState::zeros(&tree);
        state.q = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let qdd = crba_oracle_dynamics(&tree, &state, &vec![0.0; n], Vec3::zeros()).unwrap();
        assert!(qdd.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn mass_matrix_spd_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..1000 {
            let k = rng.random_range(2..=6);
            let tree = random_tree(&mut rng, k, 0.1);
            let (state, _) = random_state(&mut rng, tree.dof());
            let m = crba_mass_matrix(&tree, &state.q);
            assert!((&m - m.transpose()).amax() < 1e-12);
            assert!(m.cholesky().is_some());
        }
    }

    #[test]
    fn acceleration_is_affine_in_torque() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for _ in 0..50 {
            let tree = random_tree(&mut rng, 6, 0.1);
            let n = tree.dof();
            let (state, t1) = random_state(&mut rng, n);
            let (_, t2) = random_state(&mut rng, n);
            let f = |t: &[f64]| aba_forward_dynamics(&tree, &state, t, gravity()).unwrap();
            let q0 = f(&vec![0.0; n]);
            let q1 = f(&t1);
            let q2 = f(&t2);
            let sum: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
            let q12 = f(&sum);
            for r in 0..n {
                let lhs = q12[r] - q0[r];
                let rhs = (q1[r] - q0[r]) + (q2[r] - q0[r]);
                assert!((lhs - rhs).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn singular_joint_inertia_is_reported() {
        // point mass on the axis of a revolute joint: no rotational inertia about the axis
        let doc = MorphologyDoc {
            links: vec![
                LinkDoc { name: "base".into(), mass: 1.0, com: [0.0; 3], inertia: [0.1, 0.1, 0.1, 0.0, 0.0, 0.0] },
                LinkDoc { name: "bead".into(), mass: 1.0, com: [0.0; 3], inertia: [0.0; 6] },
            ],
            joints: vec![JointDoc {
                name: "spin".into(),
                parent: "base".into(),
                child: "bead".into(),
                kind: JointKind::Revolute,
                axis: [0.0, 0.0, 1.0],
                origin: OriginDoc { xyz: [0.0; 3], rpy: [0.0; 3] },
                limits: None,
                actuated: true,
            }],
        };
        let tree = parse_native(&doc).unwrap();
        let r = aba_forward_dynamics(&tree, &JointState::zeros(&tree), &[1.0], gravity());
        assert!(matches!(r, Err(DynamicsError::SingularJointInertia(_))));
    }

    #[test]
    fn integrator_equilibrium_and_limits() {
        let tree = rod_pendulum(1.0, 1.0);
        let s0 = JointState::zeros(&tree);
        let s1 = step_semi_implicit(&tree, &s0, &[0.0], gravity(), 1e-3).unwrap();
        assert_eq!(s0, s1);

        let mut doc = crate::morphology::serialize_native(&tree);
        doc.joints[0].limits = Some(crate::morphology::LimitsDoc { lower: -0.5, upper: 0.5 });
        let limited = parse_native(&doc).unwrap();
        // at the upper limit moving inward: untouched by the clamp
        let s = JointState::new(vec![0.5], vec![-1.0]);
        let next = step_semi_implicit(&limited, &s, &[0.0], Vec3::zeros(), 1e-3).unwrap();
        assert_eq!(next.qd[0], -1.0);
        assert!(next.q[0] < 0.5);
        // pushing outward: clamped with velocity zeroed
        let s = JointState::new(vec![0.5], vec![1.0]);
        let next = step_semi_implicit(&limited, &s, &[0.0], Vec3::zeros(), 1e-3).unwrap();
        assert_eq!(next.q[0], 0.5);
        assert_eq!(next.qd[0], 0.0);
    }

    #[test]
    fn mass_scaling_behaviour() {
        let tree = rod_pendulum(1.0, 1.0);
        assert!(mass_scaled(&tree, "rod", 1.0).unwrap().structurally_equal(&tree, 0.0));
        assert!(matches!(mass_scaled(&tree, "nope", 2.0), Err(DynamicsError::UnknownLink(_))));

        let state = JointState::new(vec![0.7], vec![0.0]);
        let base = aba_forward_dynamics(&tree, &state, &[0.0], gravity()).unwrap()[0];
        let heavy_root = mass_scaled(&tree, "base", 2.0).unwrap();
        assert_eq!(aba_forward_dynamics(&heavy_root, &state, &[0.0], gravity()).unwrap()[0], base);

        let heavy = mass_scaled(&tree, "rod", 2.0).unwrap();
        let g_only = aba_forward_dynamics(&heavy, &state, &[0.0], gravity()).unwrap()[0];
        assert!((g_only - base).abs() < 1e-12);
        let t = 1.7;
        let torque_part = |tr: &KinematicTree| {
            aba_forward_dynamics(tr, &state, &[t], gravity()).unwrap()[0]
                - aba_forward_dynamics(tr, &state, &[0.0], gravity()).unwrap()[0]
        };
        assert!((torque_part(&heavy) - 0.5 * torque_part(&tree)).abs() < 1e-12);
    }

    #[test]
    fn point_jacobian_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let tree = random_tree(&mut rng, 6, 0.0);
        let n = tree.dof();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let link = 5;
        let p = Vec3::new(0.1, -0.2, 0.3);
        let jac = point_jacobian(&tree, &q, link, &p);
        let h = 1e-6;
        for c in 0..n {
            let mut qp = q.clone();
            qp[c] += h;
            let mut qm = q.clone();
            qm[c] -= h;
            let fp = world_poses(&tree, &qp)[link].apply_point(&p);
            let fm = world_poses(&tree, &qm)[link].apply_point(&p);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - jac.column(c)).amax() < 1e-6);
        }
    }
}

/// Worst disagreement between ABA and the CRBA/RNEA oracle.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DyncheckReport {
    pub n_states: usize,
    pub max_abs_dev: f64,
    pub worst_q: Vec<f64>,
    pub worst_qd: Vec<f64>,
    pub worst_tau: Vec<f64>,
}

/// Compare both forward-dynamics routes on `n` random states and torques.
pub fn dyncheck(tree: &KinematicTree, n: usize, seed: u64, gravity: Vec3) -> Result<DyncheckReport, DynamicsError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dof = tree.dof();
    let mut report = DyncheckReport {
        n_states: n,
        max_abs_dev: 0.0,
        worst_q: vec![],
        worst_qd: vec![],
        worst_tau: vec![],
    };
    for _ in 0..n {
        let q: Vec<f64> = (0..dof).map(|_| rng.random_range(-3.0..3.0)).collect();
        let qd: Vec<f64> = (0..dof).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tau: Vec<f64> = (0..dof).map(|_| rng.random_range(-5.0..5.0)).collect();
        let state = JointState::new(q, qd);
        let a = aba_forward_dynamics(tree, &state, &tau, gravity)?;
        let b = crba_oracle_dynamics(tree, &state, &tau, gravity)?;
        let dev = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if dev > report.max_abs_dev || report.worst_q.is_empty() {
            report.max_abs_dev = dev;
            report.worst_q = state.q;
            report.worst_qd = state.qd;
            report.worst_tau = tau;
        }
    }
    Ok(report)
}
