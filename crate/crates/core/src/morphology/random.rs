//! Seeded random kinematic trees for property tests and benchmarks.

use rand::Rng;

use super::{parse_native, JointDoc, JointKind, KinematicTree, LinkDoc, MorphologyDoc, OriginDoc};

/// Random document with `k` links: random parents, mixed joint kinds,
/// random inertias and origins. Fixed joints appear with probability
/// `p_fixed`; of the moving joints, 30% are prismatic.
pub fn random_tree_doc(rng: &mut impl Rng, k: usize, p_fixed: f64) -> MorphologyDoc {
    assert!(k >= 1);
    let mut links_doc = Vec::new();
    let mut joints_doc = Vec::new();
    for i in 0..k {
        let a = nalgebra::Matrix3::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let ic = a * a.transpose() + nalgebra::Matrix3::identity() * 0.02;
        links_doc.push(LinkDoc {
            name: format!("l{i}"),
            mass: rng.random_range(0.2..3.0),
            com: [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
            inertia: [ic[(0, 0)], ic[(1, 1)], ic[(2, 2)], ic[(0, 1)], ic[(0, 2)], ic[(1, 2)]],
        });
        if i > 0 {
            let parent = rng.random_range(0..i);
            let kind = if rng.random_bool(p_fixed) {
                JointKind::Fixed
            } else if rng.random_bool(0.7) {
                JointKind::Revolute
            } else {
                JointKind::Prismatic
            };
            joints_doc.push(JointDoc {
                name: format!("j{i}"),
                parent: format!("l{parent}"),
                child: format!("l{i}"),
                kind,
                axis: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)],
                origin: OriginDoc {
                    xyz: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
                    rpy: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                },
                limits: None,
                actuated: kind != JointKind::Fixed,
            });
        }
    }
    MorphologyDoc {
        links: links_doc,
        joints: joints_doc,
    }
}

pub fn random_tree(rng: &mut impl Rng, k: usize, p_fixed: f64) -> KinematicTree {
    parse_native(&random_tree_doc(rng, k, p_fixed)).expect("random tree is valid")
}
