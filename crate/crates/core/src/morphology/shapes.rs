//! Reference morphologies built in code.

use super::{JointDoc, JointKind, LinkDoc, MorphologyDoc, OriginDoc};

fn rod(name: &str, mass: f64, length: f64) -> LinkDoc {
    let i = mass * length * length / 12.0;
    LinkDoc {
        name: name.to_string(),
        mass,
        com: [0.0, 0.0, -length / 2.0],
        inertia: [i, i, 1e-4 * mass, 0.0, 0.0, 0.0],
    }
}

fn revolute(name: &str, parent: &str, child: &str, axis: [f64; 3], xyz: [f64; 3]) -> JointDoc {
    JointDoc {
        name: name.to_string(),
        parent: parent.to_string(),
        child: child.to_string(),
        kind: JointKind::Revolute,
        axis,
        origin: OriginDoc { xyz, rpy: [0.0; 3] },
        limits: None,
        actuated: true,
    }
}

/// Fixed base followed by `k − 1` hanging rods of unit mass and 0.5 m
/// length, all hinged about y.
pub fn chain_doc(k: usize) -> MorphologyDoc {
    assert!(k >= 1);
    let mut links = vec![LinkDoc {
        name: "base".into(),
        mass: 1.0,
        com: [0.0; 3],
        inertia: [0.01, 0.01, 0.01, 0.0, 0.0, 0.0],
    }];
    let mut joints = Vec::new();
    for i in 1..k {
        let name = format!("link{i}");
        let parent = links[i - 1].name.clone();
        let z = if i == 1 { 0.0 } else { -0.5 };
        joints.push(revolute(&format!("joint{i}"), &parent, &name, [0.0, 1.0, 0.0], [0.0, 0.0, z]));
        links.push(rod(&name, 1.0, 0.5));
    }
    MorphologyDoc { links, joints }
}

/// Thirteen-link quadruped: a torso and four three-link legs
/// (hip abduction about x, thigh and calf about y).
pub fn quadruped_doc() -> MorphologyDoc {
    let mut links = vec![LinkDoc {
        name: "torso".into(),
        mass: 6.9,
        com: [0.0; 3],
        inertia: [0.025, 0.1, 0.11, 0.0, 0.0, 0.0],
    }];
    let mut joints = Vec::new();
    for (leg, x, y) in [("fl", 0.19, 0.05), ("fr", 0.19, -0.05), ("rl", -0.19, 0.05), ("rr", -0.19, -0.05)] {
        let hip = format!("{leg}_hip");
        let thigh = format!("{leg}_thigh");
        let calf = format!("{leg}_calf");
        links.push(LinkDoc {
            name: hip.clone(),
            mass: 0.68,
            com: [0.0, 0.0, 0.0],
            inertia: [5e-4, 9e-4, 6e-4, 0.0, 0.0, 0.0],
        });
        links.push(rod(&thigh, 1.0, 0.213));
        links.push(rod(&calf, 0.2, 0.213));
        let side = if y > 0.0 { 0.0955 } else { -0.0955 };
        joints.push(revolute(&format!("{hip}_joint"), "torso", &hip, [1.0, 0.0, 0.0], [x, y, 0.0]));
        joints.push(revolute(&format!("{thigh}_joint"), &hip, &thigh, [0.0, 1.0, 0.0], [0.0, side, 0.0]));
        joints.push(revolute(&format!("{calf}_joint"), &thigh, &calf, [0.0, 1.0, 0.0], [0.0, 0.0, -0.213]));
    }
    MorphologyDoc { links, joints }
}
