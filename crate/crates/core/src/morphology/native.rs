//! Native JSON morphology documents. The field layout is pinned by
//! `assets/morphology.schema.json`.

use std::collections::HashMap;

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use super::{normalize_axis, Joint, JointKind, KinematicTree, Link, MorphologyError};
use crate::spatial::{Mat3, SpatialInertia, SpatialTransform, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphologyDoc {
    pub links: Vec<LinkDoc>,
    pub joints: Vec<JointDoc>,
}

/// `inertia` is `[xx, yy, zz, xy, xz, yz]` about the centre of mass, in link axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub name: String,
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginDoc {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsDoc {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub name: String,
    pub parent: String,
    pub child: String,
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub origin: OriginDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitsDoc>,
    pub actuated: bool,
}

impl MorphologyDoc {
    pub fn from_json(text: &str) -> Result<Self, MorphologyError> {
        serde_json::from_str(text).map_err(|e| MorphologyError::Parse(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("morphology doc serializes")
    }
}

fn inertia_matrix(v: &[f64; 6]) -> Mat3 {
    Mat3::new(v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2])
}

fn link_inertia(doc: &LinkDoc) -> Result<SpatialInertia, MorphologyError> {
    let ic = inertia_matrix(&doc.inertia);
    let finite = doc.mass.is_finite() && doc.com.iter().chain(doc.inertia.iter()).all(|x| x.is_finite());
    // rotational inertia may be zero (point mass) but never indefinite
    let psd = ic.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12);
    if !finite || doc.mass <= 0.0 || !psd {
        return Err(MorphologyError::MissingInertia(doc.name.clone()));
    }
    Ok(SpatialInertia::from_com_inertia(doc.mass, Vec3::from(doc.com), ic))
}

/// Parse a native morphology document. The root receives index 0; the
/// other links keep their document order.
pub fn parse_native(doc: &MorphologyDoc) -> Result<KinematicTree, MorphologyError> {
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for (i, l) in doc.links.iter().enumerate() {
        if by_name.insert(l.name.as_str(), i).is_some() {
            return Err(MorphologyError::Parse(format!("duplicate link `{}`", l.name)));
        }
    }
    let lookup = |name: &str| {
        by_name
            .get(name)
            .copied()
            .ok_or_else(|| MorphologyError::Parse(format!("unknown link `{name}`")))
    };

    let n = doc.links.len();
    let mut parent_joint: Vec<Option<usize>> = vec![None; n];
    let mut parent_of: Vec<Option<usize>> = vec![None; n];
    for (ji, j) in doc.joints.iter().enumerate() {
        let p = lookup(&j.parent)?;
        let c = lookup(&j.child)?;
        if p == c {
            return Err(MorphologyError::Cycle(j.child.clone()));
        }
        if parent_joint[c].is_some() {
            return Err(MorphologyError::Parse(format!("link `{}` has more than one parent joint", j.child)));
        }
        parent_joint[c] = Some(ji);
        parent_of[c] = Some(p);
    }
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parent_of[cur] {
            cur = p;
            steps += 1;
            if steps > n {
                return Err(MorphologyError::Cycle(doc.links[start].name.clone()));
            }
        }
    }
    let roots: Vec<usize> = (0..n).filter(|&i| parent_of[i].is_none()).collect();
    if roots.len() != 1 {
        return Err(MorphologyError::MultiRoot(roots.iter().map(|&i| doc.links[i].name.clone()).collect()));
    }
    let root = roots[0];

    let mut order = vec![root];
    order.extend((0..n).filter(|&i| i != root));
    let mut new_index = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }

    let mut links = Vec::with_capacity(n);
    let mut joints = Vec::with_capacity(n.saturating_sub(1));
    for (new, &old) in order.iter().enumerate() {
        let ld = &doc.links[old];
        links.push(Link {
            name: ld.name.clone(),
            index: new,
            inertia: link_inertia(ld)?,
            parent: parent_of[old].map(|p| new_index[p]),
            children: Vec::new(),
        });
        if new > 0 {
            let jd = &doc.joints[parent_joint[old].expect("non-root has a parent joint")];
            joints.push(joint_from_doc(jd)?);
        }
    }
    KinematicTree::from_parts(links, joints)
}

fn joint_from_doc(jd: &JointDoc) -> Result<Joint, MorphologyError> {
    let axis = match jd.kind {
        JointKind::Fixed => normalize_axis(&jd.name, jd.axis).unwrap_or_else(|_| Vec3::z()),
        _ => normalize_axis(&jd.name, jd.axis)?,
    };
    if jd.kind == JointKind::Fixed && jd.actuated {
        return Err(MorphologyError::Parse(format!("fixed joint `{}` cannot be actuated", jd.name)));
    }
    if let Some(l) = jd.limits {
        if !(l.lower <= l.upper) {
            return Err(MorphologyError::Parse(format!("joint `{}` has lower > upper", jd.name)));
        }
    }
    Ok(Joint {
        name: jd.name.clone(),
        kind: jd.kind,
        axis,
        parent_to_joint: SpatialTransform::from_xyz_rpy(jd.origin.xyz, jd.origin.rpy),
        dof: if jd.kind == JointKind::Fixed { 0 } else { 1 },
        position_limits: jd.limits.map(|l| (l.lower, l.upper)),
        actuated: jd.actuated,
    })
}

/// Canonical native document for a tree (links in index order).
pub fn serialize_native(tree: &KinematicTree) -> MorphologyDoc {
    let links = tree
        .links()
        .iter()
        .map(|l| {
            let ic = l.inertia.com_inertia();
            LinkDoc {
                name: l.name.clone(),
                mass: l.inertia.mass,
                com: [l.inertia.com.x, l.inertia.com.y, l.inertia.com.z],
                inertia: [ic[(0, 0)], ic[(1, 1)], ic[(2, 2)], ic[(0, 1)], ic[(0, 2)], ic[(1, 2)]],
            }
        })
        .collect();
    let joints = (1..tree.num_links())
        .map(|i| {
            let j = tree.joint(i).expect("non-root joint");
            let x = &j.parent_to_joint;
            let (r, p, y) = Rotation3::from_matrix_unchecked(x.rotation).euler_angles();
            JointDoc {
                name: j.name.clone(),
                parent: tree.link(tree.parent(i).unwrap()).name.clone(),
                child: tree.link(i).name.clone(),
                kind: j.kind,
                axis: [j.axis.x, j.axis.y, j.axis.z],
                origin: OriginDoc {
                    xyz: [x.translation.x, x.translation.y, x.translation.z],
                    rpy: [r, p, y],
                },
                limits: j.position_limits.map(|(lower, upper)| LimitsDoc { lower, upper }),
                actuated: j.actuated,
            }
        })
        .collect();
    MorphologyDoc { links, joints }
}
