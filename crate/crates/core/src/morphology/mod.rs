//! Kinematic trees: parsing robot descriptions and the traversal orders used
//! by the exact dynamics and the tree-structured networks.

mod native;
mod urdf;

pub use native::{parse_native, serialize_native, JointDoc, LinkDoc, MorphologyDoc, OriginDoc, LimitsDoc};
pub mod random;
pub mod shapes;

pub use urdf::{parse_urdf_subset, UrdfOptions, DEFAULT_MERGE_MASS_THRESHOLD};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::spatial::{MotionSubspace, SpatialInertia, SpatialTransform, Vec3};

#[derive(Debug, Error)]
pub enum MorphologyError {
    #[error("cycle in parent chain through link `{0}`")]
    Cycle(String),
    #[error("expected exactly one root link, found {0:?}")]
    MultiRoot(Vec<String>),
    #[error("link `{0}` has missing or invalid inertia")]
    MissingInertia(String),
    #[error("joint `{0}` has an axis that cannot be normalized")]
    BadAxis(String),
    #[error("joint `{name}` has unsupported type `{kind}`")]
    UnsupportedJoint { name: String, kind: String },
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

impl JointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
            JointKind::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vec3,
    /// Pose of the joint frame (zero displacement) in the parent link frame.
    pub parent_to_joint: SpatialTransform,
    pub dof: usize,
    pub position_limits: Option<(f64, f64)>,
    pub actuated: bool,
}

impl Joint {
    pub fn motion_subspace(&self) -> MotionSubspace {
        match self.kind {
            JointKind::Revolute => MotionSubspace::revolute(self.axis),
            JointKind::Prismatic => MotionSubspace::prismatic(self.axis),
            JointKind::Fixed => MotionSubspace::fixed(),
        }
    }

    /// Pose of the child link frame in the parent link frame at position `q`.
    pub fn child_pose(&self, q: &[f64]) -> SpatialTransform {
        let motion = match self.kind {
            JointKind::Revolute => SpatialTransform::rotation_about(&self.axis, q[0]),
            JointKind::Prismatic => SpatialTransform::translation(self.axis * q[0]),
            JointKind::Fixed => SpatialTransform::identity(),
        };
        self.parent_to_joint.compose(&motion)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub index: usize,
    pub inertia: SpatialInertia,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// A rooted tree of links. Link 0 is the root; joint `i` connects
/// `parent(i)` to link `i` for every `i ≥ 1`.
#[derive(Debug, Clone)]
pub struct KinematicTree {
    links: Vec<Link>,
    joints: Vec<Joint>,
    leaf_to_root: Vec<usize>,
    root_to_leaf: Vec<usize>,
    dof_offsets: Vec<usize>,
    dof: usize,
}

impl KinematicTree {
    /// Assemble a tree from links (root at index 0) and per-link joints.
    /// `joints[i - 1]` belongs to link `i`.
    pub fn from_parts(links: Vec<Link>, joints: Vec<Joint>) -> Result<Self, MorphologyError> {
        let k = links.len();
        if k == 0 {
            return Err(MorphologyError::Parse("tree has no links".into()));
        }
        if joints.len() != k - 1 {
            return Err(MorphologyError::Parse(format!(
                "{} links need {} joints, got {}",
                k,
                k - 1,
                joints.len()
            )));
        }
        let roots: Vec<String> =
            links.iter().filter(|l| l.parent.is_none()).map(|l| l.name.clone()).collect();
        if roots.len() != 1 || links[0].parent.is_some() {
            return Err(MorphologyError::MultiRoot(roots));
        }
        for (i, l) in links.iter().enumerate() {
            if l.index != i {
                return Err(MorphologyError::Parse(format!("link `{}` has index {} at slot {}", l.name, l.index, i)));
            }
            if !l.inertia.is_valid() {
                return Err(MorphologyError::MissingInertia(l.name.clone()));
            }
            if let Some(p) = l.parent {
                if p >= k {
                    return Err(MorphologyError::Parse(format!("link `{}` has out-of-range parent", l.name)));
                }
            }
        }
        // every parent chain must reach the root within k steps
        for l in &links {
            let mut cur = l.index;
            let mut steps = 0;
            while let Some(p) = links[cur].parent {
                cur = p;
                steps += 1;
                if steps > k {
                    return Err(MorphologyError::Cycle(l.name.clone()));
                }
            }
        }
        for j in &joints {
            let expected = if j.kind == JointKind::Fixed { 0 } else { 1 };
            if j.dof != expected || (j.actuated && j.dof == 0) {
                return Err(MorphologyError::Parse(format!("joint `{}` has inconsistent dof/actuation", j.name)));
            }
            if (j.axis.norm() - 1.0).abs() > 1e-9 && j.kind != JointKind::Fixed {
                return Err(MorphologyError::BadAxis(j.name.clone()));
            }
        }
        let mut links = links;
        for l in links.iter_mut() {
            l.children.clear();
        }
        for i in 1..k {
            let p = links[i].parent.unwrap();
            links[p].children.push(i);
        }
        for l in links.iter_mut() {
            l.children.sort_unstable();
        }

        let mut root_to_leaf = Vec::with_capacity(k);
        let mut leaf_to_root = Vec::with_capacity(k);
        // iterative DFS: preorder and postorder with ascending siblings
        let mut stack = vec![(0usize, false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                leaf_to_root.push(node);
                continue;
            }
            root_to_leaf.push(node);
            stack.push((node, true));
            for &c in links[node].children.iter().rev() {
                stack.push((c, false));
            }
        }

        let mut dof_offsets = vec![0; k];
        let mut dof = 0;
        for i in 1..k {
            dof_offsets[i] = dof;
            dof += joints[i - 1].dof;
        }
        Ok(Self {
            links,
            joints,
            leaf_to_root,
            root_to_leaf,
            dof_offsets,
            dof,
        })
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, i: usize) -> &Link {
        &self.links[i]
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    /// Joint connecting link `i` to its parent (`None` for the root).
    pub fn joint(&self, i: usize) -> Option<&Joint> {
        if i == 0 {
            None
        } else {
            self.joints.get(i - 1)
        }
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.links[i].parent
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.links[i].children
    }

    pub fn leaf_to_root(&self) -> &[usize] {
        &self.leaf_to_root
    }

    pub fn root_to_leaf(&self) -> &[usize] {
        &self.root_to_leaf
    }

    /// Total number of joint degrees of freedom (length of `q`).
    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Offset of link `i`'s joint coordinates inside `q`.
    pub fn dof_offset(&self, i: usize) -> usize {
        self.dof_offsets[i]
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// Links whose joint has at least one degree of freedom, ascending.
    pub fn moving_links(&self) -> Vec<usize> {
        (1..self.num_links()).filter(|&i| self.joints[i - 1].dof > 0).collect()
    }

    /// Links whose joint is actuated, ascending. This fixes action ordering.
    pub fn actuated_links(&self) -> Vec<usize> {
        (1..self.num_links()).filter(|&i| self.joints[i - 1].actuated).collect()
    }

    pub fn action_dim(&self) -> usize {
        self.actuated_links().iter().map(|&i| self.joints[i - 1].dof).sum()
    }

    /// Is `node` inside the subtree rooted at `root`?
    pub fn in_subtree(&self, node: usize, root: usize) -> bool {
        let mut cur = Some(node);
        while let Some(c) = cur {
            if c == root {
                return true;
            }
            cur = self.links[c].parent;
        }
        false
    }

    pub fn with_link_inertia(&self, i: usize, inertia: SpatialInertia) -> Self {
        let mut out = self.clone();
        out.links[i].inertia = inertia;
        out
    }

    /// Content hash of the canonical native serialization.
    pub fn content_hash(&self) -> String {
        let doc = serialize_native(self);
        let bytes = serde_json::to_vec(&doc).expect("morphology doc serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Same names, topology, joint kinds and axes; inertias and origins
    /// within `tol`.
    pub fn structurally_equal(&self, other: &KinematicTree, tol: f64) -> bool {
        if self.num_links() != other.num_links() {
            return false;
        }
        let links_eq = self.links.iter().zip(&other.links).all(|(a, b)| {
            a.name == b.name
                && a.parent == b.parent
                && a.children == b.children
                && (a.inertia.mass - b.inertia.mass).abs() <= tol
                && (a.inertia.com - b.inertia.com).amax() <= tol
                && (a.inertia.rot_inertia - b.inertia.rot_inertia).amax() <= tol
        });
        let joints_eq = self.joints.iter().zip(&other.joints).all(|(a, b)| {
            a.name == b.name
                && a.kind == b.kind
                && a.dof == b.dof
                && a.actuated == b.actuated
                && (a.axis - b.axis).amax() <= tol
                && (a.parent_to_joint.rotation - b.parent_to_joint.rotation).amax() <= tol
                && (a.parent_to_joint.translation - b.parent_to_joint.translation).amax() <= tol
                && match (a.position_limits, b.position_limits) {
                    (None, None) => true,
                    (Some(x), Some(y)) => (x.0 - y.0).abs() <= tol && (x.1 - y.1).abs() <= tol,
                    _ => false,
                }
        });
        links_eq && joints_eq
    }
}

/// Normalize a joint axis, rejecting degenerate input.
pub(crate) fn normalize_axis(name: &str, axis: [f64; 3]) -> Result<Vec3, MorphologyError> {
    let v = Vec3::new(axis[0], axis[1], axis[2]);
    let n = v.norm();
    if !n.is_finite() || n < 1e-9 {
        return Err(MorphologyError::BadAxis(name.to_string()));
    }
    Ok(v / n)
}


/// Read a morphology file: `.urdf` or `.xml` through the URDF subset,
/// anything else as native JSON.
pub fn load_tree(path: &std::path::Path) -> Result<KinematicTree, MorphologyError> {
    let text = std::fs::read_to_string(path).map_err(|e| MorphologyError::Parse(format!("{}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("urdf") | Some("xml") => parse_urdf_subset(&text, UrdfOptions::default()),
        _ => parse_native(&MorphologyDoc::from_json(&text)?),
    }
}
