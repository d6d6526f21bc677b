//! URDF subset: `<robot>`, `<link><inertial>` and revolute / prismatic /
//! fixed joints. Light fixed-jointed links without actuated descendants
//! (cameras, IMUs, frames) are folded into their parent.

use std::collections::HashMap;

use roxmltree::{Document, Node};

use super::native::{JointDoc, LimitsDoc, LinkDoc, MorphologyDoc, OriginDoc};
use super::{parse_native, JointKind, KinematicTree, MorphologyError};
use crate::spatial::{Mat3, SpatialInertia, SpatialTransform, Vec3};

pub const DEFAULT_MERGE_MASS_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct UrdfOptions {
    pub merge_mass_threshold: f64,
}

impl Default for UrdfOptions {
    fn default() -> Self {
        Self {
            merge_mass_threshold: DEFAULT_MERGE_MASS_THRESHOLD,
        }
    }
}

struct RawLink {
    name: String,
    inertia: Option<SpatialInertia>,
}

struct RawJoint {
    name: String,
    kind: JointKind,
    parent: String,
    child: String,
    origin: SpatialTransform,
    axis: [f64; 3],
    limits: Option<LimitsDoc>,
}

fn parse_floats<const N: usize>(node: Node, attr: &str, default: [f64; N]) -> Result<[f64; N], MorphologyError> {
    let Some(text) = node.attribute(attr) else {
        return Ok(default);
    };
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| MorphologyError::Parse(format!("attribute `{attr}`: {e}")))?;
    vals.try_into()
        .map_err(|_| MorphologyError::Parse(format!("attribute `{attr}` needs {N} numbers")))
}

fn parse_f64(node: Node, attr: &str) -> Result<f64, MorphologyError> {
    node.attribute(attr)
        .ok_or_else(|| MorphologyError::Parse(format!("<{}> missing `{attr}`", node.tag_name().name())))?
        .trim()
        .parse()
        .map_err(|e| MorphologyError::Parse(format!("attribute `{attr}`: {e}")))
}

fn child<'a, 'i>(node: Node<'a, 'i>, tag: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.has_tag_name(tag))
}

fn parse_origin(node: Node) -> Result<SpatialTransform, MorphologyError> {
    match child(node, "origin") {
        Some(o) => Ok(SpatialTransform::from_xyz_rpy(
            parse_floats(o, "xyz", [0.0; 3])?,
            parse_floats(o, "rpy", [0.0; 3])?,
        )),
        None => Ok(SpatialTransform::identity()),
    }
}

fn parse_inertial(link: Node) -> Result<Option<SpatialInertia>, MorphologyError> {
    let Some(inertial) = child(link, "inertial") else {
        return Ok(None);
    };
    let frame = parse_origin(inertial)?;
    let mass = match child(inertial, "mass") {
        Some(m) => parse_f64(m, "value")?,
        None => return Ok(None),
    };
    let ic = match child(inertial, "inertia") {
        Some(i) => {
            let g = |a| parse_f64(i, a);
            let (xx, yy, zz) = (g("ixx")?, g("iyy")?, g("izz")?);
            let (xy, xz, yz) = (g("ixy").unwrap_or(0.0), g("ixz").unwrap_or(0.0), g("iyz").unwrap_or(0.0));
            Mat3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
        }
        None => Mat3::zeros(),
    };
    if mass <= 0.0 {
        return Ok(None);
    }
    let ic_link = frame.rotation * ic * frame.rotation.transpose();
    Ok(Some(SpatialInertia::from_com_inertia(mass, frame.translation, ic_link)))
}

/// Parse the supported URDF subset into a kinematic tree.
pub fn parse_urdf_subset(xml: &str, options: UrdfOptions) -> Result<KinematicTree, MorphologyError> {
    let doc = Document::parse(xml).map_err(|e| MorphologyError::Parse(e.to_string()))?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(MorphologyError::Parse("root element must be <robot>".into()));
    }

    let mut links = Vec::new();
    for node in robot.children().filter(|c| c.is_element() && c.has_tag_name("link")) {
        let name = node
            .attribute("name")
            .ok_or_else(|| MorphologyError::Parse("<link> without name".into()))?;
        links.push(RawLink {
            name: name.to_string(),
            inertia: parse_inertial(node)?,
        });
    }

    let mut joints = Vec::new();
    for node in robot.children().filter(|c| c.is_element() && c.has_tag_name("joint")) {
        let name = node
            .attribute("name")
            .ok_or_else(|| MorphologyError::Parse("<joint> without name".into()))?
            .to_string();
        let ty = node.attribute("type").unwrap_or("");
        let kind = match ty {
            "revolute" => JointKind::Revolute,
            "prismatic" => JointKind::Prismatic,
            "fixed" => JointKind::Fixed,
            other => {
                return Err(MorphologyError::UnsupportedJoint {
                    name,
                    kind: other.to_string(),
                })
            }
        };
        let link_ref = |tag: &str| -> Result<String, MorphologyError> {
            child(node, tag)
                .and_then(|n| n.attribute("link"))
                .map(str::to_string)
                .ok_or_else(|| MorphologyError::Parse(format!("joint `{name}` missing <{tag}>")))
        };
        let limits = match (kind, child(node, "limit")) {
            (JointKind::Fixed, _) | (_, None) => None,
            (_, Some(l)) => match (l.attribute("lower"), l.attribute("upper")) {
                (Some(_), Some(_)) => Some(LimitsDoc {
                    lower: parse_f64(l, "lower")?,
                    upper: parse_f64(l, "upper")?,
                }),
                _ => None,
            },
        };
        joints.push(RawJoint {
            parent: link_ref("parent")?,
            child: link_ref("child")?,
            origin: parse_origin(node)?,
            axis: match child(node, "axis") {
                Some(a) => parse_floats(a, "xyz", [1.0, 0.0, 0.0])?,
                None => [1.0, 0.0, 0.0],
            },
            name,
            kind,
            limits,
        });
    }

    merge_light_fixed_links(&mut links, &mut joints, options.merge_mass_threshold)?;

    let link_docs = links
        .iter()
        .map(|l| {
            let (mass, com, ic) = match &l.inertia {
                Some(i) => (i.mass, i.com, i.com_inertia()),
                None => (0.0, Vec3::zeros(), Mat3::zeros()),
            };
            LinkDoc {
                name: l.name.clone(),
                mass,
                com: [com.x, com.y, com.z],
                inertia: [ic[(0, 0)], ic[(1, 1)], ic[(2, 2)], ic[(0, 1)], ic[(0, 2)], ic[(1, 2)]],
            }
        })
        .collect();
    let joint_docs = joints
        .iter()
        .map(|j| {
            let (r, p, y) = nalgebra::Rotation3::from_matrix_unchecked(j.origin.rotation).euler_angles();
            let t = j.origin.translation;
            JointDoc {
                name: j.name.clone(),
                parent: j.parent.clone(),
                child: j.child.clone(),
                kind: j.kind,
                axis: j.axis,
                origin: OriginDoc {
                    xyz: [t.x, t.y, t.z],
                    rpy: [r, p, y],
                },
                limits: j.limits,
                actuated: j.kind != JointKind::Fixed,
            }
        })
        .collect();
    parse_native(&MorphologyDoc {
        links: link_docs,
        joints: joint_docs,
    })
}

fn merge_light_fixed_links(
    links: &mut Vec<RawLink>,
    joints: &mut Vec<RawJoint>,
    threshold: f64,
) -> Result<(), MorphologyError> {
    loop {
        let parent_joint: HashMap<&str, usize> =
            joints.iter().enumerate().map(|(i, j)| (j.child.as_str(), i)).collect();
        let has_actuated_descendant = |name: &str| -> bool {
            // depth-first over child joints; bounded by the joint count to
            // stay finite on malformed (cyclic) input
            let mut stack = vec![name.to_string()];
            let mut visited = 0;
            while let Some(n) = stack.pop() {
                visited += 1;
                if visited > joints.len() + 1 {
                    return true;
                }
                for j in joints.iter().filter(|j| j.parent == n) {
                    if j.kind != JointKind::Fixed {
                        return true;
                    }
                    stack.push(j.child.clone());
                }
            }
            false
        };
        let candidate = links.iter().position(|l| {
            let mass = l.inertia.map_or(0.0, |i| i.mass);
            parent_joint
                .get(l.name.as_str())
                .is_some_and(|&ji| joints[ji].kind == JointKind::Fixed)
                && mass < threshold
                && !has_actuated_descendant(&l.name)
        });
        let Some(li) = candidate else {
            return Ok(());
        };
        let ji = parent_joint[links[li].name.as_str()];
        let removed_joint = joints.remove(ji);
        let removed_link = links.remove(li);
        if let Some(parent) = links.iter_mut().find(|l| l.name == removed_joint.parent) {
            if let Some(ci) = removed_link.inertia {
                let moved = ci.transformed(&removed_joint.origin);
                parent.inertia = Some(match parent.inertia {
                    Some(pi) => pi.combined(&moved),
                    None => moved,
                });
            }
        }
        for j in joints.iter_mut().filter(|j| j.parent == removed_link.name) {
            j.parent = removed_joint.parent.clone();
            j.origin = removed_joint.origin.compose(&j.origin);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::native::{parse_native, MorphologyDoc};

    const DOUBLE_PENDULUM_URDF: &str = r#"
<robot name="double_pendulum">
  <link name="base">
    <inertial><mass value="1.0"/><inertia ixx="0.01" iyy="0.01" izz="0.01" ixy="0" ixz="0" iyz="0"/></inertial>
  </link>
  <link name="upper">
    <inertial>
      <origin xyz="0 0 0.5" rpy="0 0 0"/>
      <mass value="1.0"/>
      <inertia ixx="0.083333" iyy="0.083333" izz="0.0001" ixy="0" ixz="0" iyz="0"/>
    </inertial>
  </link>
  <link name="lower">
    <inertial>
      <origin xyz="0 0 0.5" rpy="0 0 0"/>
      <mass value="1.0"/>
      <inertia ixx="0.083333" iyy="0.083333" izz="0.0001" ixy="0" ixz="0" iyz="0"/>
    </inertial>
  </link>
  <joint name="shoulder" type="revolute">
    <parent link="base"/><child link="upper"/>
    <origin xyz="0 0 0" rpy="0 0 0"/><axis xyz="0 1 0"/>
    <limit lower="-3.14" upper="3.14" effort="10" velocity="10"/>
  </joint>
  <joint name="elbow" type="revolute">
    <parent link="upper"/><child link="lower"/>
    <origin xyz="0 0 1.0" rpy="0 0 0"/><axis xyz="0 1 0"/>
    <limit lower="-3.14" upper="3.14" effort="10" velocity="10"/>
  </joint>
</robot>"#;

    const DOUBLE_PENDULUM_NATIVE: &str = r#"{
  "links": [
    {"name": "base", "mass": 1.0, "com": [0, 0, 0], "inertia": [0.01, 0.01, 0.01, 0, 0, 0]},
    {"name": "upper", "mass": 1.0, "com": [0, 0, 0.5], "inertia": [0.083333, 0.083333, 0.0001, 0, 0, 0]},
    {"name": "lower", "mass": 1.0, "com": [0, 0, 0.5], "inertia": [0.083333, 0.083333, 0.0001, 0, 0, 0]}
  ],
  "joints": [
    {"name": "shoulder", "parent": "base", "child": "upper", "kind": "revolute", "axis": [0, 1, 0],
     "origin": {"xyz": [0, 0, 0], "rpy": [0, 0, 0]}, "limits": {"lower": -3.14, "upper": 3.14}, "actuated": true},
    {"name": "elbow", "parent": "upper", "child": "lower", "kind": "revolute", "axis": [0, 1, 0],
     "origin": {"xyz": [0, 0, 1.0], "rpy": [0, 0, 0]}, "limits": {"lower": -3.14, "upper": 3.14}, "actuated": true}
  ]
}"#;

    #[test]
    fn urdf_matches_native_document() {
        let a = parse_urdf_subset(DOUBLE_PENDULUM_URDF, UrdfOptions::default()).unwrap();
        let b = parse_native(&MorphologyDoc::from_json(DOUBLE_PENDULUM_NATIVE).unwrap()).unwrap();
        assert!(a.structurally_equal(&b, 1e-12));
    }

    #[test]
    fn continuous_joint_is_rejected_by_name() {
        let xml = DOUBLE_PENDULUM_URDF.replace(r#"name="elbow" type="revolute""#, r#"name="elbow" type="continuous""#);
        match parse_urdf_subset(&xml, UrdfOptions::default()) {
            Err(MorphologyError::UnsupportedJoint { name, kind }) => {
                assert_eq!(name, "elbow");
                assert_eq!(kind, "continuous");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn floating_joint_is_rejected() {
        let xml = DOUBLE_PENDULUM_URDF.replace(r#"name="shoulder" type="revolute""#, r#"name="shoulder" type="floating""#);
        assert!(matches!(
            parse_urdf_subset(&xml, UrdfOptions::default()),
            Err(MorphologyError::UnsupportedJoint { .. })
        ));
    }

    #[test]
    fn malformed_xml_is_parse_error() {
        assert!(matches!(
            parse_urdf_subset("<robot><link></robot>", UrdfOptions::default()),
            Err(MorphologyError::Parse(_))
        ));
    }

    #[test]
    fn light_camera_link_is_merged() {
        let camera = r#"
  <link name="camera">
    <inertial><origin xyz="0.05 0.02 0.1" rpy="0.3 0 0"/><mass value="1e-6"/>
      <inertia ixx="1e-9" iyy="1e-9" izz="1e-9" ixy="0" ixz="0" iyz="0"/></inertial>
  </link>
  <link name="imu_frame"/>
  <joint name="camera_mount" type="fixed">
    <parent link="lower"/><child link="camera"/><origin xyz="0 0 1.0" rpy="0 0.2 0"/>
  </joint>
  <joint name="imu_mount" type="fixed">
    <parent link="camera"/><child link="imu_frame"/><origin xyz="0.1 0 0" rpy="0 0 0"/>
  </joint>
</robot>"#;
        let xml = DOUBLE_PENDULUM_URDF.replace("</robot>", camera);
        let with_cam = parse_urdf_subset(&xml, UrdfOptions::default()).unwrap();
        let plain = parse_urdf_subset(DOUBLE_PENDULUM_URDF, UrdfOptions::default()).unwrap();
        assert_eq!(with_cam.num_links(), 3);
        assert!(with_cam.link_index("camera").is_none());

        let lower = with_cam.link_index("lower").unwrap();
        let merged = with_cam.link(lower).inertia;
        let original = plain.link(lower).inertia;
        assert!((merged.mass - original.mass).abs() <= 1e-6);

        // oracle: dense 6x6 addition of the camera inertia moved into `lower`
        let cam_pose = SpatialTransform::from_xyz_rpy([0.0, 0.0, 1.0], [0.0, 0.2, 0.0]);
        let cam_frame = SpatialTransform::from_xyz_rpy([0.05, 0.02, 0.1], [0.3, 0.0, 0.0]);
        let ic = cam_frame.rotation * Mat3::identity() * 1e-9 * cam_frame.rotation.transpose();
        let cam = SpatialInertia::from_com_inertia(1e-6, cam_frame.translation, ic);
        let oracle = original.to_matrix() + cam_pose.transform_inertia(&cam.to_matrix());
        assert!((merged.to_matrix() - oracle).amax() < 1e-12);
    }

    #[test]
    fn heavy_fixed_link_is_kept() {
        let payload = r#"
  <link name="payload">
    <inertial><mass value="0.5"/><inertia ixx="1e-3" iyy="1e-3" izz="1e-3" ixy="0" ixz="0" iyz="0"/></inertial>
  </link>
  <joint name="payload_mount" type="fixed">
    <parent link="lower"/><child link="payload"/><origin xyz="0 0 1.0" rpy="0 0 0"/>
  </joint>
</robot>"#;
        let xml = DOUBLE_PENDULUM_URDF.replace("</robot>", payload);
        let tree = parse_urdf_subset(&xml, UrdfOptions::default()).unwrap();
        assert_eq!(tree.num_links(), 4);
        let p = tree.link_index("payload").unwrap();
        assert_eq!(tree.joint(p).unwrap().dof, 0);
        assert!(!tree.joint(p).unwrap().actuated);
        assert_eq!(tree.action_dim(), 2);
    }
}
