//! URDF subset reader.
//!
//! Supported: `<link>` with `<collision>`/`<visual>` box, cylinder and sphere
//! geometry; `<joint>` of type revolute, continuous, prismatic or fixed.
//! Collision geometry is preferred over visual geometry when both exist.
//!
//! One non-standard element is recognised (and ignored by other URDF tools):
//!
//! ```xml
//! <end_effector name="tool" link="link2" xyz="1 0 0" rpy="0 0 0">
//!   <gripper max_gap="0.3" finger_length="0.25" finger_width="0.08" finger_depth="0.08"/>
//! </end_effector>
//! ```

use std::collections::HashMap;

use nalgebra::Vector3;
use roxmltree::{Document, Node};

use super::chain::{
    EndEffector, GripperSpec, JointKind, JointSpec, KinematicChain, Link, LinkGeometry, Primitive,
};
use super::pose::Pose;
use super::KinematicsError;

pub fn parse_urdf(document: &str) -> Result<KinematicChain, KinematicsError> {
    let doc = Document::parse(document).map_err(|e| KinematicsError::MalformedXml(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(KinematicsError::MalformedXml(format!(
            "root element is <{}>, expected <robot>",
            robot.tag_name().name()
        )));
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();

    let mut links = Vec::new();
    for node in robot.children().filter(|n| n.has_tag_name("link")) {
        links.push(parse_link(node)?);
    }
    let index: HashMap<&str, usize> = links
        .iter()
        .enumerate()
        .map(|(i, l)| (l.name.as_str(), i))
        .collect();

    let mut raw_joints = Vec::new();
    for node in robot.children().filter(|n| n.has_tag_name("joint")) {
        raw_joints.push(parse_joint(node)?);
    }

    let mut parent_of: Vec<Option<usize>> = vec![None; links.len()];
    let mut edges = Vec::with_capacity(raw_joints.len());
    for joint in &raw_joints {
        let p = *index
            .get(joint.parent_link.as_str())
            .ok_or_else(|| KinematicsError::MissingLink(joint.parent_link.clone()))?;
        let c = *index
            .get(joint.child_link.as_str())
            .ok_or_else(|| KinematicsError::MissingLink(joint.child_link.clone()))?;
        if parent_of[c].is_some() {
            return Err(KinematicsError::MalformedXml(format!(
                "link '{}' is the child of more than one joint",
                joint.child_link
            )));
        }
        parent_of[c] = Some(p);
        edges.push((p, c));
    }

    // A child that is its own ancestor never reaches a root.
    for start in 0..links.len() {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parent_of[cur] {
            cur = p;
            steps += 1;
            if steps > links.len() {
                return Err(KinematicsError::CyclicJointGraph(links[start].name.clone()));
            }
        }
    }
    let roots: Vec<usize> = (0..links.len()).filter(|&i| parent_of[i].is_none()).collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return Err(KinematicsError::MalformedXml("robot has no links".into())),
        _ => {
            return Err(KinematicsError::MalformedXml(format!(
                "joint graph has {} roots",
                roots.len()
            )))
        }
    };

    // Topological order by depth, stable in document order.
    let depth = |mut l: usize| {
        let mut d = 0;
        while let Some(p) = parent_of[l] {
            l = p;
            d += 1;
        }
        d
    };
    let mut order: Vec<usize> = (0..raw_joints.len()).collect();
    order.sort_by_key(|&j| depth(edges[j].1));
    let joints: Vec<JointSpec> = order.iter().map(|&j| raw_joints[j].clone()).collect();
    let joint_links: Vec<(usize, usize)> = order.iter().map(|&j| edges[j]).collect();
    let actuated = joints
        .iter()
        .enumerate()
        .filter(|(_, j)| j.kind != JointKind::Fixed)
        .map(|(i, _)| i)
        .collect();

    let mut end_effectors = Vec::new();
    for node in robot.children().filter(|n| n.has_tag_name("end_effector")) {
        let ee = parse_end_effector(node)?;
        if !index.contains_key(ee.link.as_str()) {
            return Err(KinematicsError::MissingLink(ee.link));
        }
        end_effectors.push(ee);
    }

    Ok(KinematicChain {
        name,
        links,
        joints,
        end_effectors,
        root,
        joint_links,
        actuated,
    })
}

fn attr<'a>(node: Node<'a, '_>, name: &str) -> Result<&'a str, KinematicsError> {
    node.attribute(name).ok_or_else(|| {
        KinematicsError::MalformedXml(format!(
            "<{}> is missing attribute '{}'",
            node.tag_name().name(),
            name
        ))
    })
}

fn parse_f64(s: &str) -> Result<f64, KinematicsError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| KinematicsError::MalformedXml(format!("'{s}' is not a number")))
}

fn parse_vec3(s: &str) -> Result<[f64; 3], KinematicsError> {
    let parts: Vec<f64> = s
        .split_whitespace()
        .map(parse_f64)
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(KinematicsError::MalformedXml(format!("'{s}' is not a 3-vector"))),
    }
}

fn parse_origin(node: Node) -> Result<Pose, KinematicsError> {
    match node.children().find(|n| n.has_tag_name("origin")) {
        Some(o) => origin_attrs(o),
        None => Ok(Pose::identity()),
    }
}

fn origin_attrs(o: Node) -> Result<Pose, KinematicsError> {
    let xyz = o.attribute("xyz").map(parse_vec3).transpose()?.unwrap_or([0.0; 3]);
    let rpy = o.attribute("rpy").map(parse_vec3).transpose()?.unwrap_or([0.0; 3]);
    Ok(Pose::from_xyz_rpy(xyz, rpy))
}

fn positive(v: f64, what: &str) -> Result<f64, KinematicsError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(KinematicsError::MalformedXml(format!("{what} must be positive, got {v}")))
    }
}

fn parse_geometry(elem: Node, link: &str) -> Result<Option<LinkGeometry>, KinematicsError> {
    let origin = parse_origin(elem)?;
    let Some(geometry) = elem.children().find(|n| n.has_tag_name("geometry")) else {
        return Ok(None);
    };
    for shape in geometry.children().filter(|n| n.is_element()) {
        let primitive = match shape.tag_name().name() {
            "box" => {
                let s = parse_vec3(attr(shape, "size")?)?;
                for v in s {
                    positive(v, "box size")?;
                }
                Primitive::Box {
                    half_extents: Vector3::new(s[0], s[1], s[2]) * 0.5,
                }
            }
            "cylinder" => Primitive::Cylinder {
                radius: positive(parse_f64(attr(shape, "radius")?)?, "cylinder radius")?,
                length: positive(parse_f64(attr(shape, "length")?)?, "cylinder length")?,
            },
            "sphere" => Primitive::Sphere {
                radius: positive(parse_f64(attr(shape, "radius")?)?, "sphere radius")?,
            },
            "mesh" => return Err(KinematicsError::UnsupportedGeometry(link.to_string())),
            _ => continue,
        };
        return Ok(Some(LinkGeometry { primitive, origin }));
    }
    Ok(None)
}

fn parse_link(node: Node) -> Result<Link, KinematicsError> {
    let name = attr(node, "name")?.to_string();
    let mut collision = Vec::new();
    let mut visual = Vec::new();
    for child in node.children().filter(|n| n.is_element()) {
        let target = match child.tag_name().name() {
            "collision" => &mut collision,
            "visual" => &mut visual,
            _ => continue,
        };
        if let Some(g) = parse_geometry(child, &name)? {
            target.push(g);
        }
    }
    let geometry = if collision.is_empty() { visual } else { collision };
    Ok(Link { name, geometry })
}

fn parse_joint(node: Node) -> Result<JointSpec, KinematicsError> {
    let name = attr(node, "name")?.to_string();
    let ty = attr(node, "type")?;
    let kind = match ty {
        "revolute" | "continuous" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "fixed" => JointKind::Fixed,
        other => {
            return Err(KinematicsError::MalformedXml(format!(
                "joint '{name}' has unsupported type '{other}'"
            )))
        }
    };
    let parent_link = attr(
        node.children()
            .find(|n| n.has_tag_name("parent"))
            .ok_or_else(|| KinematicsError::MalformedXml(format!("joint '{name}' has no <parent>")))?,
        "link",
    )?
    .to_string();
    let child_link = attr(
        node.children()
            .find(|n| n.has_tag_name("child"))
            .ok_or_else(|| KinematicsError::MalformedXml(format!("joint '{name}' has no <child>")))?,
        "link",
    )?
    .to_string();
    let origin = parse_origin(node)?;
    let axis = match node.children().find(|n| n.has_tag_name("axis")) {
        Some(a) => {
            let v = parse_vec3(attr(a, "xyz")?)?;
            Vector3::new(v[0], v[1], v[2])
        }
        None => Vector3::x(),
    };
    let axis = if kind == JointKind::Fixed {
        axis
    } else {
        let n = axis.norm();
        if n < 1e-12 {
            return Err(KinematicsError::MalformedXml(format!("joint '{name}' has a zero axis")));
        }
        axis / n
    };
    let (lower, upper) = match (kind, ty, node.children().find(|n| n.has_tag_name("limit"))) {
        (JointKind::Fixed, _, _) => (0.0, 0.0),
        (_, "continuous", _) => (f64::NEG_INFINITY, f64::INFINITY),
        (_, _, Some(l)) => (
            l.attribute("lower").map(parse_f64).transpose()?.unwrap_or(0.0),
            l.attribute("upper").map(parse_f64).transpose()?.unwrap_or(0.0),
        ),
        (_, _, None) => {
            return Err(KinematicsError::MalformedXml(format!("joint '{name}' has no <limit>")))
        }
    };
    if lower > upper {
        return Err(KinematicsError::MalformedXml(format!(
            "joint '{name}' has lower limit {lower} above upper limit {upper}"
        )));
    }
    Ok(JointSpec {
        name,
        kind,
        axis,
        origin,
        lower,
        upper,
        parent_link,
        child_link,
    })
}

fn parse_end_effector(node: Node) -> Result<EndEffector, KinematicsError> {
    let gripper = match node.children().find(|n| n.has_tag_name("gripper")) {
        Some(g) => {
            let get = |k: &str| -> Result<f64, KinematicsError> { positive(parse_f64(attr(g, k)?)?, k) };
            Some(GripperSpec {
                max_gap: get("max_gap")?,
                finger_length: get("finger_length")?,
                finger_width: get("finger_width")?,
                finger_depth: get("finger_depth")?,
            })
        }
        None => None,
    };
    Ok(EndEffector {
        name: node.attribute("name").unwrap_or("tool").to_string(),
        link: attr(node, "link")?.to_string(),
        offset: origin_attrs(node)?,
        gripper,
    })
}
