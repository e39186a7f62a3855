//! URDF kinematics: parsing, forward kinematics and damped-least-squares IK.

mod chain;
mod ik;
mod pose;
mod urdf;

pub use chain::{
    forward_kinematics, EndEffector, GripperSpec, JointKind, JointSpec, JointState, KinematicChain, Link,
    LinkGeometry, LinkPoses, Primitive,
};
pub use ik::{inverse_kinematics, inverse_kinematics_for, numeric_jacobian, pose_residual, IkConfig};
pub use pose::{axis_angle, rotation_distance, rotation_log, rotation_to_rpy, rpy_to_rotation, Pose};
pub use urdf::parse_urdf;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("malformed URDF: {0}")]
    MalformedXml(String),
    #[error("joint graph contains a cycle through link '{0}'")]
    CyclicJointGraph(String),
    #[error("link '{0}' uses mesh geometry; only box, cylinder and sphere are supported")]
    UnsupportedGeometry(String),
    #[error("joint references unknown link '{0}'")]
    MissingLink(String),
    #[error("joint {index} value {value} is outside its limits")]
    JointLimitViolation { index: usize, value: f64 },
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inverse kinematics did not converge (best error {best_error:.3e})")]
    DidNotConverge { best_error: f64 },
    #[error("target at {distance:.3} m exceeds reach {reach:.3} m")]
    UnreachableTarget { distance: f64, reach: f64 },
    #[error("cannot read URDF '{path}': {reason}")]
    Unreadable { path: String, reason: String },
}

/// Loads a URDF from a path, falling back on the bundled fixture of the same
/// file name when the path does not exist. Relative paths resolve against
/// `base` when given.
pub fn load_urdf(spec: &str, base: Option<&std::path::Path>) -> Result<KinematicChain, KinematicsError> {
    let path = match base {
        Some(b) => b.join(spec),
        None => std::path::PathBuf::from(spec),
    };
    match std::fs::read_to_string(&path) {
        Ok(text) => parse_urdf(&text),
        Err(e) => match fixtures::by_name(spec) {
            Some(text) => parse_urdf(text),
            None => Err(KinematicsError::Unreadable {
                path: path.display().to_string(),
                reason: e.to_string(),
            }),
        },
    }
}

/// URDF fixtures shipped with the crate.
pub mod fixtures {
    use super::{parse_urdf, KinematicChain};

    pub const PLANAR2: &str = include_str!("../../fixtures/planar2.urdf");
    pub const FRANKA_TOY: &str = include_str!("../../fixtures/franka_toy.urdf");
    pub const DUALARM_TOY: &str = include_str!("../../fixtures/dualarm_toy.urdf");
    pub const GANTRY_TOY: &str = include_str!("../../fixtures/gantry_toy.urdf");

    /// Looks a bundled fixture up by file name (`planar2.urdf`, ...).
    pub fn by_name(name: &str) -> Option<&'static str> {
        let base = name.rsplit('/').next().unwrap_or(name);
        match base.trim_end_matches(".urdf") {
            "planar2" => Some(PLANAR2),
            "franka_toy" => Some(FRANKA_TOY),
            "dualarm_toy" => Some(DUALARM_TOY),
            "gantry_toy" => Some(GANTRY_TOY),
            _ => None,
        }
    }

    pub fn planar2() -> KinematicChain {
        parse_urdf(PLANAR2).expect("bundled planar2.urdf parses")
    }

    pub fn franka_toy() -> KinematicChain {
        parse_urdf(FRANKA_TOY).expect("bundled franka_toy.urdf parses")
    }

    pub fn dualarm_toy() -> KinematicChain {
        parse_urdf(DUALARM_TOY).expect("bundled dualarm_toy.urdf parses")
    }

    pub fn gantry_toy() -> KinematicChain {
        parse_urdf(GANTRY_TOY).expect("bundled gantry_toy.urdf parses")
    }
}
