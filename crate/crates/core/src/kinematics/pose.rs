use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform: `p_parent = rotation * p_child + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// URDF-style origin: `xyz` translation and extrinsic roll-pitch-yaw.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        Self::new(
            rpy_to_rotation(rpy[0], rpy[1], rpy[2]),
            Vector3::new(xyz[0], xyz[1], xyz[2]),
        )
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// 16 doubles, row-major 4×4 homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 16]) -> Pose {
        let m = Matrix4::from_fn(|r, c| v[r * 4 + c]);
        Pose::from_homogeneous(&m)
    }

    /// Checks `R·Rᵀ = I` and `det R = 1` within `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        err <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn rpy(&self) -> [f64; 3] {
        let (r, p, y) = rotation_to_rpy(&self.rotation);
        [r, p, y]
    }
}

/// Serialized as 16 row-major doubles.
impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 16]>::deserialize(d)?;
        Ok(Pose::from_row_major(&v))
    }
}

/// `R = R_z(yaw) · R_y(pitch) · R_x(roll)` (extrinsic X-Y-Z).
pub fn rpy_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Inverse of [`rpy_to_rotation`]. At gimbal lock (|pitch| = π/2) the roll is
/// set to zero and the remaining rotation is carried by yaw.
pub fn rotation_to_rpy(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let cp = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    if cp < 1e-10 {
        let pitch = sp.signum() * std::f64::consts::FRAC_PI_2;
        // R = [0, ±sin(r∓y)...]: with roll = 0 the yaw is read from the second column.
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        (0.0, pitch, yaw)
    } else {
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let pitch = sp.atan2(cp);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        (roll, pitch, yaw)
    }
}

/// Rotation about a unit `axis` by `angle` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = axis;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * s + kx * kx * (1.0 - c)
}

/// Rotation vector (axis · angle) of `r`.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let s = v.norm();
    let c = (r.trace() - 1.0) * 0.5;
    let angle = s.atan2(c);
    if s > 1e-7 {
        return v * (angle / s);
    }
    if c > 0.0 {
        // near identity: angle ≈ s
        return v;
    }
    // near π: axis from the symmetric part, falls back on nalgebra
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_log(&(a.transpose() * b)).norm()
}
