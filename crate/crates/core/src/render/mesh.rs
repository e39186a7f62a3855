use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::kinematics::{Pose, Primitive};

pub type Triangle = [Vector3<f64>; 3];

pub const SPHERE_SLICES: usize = 24;
pub const SPHERE_STACKS: usize = 12;
pub const CYLINDER_SIDES: usize = 24;

/// Fixed tessellation of a primitive in its own frame. Cylinders run along
/// local z and are centered on the origin, as in URDF.
pub fn tessellate(primitive: &Primitive) -> Vec<Triangle> {
    match *primitive {
        Primitive::Box { half_extents } => box_triangles(half_extents),
        Primitive::Cylinder { radius, length } => cylinder_triangles(radius, length),
        Primitive::Sphere { radius } => sphere_triangles(radius),
    }
}

pub fn tessellate_posed(primitive: &Primitive, pose: &Pose) -> Vec<Triangle> {
    let mut tris = tessellate(primitive);
    for tri in &mut tris {
        for v in tri.iter_mut() {
            *v = pose.transform_point(v);
        }
    }
    tris
}

fn box_triangles(h: Vector3<f64>) -> Vec<Triangle> {
    let c = |i: usize| {
        Vector3::new(
            if i & 1 == 0 { -h.x } else { h.x },
            if i & 2 == 0 { -h.y } else { h.y },
            if i & 4 == 0 { -h.z } else { h.z },
        )
    };
    // Outward-facing quads as corner indices.
    const FACES: [[usize; 4]; 6] = [
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
    ];
    let mut out = Vec::with_capacity(12);
    for f in FACES {
        out.push([c(f[0]), c(f[1]), c(f[2])]);
        out.push([c(f[0]), c(f[2]), c(f[3])]);
    }
    out
}

fn cylinder_triangles(r: f64, len: f64) -> Vec<Triangle> {
    let hz = len / 2.0;
    let ring = |k: usize, z: f64| {
        let a = 2.0 * PI * k as f64 / CYLINDER_SIDES as f64;
        Vector3::new(r * a.cos(), r * a.sin(), z)
    };
    let top = Vector3::new(0.0, 0.0, hz);
    let bottom = Vector3::new(0.0, 0.0, -hz);
    let mut out = Vec::with_capacity(4 * CYLINDER_SIDES);
    for k in 0..CYLINDER_SIDES {
        let k1 = (k + 1) % CYLINDER_SIDES;
        let (b0, b1, t0, t1) = (ring(k, -hz), ring(k1, -hz), ring(k, hz), ring(k1, hz));
        out.push([b0, b1, t1]);
        out.push([b0, t1, t0]);
        out.push([top, t0, t1]);
        out.push([bottom, b1, b0]);
    }
    out
}

fn sphere_triangles(r: f64) -> Vec<Triangle> {
    let vert = |i: usize, j: usize| {
        let theta = PI * i as f64 / SPHERE_STACKS as f64;
        let phi = 2.0 * PI * (j % SPHERE_SLICES) as f64 / SPHERE_SLICES as f64;
        Vector3::new(r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin(), r * theta.cos())
    };
    let mut out = Vec::with_capacity(2 * SPHERE_SLICES * (SPHERE_STACKS - 1));
    for i in 0..SPHERE_STACKS {
        for j in 0..SPHERE_SLICES {
            let (a, b, c, d) = (vert(i, j), vert(i, j + 1), vert(i + 1, j), vert(i + 1, j + 1));
            if i != 0 {
                out.push([a, c, b]);
            }
            if i != SPHERE_STACKS - 1 {
                out.push([b, c, d]);
            }
        }
    }
    out
}
