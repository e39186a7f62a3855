use nalgebra::Vector3;

use super::camera::{CameraModel, Z_NEAR};
use super::mesh::Triangle;

/// Depth buffer plus the id of the nearest triangle owner at each pixel.
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub owner: Vec<u32>,
}

pub const NO_OWNER: u32 = u32::MAX;

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width * height],
            owner: vec![NO_OWNER; width * height],
        }
    }

    /// Rasterizes a world-frame triangle. Pixels whose centers lie inside the
    /// projected triangle (edges inclusive) take `owner` when they are nearer
    /// than the current depth. Triangles with any vertex at or behind the near
    /// plane are skipped.
    pub fn draw(&mut self, cam: &CameraModel, tri: &Triangle, owner: u32) {
        let p = [cam.to_camera(&tri[0]), cam.to_camera(&tri[1]), cam.to_camera(&tri[2])];
        if p.iter().any(|v| v.z <= Z_NEAR) {
            return;
        }
        let s: [(f64, f64); 3] = p.map(|v| (cam.fx * v.x / v.z + cam.cx, cam.fy * v.y / v.z + cam.cy));
        let area = edge(s[0], s[1], s[2]);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        let (min_u, max_u) = min_max(s.map(|q| q.0));
        let (min_v, max_v) = min_max(s.map(|q| q.1));
        let Some((x0, x1)) = pixel_span(min_u, max_u, self.width) else {
            return;
        };
        let Some((y0, y1)) = pixel_span(min_v, max_v, self.height) else {
            return;
        };
        let inv_z = p.map(|v| 1.0 / v.z);
        for y in y0..=y1 {
            let pv = y as f64 + 0.5;
            for x in x0..=x1 {
                let pc = (x as f64 + 0.5, pv);
                let w0 = edge(s[1], s[2], pc) / area;
                let w1 = edge(s[2], s[0], pc) / area;
                let w2 = edge(s[0], s[1], pc) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
                let i = y * self.width + x;
                if z < self.depth[i] {
                    self.depth[i] = z;
                    self.owner[i] = owner;
                }
            }
        }
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn min_max(v: [f64; 3]) -> (f64, f64) {
    (v[0].min(v[1]).min(v[2]), v[0].max(v[1]).max(v[2]))
}

/// Pixel indices whose centers `i + 0.5` fall in `[lo, hi]`, clipped to `[0, n)`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if first > last || !first.is_finite() || !last.is_finite() {
        return None;
    }
    Some((first as usize, last as usize))
}

/// Unit normal of a world-frame triangle (zero for degenerate triangles).
pub fn face_normal(tri: &Triangle) -> Vector3<f64> {
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        n
    }
}
