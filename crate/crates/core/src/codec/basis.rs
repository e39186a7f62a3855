//! The two fixed orthonormal block bases.
//!
//! Every vector is a tensor product of a temporal, a channel and a spatial
//! factor, each unit-norm; products whose factors are orthogonal in at least
//! one slot are orthogonal, which is how the sets below are built.
//!
//! First frame (8×8×3 = 192 values):
//! - 0..3: per-channel block mean
//! - 3..12: per-channel Haar x, y, xy (channel-major)
//! - 12..16: luma horizontal Haar inside each 4×4 quadrant
//!
//! Group of four frames (4×8×8×3 = 768 values):
//! - 0..12: per-frame per-channel mean (frame-major)
//! - 12..15: group-mean luma Haar x, y, xy
//! - 15: luma Haar x of (first two frames − last two frames)

use std::sync::OnceLock;

pub const BLOCK: usize = 8;
pub const GROUP: usize = 4;
pub const CHANNELS: usize = 16;
pub const FIRST_LEN: usize = BLOCK * BLOCK * 3;
pub const GROUP_LEN: usize = GROUP * FIRST_LEN;

enum Spatial {
    Mean,
    HaarX,
    HaarY,
    HaarXY,
    /// Horizontal Haar confined to quadrant `q` (row-major 2×2).
    LocalX(usize),
}

fn spatial(p: &Spatial, x: usize, y: usize) -> f64 {
    let sx = if x < BLOCK / 2 { 1.0 } else { -1.0 };
    let sy = if y < BLOCK / 2 { 1.0 } else { -1.0 };
    let n = 1.0 / BLOCK as f64;
    match *p {
        Spatial::Mean => n,
        Spatial::HaarX => sx * n,
        Spatial::HaarY => sy * n,
        Spatial::HaarXY => sx * sy * n,
        Spatial::LocalX(q) => {
            let (qx, qy) = (q % 2, q / 2);
            if x / 4 != qx || y / 4 != qy {
                0.0
            } else if x % 4 < 2 {
                0.25
            } else {
                -0.25
            }
        }
    }
}

fn channel(c: Option<usize>, ch: usize) -> f64 {
    match c {
        Some(k) => (k == ch) as u8 as f64,
        None => 1.0 / 3f64.sqrt(),
    }
}

/// Index of (frame, y, x, channel) inside a block vector.
pub fn offset(frame: usize, y: usize, x: usize, ch: usize) -> usize {
    ((frame * BLOCK + y) * BLOCK + x) * 3 + ch
}

fn build(frames: usize, factor: impl Fn(usize, usize, usize, usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..CHANNELS)
        .map(|k| {
            let mut v = vec![0.0; frames * FIRST_LEN];
            for f in 0..frames {
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        for ch in 0..3 {
                            v[offset(f, y, x, ch)] = factor(k, f, y, x, ch);
                        }
                    }
                }
            }
            v
        })
        .collect()
}

fn first_basis() -> Vec<Vec<f64>> {
    build(1, |k, _, y, x, ch| match k {
        0..=2 => channel(Some(k), ch) * spatial(&Spatial::Mean, x, y),
        3..=11 => {
            let (c, p) = ((k - 3) / 3, (k - 3) % 3);
            let pat = [Spatial::HaarX, Spatial::HaarY, Spatial::HaarXY];
            channel(Some(c), ch) * spatial(&pat[p], x, y)
        }
        _ => channel(None, ch) * spatial(&Spatial::LocalX(k - 12), x, y),
    })
}

fn group_basis() -> Vec<Vec<f64>> {
    build(GROUP, |k, f, y, x, ch| match k {
        0..=11 => {
            let (frame, c) = (k / 3, k % 3);
            (f == frame) as u8 as f64 * channel(Some(c), ch) * spatial(&Spatial::Mean, x, y)
        }
        12..=14 => {
            let pat = [Spatial::HaarX, Spatial::HaarY, Spatial::HaarXY];
            0.5 * channel(None, ch) * spatial(&pat[k - 12], x, y)
        }
        _ => {
            let sign = if f < GROUP / 2 { 0.5 } else { -0.5 };
            sign * channel(None, ch) * spatial(&Spatial::HaarX, x, y)
        }
    })
}

pub fn first() -> &'static [Vec<f64>] {
    static B: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    B.get_or_init(first_basis)
}

pub fn group() -> &'static [Vec<f64>] {
    static B: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    B.get_or_init(group_basis)
}
