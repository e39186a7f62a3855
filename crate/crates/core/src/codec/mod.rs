//! Fixed linear video codec with the latent-grid shape of a causal 3-D VAE:
//! the first frame alone, then groups of four frames, each 8×8 pixel block
//! projected onto 16 orthonormal basis vectors.
//!
//! The codec is linear in the signal `s = (pixel − 128) / 128`, so the zero
//! latent decodes to mid-gray. Because the basis is orthonormal, decode is
//! the transpose of encode and `encode(decode(z)) = z` exactly (up to
//! rounding).

pub mod basis;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::render::{MaskVideo, RgbFrame, RgbVideo};

use basis::offset;
pub use basis::{BLOCK, CHANNELS, GROUP};

pub const MID_GRAY: f64 = 128.0;
pub const SIGNAL_SCALE: f64 = 128.0;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("latent file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// RGB video held as `f64` pixel values (nominally 0..=255, unclamped),
/// row-major `(t, y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatVideo {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FloatVideo {
    pub fn filled(frames: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![value; frames * height * width * 3],
        }
    }

    pub fn from_rgb(v: &RgbVideo) -> Self {
        let (height, width) = v.frames.first().map_or((0, 0), |f| (f.height, f.width));
        Self {
            frames: v.len(),
            height,
            width,
            data: v.frames.iter().flat_map(|f| f.pixels.iter().map(|&p| p as f64)).collect(),
        }
    }

    /// Masks are lifted to three channels: set pixels 255, clear pixels 0.
    pub fn from_masks(m: &MaskVideo) -> Self {
        let (height, width) = m.frames.first().map_or((0, 0), |f| (f.height, f.width));
        Self {
            frames: m.len(),
            height,
            width,
            data: m
                .frames
                .iter()
                .flat_map(|f| f.bits.iter().flat_map(|&b| [if b { 255.0 } else { 0.0 }; 3]))
                .collect(),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.frame_len()..(t + 1) * self.frame_len()]
    }

    /// Rounds and clamps to 8 bits.
    pub fn to_rgb_frame(&self, t: usize) -> RgbFrame {
        RgbFrame {
            width: self.width,
            height: self.height,
            pixels: self.frame(t).iter().map(|&p| p.round().clamp(0.0, 255.0) as u8).collect(),
        }
    }

    pub fn to_rgb(&self) -> RgbVideo {
        RgbVideo {
            frames: (0..self.frames).map(|t| self.to_rgb_frame(t)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Encoded,
    Predicted,
}

/// Row-major `(t, y, x, c)` latent tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
    pub provenance: Provenance,
}

impl LatentVideo {
    pub fn zeros(t: usize, h: usize, w: usize) -> Self {
        Self {
            t,
            h,
            w,
            c: CHANNELS,
            data: vec![0.0; t * h * w * CHANNELS],
            provenance: Provenance::Encoded,
        }
    }

    pub fn from_data(t: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self, CodecError> {
        if data.len() != t * h * w * CHANNELS {
            return Err(CodecError::Shape(format!(
                "{} values for a {t}×{h}×{w}×{CHANNELS} latent",
                data.len()
            )));
        }
        Ok(Self {
            t,
            h,
            w,
            c: CHANNELS,
            data,
            provenance: Provenance::Encoded,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.t, self.h, self.w, self.c]
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.frame_len()..(t + 1) * self.frame_len()]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn index(&self, t: usize, y: usize, x: usize, k: usize) -> usize {
        ((t * self.h + y) * self.w + x) * self.c + k
    }

    pub fn cell(&self, t: usize, y: usize, x: usize) -> &[f64] {
        let i = self.index(t, y, x, 0);
        &self.data[i..i + self.c]
    }

    pub fn same_shape(&self, other: &LatentVideo) -> Result<(), CodecError> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(CodecError::Shape(format!("{:?} vs {:?}", self.shape(), other.shape())))
        }
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    /// Frames `range` as a new latent.
    pub fn slice_frames(&self, start: usize, end: usize) -> LatentVideo {
        let n = self.frame_len();
        LatentVideo {
            t: end - start,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data[start * n..end * n].to_vec(),
            provenance: self.provenance,
        }
    }

    /// `.lat`: four little-endian u32 `{t, h, w, c}` then `f32` values.
    pub fn write_lat<W: Write>(&self, mut w: W) -> Result<(), CodecError> {
        for d in self.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_lat<R: Read>(mut r: R) -> Result<Self, CodecError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let d: Vec<usize> = header
            .chunks(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        if d[3] != CHANNELS {
            return Err(CodecError::Format(format!("{} channels, expected {CHANNELS}", d[3])));
        }
        let n = d[0] * d[1] * d[2] * d[3];
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != 4 * n {
            return Err(CodecError::Format(format!("payload is {} bytes, expected {}", payload.len(), 4 * n)));
        }
        let data = payload
            .chunks(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_data(d[0], d[1], d[2], data)
    }
}

/// Latent frames for a `frames`-long video.
pub fn latent_frames(frames: usize) -> Result<usize, CodecError> {
    if frames == 0 || !(frames - 1).is_multiple_of(GROUP) {
        return Err(CodecError::Shape(format!("video length {frames} is not 1 mod {GROUP}")));
    }
    Ok(1 + (frames - 1) / GROUP)
}

/// Video length decoded from `t_l` latent frames.
pub fn video_frames(latent_t: usize) -> usize {
    1 + GROUP * latent_t.saturating_sub(1)
}

pub fn latent_shape(frames: usize, height: usize, width: usize) -> Result<[usize; 4], CodecError> {
    if !height.is_multiple_of(BLOCK) {
        return Err(CodecError::Shape(format!("height {height} is not divisible by {BLOCK}")));
    }
    if !width.is_multiple_of(BLOCK) {
        return Err(CodecError::Shape(format!("width {width} is not divisible by {BLOCK}")));
    }
    Ok([latent_frames(frames)?, height / BLOCK, width / BLOCK, CHANNELS])
}

/// Video frames covered by latent frame `tl`: `(first frame, count)`.
fn span(tl: usize) -> (usize, usize) {
    if tl == 0 {
        (0, 1)
    } else {
        (1 + GROUP * (tl - 1), GROUP)
    }
}

fn basis_for(tl: usize) -> &'static [Vec<f64>] {
    if tl == 0 {
        basis::first()
    } else {
        basis::group()
    }
}

/// The linear analysis map on a signal laid out like [`FloatVideo::data`].
pub fn analyze(exec: Exec, signal: &[f64], frames: usize, height: usize, width: usize) -> Result<LatentVideo, CodecError> {
    let [t, h, w, c] = latent_shape(frames, height, width)?;
    if signal.len() != frames * height * width * 3 {
        return Err(CodecError::Shape(format!("signal has {} values", signal.len())));
    }
    let rows = exec.map_range(t * h, |row| {
        let (tl, by) = (row / h, row % h);
        let (f0, nf) = span(tl);
        let b = basis_for(tl);
        let mut out = vec![0.0; w * c];
        let mut block = vec![0.0; nf * basis::FIRST_LEN];
        for bx in 0..w {
            for f in 0..nf {
                for y in 0..BLOCK {
                    let src = (((f0 + f) * height + by * BLOCK + y) * width + bx * BLOCK) * 3;
                    let dst = offset(f, y, 0, 0);
                    block[dst..dst + BLOCK * 3].copy_from_slice(&signal[src..src + BLOCK * 3]);
                }
            }
            for (k, v) in b.iter().enumerate() {
                out[bx * c + k] = v.iter().zip(&block).map(|(a, s)| a * s).sum();
            }
        }
        out
    });
    LatentVideo::from_data(t, h, w, rows.concat())
}

/// Transpose of [`analyze`]: the signal whose analysis is `z` and which lies
/// in the retained subspace.
pub fn synthesize(exec: Exec, z: &LatentVideo) -> Vec<f64> {
    let frames = video_frames(z.t);
    let (height, width) = (z.h * BLOCK, z.w * BLOCK);
    let frame_len = height * width * 3;
    // one output chunk per video frame keeps the map order-preserving
    let chunks = exec.map_range(frames, |f| {
        let tl = if f == 0 { 0 } else { 1 + (f - 1) / GROUP };
        let local = if f == 0 { 0 } else { (f - 1) % GROUP };
        let b = basis_for(tl);
        let mut out = vec![0.0; frame_len];
        for by in 0..z.h {
            for bx in 0..z.w {
                let cell = z.cell(tl, by, bx);
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        for ch in 0..3 {
                            let o = offset(local, y, x, ch);
                            let mut acc = 0.0;
                            for (k, v) in b.iter().enumerate() {
                                acc += cell[k] * v[o];
                            }
                            out[((by * BLOCK + y) * width + bx * BLOCK + x) * 3 + ch] = acc;
                        }
                    }
                }
            }
        }
        out
    });
    chunks.concat()
}

pub fn encode(video: &FloatVideo) -> Result<LatentVideo, CodecError> {
    encode_with(Exec::default(), video)
}

pub fn encode_with(exec: Exec, video: &FloatVideo) -> Result<LatentVideo, CodecError> {
    let signal: Vec<f64> = video.data.iter().map(|p| (p - MID_GRAY) / SIGNAL_SCALE).collect();
    analyze(exec, &signal, video.frames, video.height, video.width)
}

pub fn decode(z: &LatentVideo) -> Result<FloatVideo, CodecError> {
    decode_with(Exec::default(), z)
}

pub fn decode_with(exec: Exec, z: &LatentVideo) -> Result<FloatVideo, CodecError> {
    if z.c != CHANNELS || z.t == 0 || z.data.len() != z.t * z.h * z.w * z.c {
        return Err(CodecError::Shape(format!("invalid latent shape {:?}", z.shape())));
    }
    let data = synthesize(exec, z).into_iter().map(|s| MID_GRAY + SIGNAL_SCALE * s).collect();
    Ok(FloatVideo {
        frames: video_frames(z.t),
        height: z.h * BLOCK,
        width: z.w * BLOCK,
        data,
    })
}

/// Gradient with respect to `z` of a loss whose gradient with respect to the
/// decoded pixels is `grad_pixels`.
pub fn decode_adjoint(exec: Exec, grad_pixels: &FloatVideo) -> Result<LatentVideo, CodecError> {
    let g: Vec<f64> = grad_pixels.data.iter().map(|v| v * SIGNAL_SCALE).collect();
    analyze(exec, &g, grad_pixels.frames, grad_pixels.height, grad_pixels.width)
}

pub fn encode_rgb(video: &RgbVideo) -> Result<LatentVideo, CodecError> {
    encode(&FloatVideo::from_rgb(video))
}

pub fn encode_masks(masks: &MaskVideo) -> Result<LatentVideo, CodecError> {
    encode(&FloatVideo::from_masks(masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_latent(t: usize, h: usize, w: usize, seed: u64) -> LatentVideo {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t * h * w * CHANNELS;
        LatentVideo::from_data(t, h, w, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shape_law() {
        assert_eq!(latent_shape(25, 480, 720).unwrap(), [7, 60, 90, 16]);
        assert_eq!(latent_shape(1, 8, 8).unwrap(), [1, 1, 1, 16]);
        assert!(matches!(latent_shape(24, 480, 720), Err(CodecError::Shape(m)) if m.contains("1 mod 4")));
        assert!(matches!(latent_shape(25, 484, 720), Err(CodecError::Shape(m)) if m.contains("height")));
        assert!(matches!(latent_shape(25, 480, 721), Err(CodecError::Shape(m)) if m.contains("width")));
    }

    #[test]
    fn zero_signal_encodes_to_zero_and_zero_decodes_to_gray() {
        let gray = FloatVideo::filled(5, 16, 16, MID_GRAY);
        assert!(encode(&gray).unwrap().data.iter().all(|&v| v == 0.0));
        let back = decode(&LatentVideo::zeros(2, 2, 2)).unwrap();
        assert!(back.data.iter().all(|&v| v == MID_GRAY));
    }

    #[test]
    fn constant_video_round_trips() {
        let v = FloatVideo::filled(9, 16, 24, 37.0);
        let back = decode(&encode(&v).unwrap()).unwrap();
        for (a, b) in back.data.iter().zip(&v.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn latent_round_trip_is_identity() {
        let z = random_latent(3, 4, 5, 1);
        let back = encode(&decode(&z).unwrap()).unwrap();
        for (a, b) in back.data.iter().zip(&z.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_is_linear_in_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5 * 16 * 16 * 3;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (p, q) = (0.7, -1.3);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| p * x + q * y).collect();
        let za = analyze(Exec::Sequential, &a, 5, 16, 16).unwrap();
        let zb = analyze(Exec::Sequential, &b, 5, 16, 16).unwrap();
        let zm = analyze(Exec::Sequential, &mix, 5, 16, 16).unwrap();
        for i in 0..zm.data.len() {
            assert!((zm.data[i] - (p * za.data[i] + q * zb.data[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_adjoint_matches_inner_products() {
        // <decode(z) - gray, g> = <z, decode_adjoint(g)>
        let z = random_latent(2, 2, 3, 3);
        let dec = decode(&z).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = FloatVideo {
            data: (0..dec.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            ..dec.clone()
        };
        let lhs: f64 = dec.data.iter().zip(&g.data).map(|(d, g)| (d - MID_GRAY) * g).sum();
        let adj = decode_adjoint(Exec::Sequential, &g).unwrap();
        let rhs: f64 = z.data.iter().zip(&adj.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn lat_file_round_trip() {
        let z = random_latent(2, 3, 4, 5);
        let mut buf = Vec::new();
        z.write_lat(&mut buf).unwrap();
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 4 * z.data.len());
        let back = LatentVideo::read_lat(&buf[..]).unwrap();
        for (a, b) in back.data.iter().zip(&z.data) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(LatentVideo::read_lat(&buf[..buf.len() - 4]).is_err());
    }

    #[test]
    fn parallel_matches_sequential() {
        let z = random_latent(3, 2, 2, 6);
        assert_eq!(synthesize(Exec::Parallel, &z), synthesize(Exec::Sequential, &z));
    }
}
